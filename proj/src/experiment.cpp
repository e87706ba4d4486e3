#include "zofa/experiment.hpp"

namespace zofa {

ExperimentSpec desk_experiment(std::uint64_t seed) {
  ExperimentSpec spec;
  spec.seed = seed;
  spec.task.seed = seed;
  spec.pretrain.steps = 1500;
  spec.pretrain.lr = 0.05;
  spec.pretrain.batch_size = 128;
  spec.pretrain.seed = 1;
  return spec;
}

AdaptConfig desk_adapt_config(Mode mode, std::uint64_t seed) {
  AdaptConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.eta = 0.05;
  cfg.mu = 0.06;
  cfg.lambda = 1.0;
  cfg.rho = 0.1;
  cfg.k = 4;
  cfg.gamma = 0.001;
  cfg.batch_size = 16;
  return cfg;
}

PreparedModel prepare_model(const ExperimentSpec& spec) {
  TaskSpec task = spec.task;
  task.seed = spec.seed;
  auto [train, test] = make_source_task(task);
  MlpSpec model = spec.model;
  model.input = task.dim;
  model.classes = task.classes;
  PreparedModel out;
  out.net = pretrain_source(make_mlp(model, spec.seed), train, spec.pretrain);
  out.source_accuracy = static_accuracy(out.net, test);
  out.test = std::move(test);
  return out;
}

std::uint64_t domain_seed(const ExperimentSpec& spec) { return spec.seed * 7 + 3; }
std::uint64_t order_seed(const ExperimentSpec& spec) { return spec.seed; }

StreamProtocol make_protocol(const ExperimentSpec& spec, std::size_t base_size, ResetPolicy reset) {
  const auto domains = parse_domain_list(spec.domains, spec.severity, domain_seed(spec));
  return build_protocol(domains, base_size, spec.samples_per_domain, order_seed(spec), reset);
}

RunReport run_experiment(const Network& net, const Dataset& test, const ExperimentSpec& spec,
                         const AdaptConfig& cfg, ResetPolicy reset) {
  return run_stream(net, test, make_protocol(spec, test.size(), reset), cfg);
}

}  // namespace zofa
