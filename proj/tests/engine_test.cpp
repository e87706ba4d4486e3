#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "zofa/engine.hpp"
#include "zofa/error.hpp"
#include "zofa/gradients.hpp"

using namespace zofa;

namespace {

struct Fixture {
  Network net;
  Dataset test;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    TaskSpec task;
    task.seed = 4;
    task.dim = 8;
    task.classes = 4;
    task.n_train = 400;
    task.n_test = 192;
    auto [train, test] = make_source_task(task);
    MlpSpec m;
    m.input = task.dim;
    m.classes = task.classes;
    m.hidden = 16;
    m.depth = 1;
    PretrainOptions opt;
    opt.steps = 200;
    opt.lr = 0.05;
    opt.batch_size = 64;
    opt.seed = 1;
    return Fixture{pretrain_source(make_mlp(m, 2), train, opt), test};
  }();
  return f;
}

AdaptConfig small_config(Mode mode) {
  AdaptConfig cfg;
  cfg.mode = mode;
  cfg.eta = 0.05;
  cfg.lambda = 1.0;
  cfg.rho = 0.1;
  cfg.k = 2;
  cfg.batch_size = 16;
  cfg.seed = 3;
  return cfg;
}

Batch first_batch(std::size_t b, int severity = 5) {
  const Dataset d = corrupt(fixture().test, {CorruptionKind::gauss_noise, severity, 9});
  std::vector<std::size_t> idx(b);
  for (std::size_t i = 0; i < b; ++i) idx[i] = i;
  const Dataset s = d.subset(idx);
  return {s.x, s.y};
}

StreamProtocol protocol(std::size_t domains, ResetPolicy reset) {
  std::vector<CorruptionSpec> specs;
  const CorruptionKind kinds[] = {CorruptionKind::gauss_noise, CorruptionKind::feature_scale,
                                  CorruptionKind::mask_dropout};
  for (std::size_t i = 0; i < domains; ++i) specs.push_back({kinds[i % 3], 5, 20 + i});
  return build_protocol(specs, fixture().test.size(), 96, 5, reset);
}

bool same_reports(const RunReport& a, const RunReport& b) {
  if (a.steps.size() != b.steps.size() || a.domains.size() != b.domains.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const auto &x = a.steps[i], &y = b.steps[i];
    if (x.predicted != y.predicted || x.loss_plus != y.loss_plus || x.loss_minus != y.loss_minus ||
        x.drift != y.drift || x.update_norm != y.update_norm || x.step_seed != y.step_seed)
      return false;
  }
  return a.average_accuracy == b.average_accuracy && a.final_drift == b.final_drift;
}

}  // namespace

TEST(AdaptConfig, Validation) {
  AdaptConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.k = cfg.batch_size + 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = AdaptConfig{};
  cfg.mu = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = AdaptConfig{};
  cfg.gamma = 2.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(mode_from_string("sgd"), ConfigError);
  EXPECT_EQ(mode_from_string(to_string(Mode::eva0_dagger)), Mode::eva0_dagger);
}

TEST(AdaptStep, NoAdaptLeavesEverythingAlone) {
  const Network& net = fixture().net;
  const AdaptConfig cfg = small_config(Mode::no_adapt);
  const auto out = adapt_step(net, initial_state(net, cfg), first_batch(16), cfg);
  EXPECT_EQ(pack(out.net, ParamSelection::all), pack(net, ParamSelection::all));
  EXPECT_EQ(out.record.forwards, 16u);
  EXPECT_EQ(out.record.drift, 0.0);
}

TEST(AdaptStep, ZeroRateAndRelaxationKeepParameters) {
  const Network& net = fixture().net;
  AdaptConfig cfg = small_config(Mode::eva0);
  cfg.eta = 0.0;
  cfg.gamma = 0.0;
  const auto out = adapt_step(net, initial_state(net, cfg), first_batch(16), cfg);
  EXPECT_EQ(pack(out.net, ParamSelection::all), pack(net, ParamSelection::all));
  EXPECT_EQ(out.record.drift, 0.0);
}

TEST(AdaptStep, ForwardBudget) {
  const Network& net = fixture().net;
  for (Mode m : {Mode::eva0, Mode::eva0_dagger, Mode::one_sided_baseline, Mode::batch_shared_baseline,
                 Mode::naive_entropy_zo}) {
    const AdaptConfig cfg = small_config(m);
    EXPECT_EQ(adapt_step(net, initial_state(net, cfg), first_batch(16), cfg).record.forwards, 32u) << to_string(m);
  }
  for (Mode m : {Mode::bp_oracle_tent, Mode::no_adapt}) {
    const AdaptConfig cfg = small_config(m);
    EXPECT_EQ(adapt_step(net, initial_state(net, cfg), first_batch(16), cfg).record.forwards, 16u) << to_string(m);
  }
}

TEST(AdaptStep, UpdatesOnlyAdaptedParameters) {
  const Network& net = fixture().net;
  const AdaptConfig cfg = small_config(Mode::eva0);
  const auto out = adapt_step(net, initial_state(net, cfg), first_batch(16), cfg);
  EXPECT_NE(pack(out.net), pack(net));
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (std::size_t p = 0; p < net.layers[l].params.size(); ++p)
      if (!net.layers[l].params[p].adapted)
        EXPECT_EQ(out.net.layers[l].params[p].value, net.layers[l].params[p].value);
  EXPECT_GT(out.record.update_norm, 0.0);
  EXPECT_EQ(out.state.step, 1u);
  EXPECT_TRUE(out.state.center.initialized());
  EXPECT_TRUE(out.state.moments.initialized());
}

TEST(AdaptStep, AlignmentNeedsSourceStatistics) {
  Network net = fixture().net;
  net.source_stats.reset();
  const AdaptConfig cfg = small_config(Mode::eva0);
  EXPECT_THROW(adapt_step(net, initial_state(net, cfg), first_batch(16), cfg), ConfigError);
  const AdaptConfig dagger = small_config(Mode::eva0_dagger);
  EXPECT_NO_THROW(adapt_step(net, initial_state(net, dagger), first_batch(16), dagger));
}

TEST(AdaptStep, NonFiniteBatchFallsBackToCleanModel) {
  const Network& net = fixture().net;
  const AdaptConfig cfg = small_config(Mode::eva0);
  Batch b = first_batch(4);
  for (double& v : b.x.values()) v = std::numeric_limits<double>::quiet_NaN();
  const auto out = adapt_step(net, initial_state(net, cfg), b, cfg);
  EXPECT_EQ(out.record.excluded, 4u);
  EXPECT_FALSE(out.record.warning.empty());
  EXPECT_EQ(pack(out.net, ParamSelection::all), pack(net, ParamSelection::all));
}

TEST(RunStream, Deterministic) {
  const auto& f = fixture();
  const AdaptConfig cfg = small_config(Mode::eva0);
  const auto a = run_stream(f.net, f.test, protocol(2, ResetPolicy::continual), cfg);
  const auto b = run_stream(f.net, f.test, protocol(2, ResetPolicy::continual), cfg);
  EXPECT_TRUE(same_reports(a, b));
  EXPECT_EQ(a.total_forwards, 2u * 2u * 96u);
}

TEST(RunStream, OneDomainSameUnderBothProtocols) {
  const auto& f = fixture();
  const AdaptConfig cfg = small_config(Mode::eva0);
  EXPECT_TRUE(same_reports(run_stream(f.net, f.test, protocol(1, ResetPolicy::single_domain), cfg),
                           run_stream(f.net, f.test, protocol(1, ResetPolicy::continual), cfg)));
}

TEST(RunStream, SingleDomainRestartsEachDomain) {
  const auto& f = fixture();
  const AdaptConfig cfg = small_config(Mode::eva0);
  const auto single = run_stream(f.net, f.test, protocol(3, ResetPolicy::single_domain), cfg);
  const auto continual = run_stream(f.net, f.test, protocol(3, ResetPolicy::continual), cfg);
  for (const auto& d : single.domains) EXPECT_EQ(d.start_drift, 0.0);
  EXPECT_GT(continual.domains[1].start_drift, 0.0);
  EXPECT_EQ(single.domains[0].accuracy, continual.domains[0].accuracy);
}

TEST(RunStream, NoAdaptMatchesStaticAccuracy) {
  const auto& f = fixture();
  const auto p = protocol(3, ResetPolicy::continual);
  const auto report = run_stream(f.net, f.test, p, small_config(Mode::no_adapt));
  for (std::size_t i = 0; i < p.domains.size(); ++i) {
    const Dataset d = corrupt(f.test, p.domains[i].corruption).subset(p.domains[i].order);
    EXPECT_EQ(report.domains[i].accuracy, static_accuracy(f.net, d));
  }
  EXPECT_EQ(report.final_drift, 0.0);
}

TEST(RunStream, PartialFinalBatch) {
  const auto& f = fixture();
  AdaptConfig cfg = small_config(Mode::eva0);
  cfg.batch_size = 40;
  cfg.k = 40;
  const auto report = run_stream(f.net, f.test, protocol(1, ResetPolicy::continual), cfg);
  ASSERT_EQ(report.steps.size(), 3u);
  EXPECT_EQ(report.steps.back().predicted.size(), 16u);
  EXPECT_EQ(report.domains[0].samples, 96u);
}

TEST(Cosine, EdgeCases) {
  bool degenerate = false;
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1.0, 2.0}, std::vector<double>{2.0, 4.0}, &degenerate), 1.0, 1e-15);
  EXPECT_FALSE(degenerate);
  EXPECT_NEAR(cosine_similarity(std::vector<double>{1.0, 0.0}, std::vector<double>{-3.0, 0.0}), -1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0}, &degenerate), 0.0);
  EXPECT_TRUE(degenerate);
}

TEST(AlignmentProbe, SampleWiseBeatsSharedOnAverage) {
  const Network& net = fixture().net;
  const AdaptConfig cfg = small_config(Mode::eva0_dagger);
  AdaptConfig shared = cfg;
  shared.components.samplewise = false;
  const Batch b = first_batch(16);
  double diff = 0.0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    OnlineState st = initial_state(net, cfg);
    st.step = i;
    diff += std::abs(gradient_alignment_probe(net, st, b, cfg).cosine) -
            std::abs(gradient_alignment_probe(net, st, b, shared).cosine);
  }
  EXPECT_GT(diff, 0.0);
  EXPECT_THROW(gradient_alignment_probe(net, initial_state(net, cfg), b, small_config(Mode::no_adapt)), ConfigError);
}

TEST(AlignmentProbe, DoesNotModifyInputs) {
  const Network& net = fixture().net;
  const AdaptConfig cfg = small_config(Mode::eva0);
  const OnlineState st = initial_state(net, cfg);
  const auto before = pack(net, ParamSelection::all);
  const auto a = gradient_alignment_probe(net, st, first_batch(16), cfg);
  EXPECT_EQ(pack(net, ParamSelection::all), before);
  EXPECT_EQ(a.cosine, gradient_alignment_probe(net, st, first_batch(16), cfg).cosine);
}
