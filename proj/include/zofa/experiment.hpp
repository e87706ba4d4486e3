#pragma once

#include <cstdint>
#include <string>

#include "zofa/data.hpp"
#include "zofa/engine.hpp"
#include "zofa/gradients.hpp"
#include "zofa/network.hpp"

namespace zofa {

// Everything needed to rebuild a fixture model and its corrupted stream.
struct ExperimentSpec {
  TaskSpec task;
  MlpSpec model;
  PretrainOptions pretrain;
  int severity = 5;
  std::size_t samples_per_domain = 2000;
  std::string domains = "preset15";
  std::uint64_t seed = 1;  // drives task, init, domain and order seeds
};

// The desk-scale preset used by the examples and the acceptance suite.
ExperimentSpec desk_experiment(std::uint64_t seed);

// Adaptation settings tuned for the desk preset (paper defaults are the
// AdaptConfig defaults).
AdaptConfig desk_adapt_config(Mode mode, std::uint64_t seed);

struct PreparedModel {
  Network net;
  Dataset test;
  double source_accuracy = 0.0;
};

// Generates the task, initializes and pretrains the MLP.
PreparedModel prepare_model(const ExperimentSpec& spec);

// Derived sub-seeds so that one run seed fixes the whole experiment.
std::uint64_t domain_seed(const ExperimentSpec& spec);
std::uint64_t order_seed(const ExperimentSpec& spec);

StreamProtocol make_protocol(const ExperimentSpec& spec, std::size_t base_size, ResetPolicy reset);

RunReport run_experiment(const Network& net, const Dataset& test, const ExperimentSpec& spec,
                         const AdaptConfig& cfg, ResetPolicy reset);

}  // namespace zofa
