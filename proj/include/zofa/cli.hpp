#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "zofa/config.hpp"
#include "zofa/engine.hpp"
#include "zofa/experiment.hpp"

namespace zofa::cli {

enum ExitCode : int {
  exit_ok = 0,
  exit_internal = 1,
  exit_config = 2,     // bad flags, bad or unknown config keys, inconsistent settings
  exit_io = 3,         // unreadable/unwritable files, malformed model or dataset files
  exit_numerical = 4,  // divergence, non-finite values
  exit_input = 5,      // shape mismatches and unsupported operations
};

struct RunConfig {
  std::uint64_t seed = 1;
  ExperimentSpec experiment = desk_experiment(1);
  AdaptConfig adapt = desk_adapt_config(Mode::eva0, 1);
  std::filesystem::path out = "runs";
  std::string run_id;  // empty: derived from the command and settings
  std::string model;   // ZOFA1 file; empty: pretrain in memory
  ResetPolicy protocol = ResetPolicy::single_domain;
  int quantize_bits = 0;  // 0 = full precision
  std::vector<std::uint64_t> seeds;  // sweep seeds; empty: {seed}

  std::string sweep_axis = "components";
  std::vector<ConfigValue> sweep_values;  // empty: the axis' default grid
  std::vector<double> sweep_etas = {0.02, 0.05, 0.1};

  std::size_t probe_batches = 200;
  std::size_t probe_trials = 100000;
  std::vector<double> probe_shortcut = {1.0, 5.0, 10.0};
  double probe_noise = 0.0;

  // Copies `seed` into the experiment and adaptation settings.
  void sync_seed();
};

// Every accepted configuration key, as "table.key".
std::vector<std::string> config_keys();

// Applies a document; unknown keys and ill-typed values throw ConfigError.
void apply_config(RunConfig& cfg, const ConfigDoc& doc);

// Environment layer: ZOFA_<TABLE>_<KEY> (upper case, '-' as '_'), e.g.
// ZOFA_ADAPT_ETA=0.1. ZOFA_THREADS is reserved for worker parallelism; any
// other ZOFA_ variable that matches no key is rejected.
ConfigDoc environment_overrides(const std::map<std::string, std::string>& env);
std::map<std::string, std::string> current_environment();

// Worker count: ZOFA_THREADS when set (must be >= 1), else hardware threads.
std::size_t worker_limit(const std::map<std::string, std::string>& env);

std::string default_run_id(const std::string& command, const RunConfig& cfg);

// CSV of step records, one row per batch.
std::string trace_csv(const RunReport& report);

// Entry point of the `zofa` executable. Never throws.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace zofa::cli
