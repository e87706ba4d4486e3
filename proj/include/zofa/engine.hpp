#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "zofa/data.hpp"
#include "zofa/network.hpp"
#include "zofa/objectives.hpp"
#include "zofa/zo_optim.hpp"

namespace zofa {

enum class Mode {
  eva0,
  eva0_dagger,             // lambda forced to 0, no source statistics needed
  one_sided_baseline,      // clean inference + one batch-shared perturbed forward
  batch_shared_baseline,   // two-sided with one perturbation shared by the batch
  naive_entropy_zo,        // plain entropy, sample-wise two-sided, no anchor control
  bp_oracle_tent,          // entropy descent with exact gradients
  no_adapt,
};

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

// On/off switches of the four method components, for ablations. They refine
// the mode; e.g. alignment=false behaves like lambda = 0.
struct Components {
  bool sr_entropy = true;     // shortcut-resistant entropy (else plain entropy)
  bool alignment = true;      // sample-wise feature alignment term
  bool anchor_guided = true;  // anchor-guided perturbations, relaxation and balancing
  bool samplewise = true;     // independent z per sample (else batch-shared)
};

struct AdaptConfig {
  Mode mode = Mode::eva0;
  double mu = 0.06;
  double eta = 0.002;
  double gamma = 0.001;
  double lambda = 500.0;
  double rho = 0.999;
  double center_ema = 0.9;
  double moment_ema = 0.9;
  double anchor_ema = 0.0;
  std::size_t k = 1;
  std::size_t batch_size = 64;
  bool balance_on = true;
  Components components;
  std::uint64_t seed = 0;
  bool diagnostics = false;  // compute cosine(g_hat, backprop oracle) each step

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

// Mutable adaptation-time state owned by the engine.
struct OnlineState {
  OnlineCenter center;
  TargetMoments moments;
  AnchorState anchor;
  BalanceState balance;
  ParamVector theta0;         // adapted parameters when the state was created
  std::uint64_t step = 0;
  std::uint64_t stream_salt = 0;
};

OnlineState initial_state(const Network& net, const AdaptConfig& cfg);

struct Batch {
  Tensor x;
  std::vector<int> labels;  // optional; only used for bookkeeping
};

struct StepRecord {
  std::uint64_t step = 0;
  std::uint64_t step_seed = 0;
  std::string domain;
  std::vector<int> predicted;
  std::vector<char> correct;
  std::vector<double> loss_plus;
  std::vector<double> loss_minus;  // clean-model loss for the one-sided baseline
  double update_norm = 0.0;
  double drift = 0.0;
  double mean_logit_norm = 0.0;
  double mean_sr_entropy = 0.0;
  double mean_entropy = 0.0;
  double cosine = std::numeric_limits<double>::quiet_NaN();
  std::size_t forwards = 0;
  std::size_t excluded = 0;
  bool clamp_triggered = false;
  std::string warning;
};

struct StepOutcome {
  Tensor predictions;  // [B, C]
  Network net;
  OnlineState state;
  StepRecord record;
};

// One online step: perturbed forwards, inference, loss, update, state EMAs.
StepOutcome adapt_step(const Network& net, const OnlineState& state, const Batch& batch, const AdaptConfig& cfg);

struct AlignmentProbe {
  double cosine = 0.0;
  bool degenerate = false;  // a zero-norm vector; cosine reported as 0
};

double cosine_similarity(std::span<const double> a, std::span<const double> b, bool* degenerate = nullptr);

// Cosine between the configured zeroth-order estimate and the backprop
// gradient of the same clean objective. Does not modify anything.
AlignmentProbe gradient_alignment_probe(const Network& net, const OnlineState& state, const Batch& batch,
                                        const AdaptConfig& cfg);

struct DomainResult {
  std::string name;
  std::size_t samples = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double start_drift = 0.0;
  double end_drift = 0.0;
};

struct RunReport {
  ResetPolicy reset = ResetPolicy::single_domain;
  std::vector<StepRecord> steps;
  std::vector<DomainResult> domains;
  double average_accuracy = 0.0;
  double final_drift = 0.0;
  std::size_t total_forwards = 0;
};

// Streams every domain of the protocol through adapt_step. Single-domain
// protocols restart from `net0` and a fresh state at each domain boundary.
RunReport run_stream(const Network& net0, const Dataset& base, const StreamProtocol& protocol,
                     const AdaptConfig& cfg);

// Accuracy of `net` on `data` with one clean forward per sample.
double static_accuracy(const Network& net, const Dataset& data);

}  // namespace zofa
