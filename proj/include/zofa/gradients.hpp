#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "zofa/dataset.hpp"
#include "zofa/network.hpp"
#include "zofa/objectives.hpp"

namespace zofa {

enum class LossKind { cross_entropy, entropy, sr_entropy };

// Batch objective evaluated on clean forwards. For sr-entropy the per-sample
// reference norms are held constant; when empty they are taken from the
// logits at the point of evaluation (and still treated as constants by the
// gradient). The alignment term is added when lambda > 0.
struct LossSpec {
  LossKind kind = LossKind::entropy;
  std::vector<int> labels;
  std::vector<double> center;
  std::vector<double> reference_norms;
  double lambda = 0.0;
  TargetMoments moments;
  std::optional<SourceStats> source;
  double rho = 0.999;
};

// Returns a copy of `spec` with reference norms fixed at `net`'s clean logits.
LossSpec freeze_reference_norms(const Network& net, const Tensor& x, LossSpec spec);

// Mean loss over the batch.
double batch_loss(const Network& net, const Tensor& x, const LossSpec& spec);

// Exact gradient of batch_loss with respect to every parameter (canonical
// all-parameter ordering). Throws CapabilityError for unknown layer kinds.
ParamVector grad_backprop(const Network& net, const Tensor& x, const LossSpec& spec, double* loss = nullptr);

// Restricts an all-parameter vector to `selection`.
ParamVector select_params(const Network& net, const ParamVector& all, ParamSelection selection);

using NetworkLoss = std::function<double(const Network&)>;

inline constexpr std::size_t kFiniteDiffMaxParams = 10000;

// Central differences with step 1e-5 * max(1, |theta_i|) over the selected
// parameters. Throws NumericalError naming the coordinate on a non-finite probe.
ParamVector grad_finite_diff(const Network& net, const NetworkLoss& loss, ParamSelection subset);

// Same rule on a plain parameter vector.
std::vector<double> grad_finite_diff(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> theta);

struct PretrainOptions {
  std::size_t steps = 200;
  double lr = 0.1;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
};

// Per-dimension population statistics of the tapped features over x.
SourceStats compute_source_stats(const Network& net, const Tensor& x);

// Cross-entropy SGD on every parameter; returns the trained network with
// source statistics attached. Throws NumericalError("... step N") on divergence.
Network pretrain_source(const Network& net, const Dataset& data, const PretrainOptions& options);

}  // namespace zofa
