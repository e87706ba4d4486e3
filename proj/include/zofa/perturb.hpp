#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "zofa/network.hpp"

namespace zofa {

enum class PerturbationKind { gaussian, anchor_guided };

// Seed-addressed description of one sample's perturbation. The direction is
// never stored; every tensor slice is regenerated from
// (step_seed, sample_index, tensor_id, kind) on demand.
struct PerturbationSpec {
  std::uint64_t step_seed = 0;
  std::uint64_t sample_index = 0;
  double scale = 0.06;
  PerturbationKind kind = PerturbationKind::gaussian;
  // Normalized anchor direction over the adapted layout (anchor-guided only).
  std::shared_ptr<const ParamVector> anchor_direction;
};

// Tracks how many perturbation elements are alive at once.
class PerturbationMeter {
 public:
  void acquire(std::size_t n) {
    live_ += n;
    if (live_ > peak_) peak_ = live_;
    total_ += n;
  }
  void release(std::size_t n) { live_ -= n; }
  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }
  std::size_t total() const { return total_; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::size_t total_ = 0;
};

// Regenerates the perturbation of one adapted tensor. Gaussian: i.i.d. N(0,1).
// Anchor-guided: anchor_direction slice times r, r i.i.d. Uniform(0, 2).
// Throws InputError if the tensor is not adapted or `shape` disagrees.
Tensor draw_layer_perturbation(const PerturbationSpec& spec, const ParamLayout& adapted, std::size_t tensor_id,
                               const std::vector<std::size_t>& shape);

// Writes the slot's values into `out` (size == slot.size).
void draw_slot(const PerturbationSpec& spec, const TensorSlot& slot, std::span<double> out);

// Full direction over the adapted layout; used by estimators that need z explicitly.
ParamVector materialize_perturbation(const PerturbationSpec& spec, const ParamLayout& adapted);

struct PerturbedOutputs {
  Tensor logits_plus;     // [B, C]
  Tensor features_plus;   // [B, F]
  Tensor logits_minus;    // empty for one-sided passes
  Tensor features_minus;
  std::vector<char> plus_finite;
  std::vector<char> minus_finite;
};

// Evaluates every sample i at psi + mu z_i and psi - mu z_i. Layers ahead of
// the first adapted layer run once for the whole batch; afterwards each
// adapted layer regenerates its batch of perturbations, uses them for both
// signs, and drops them. The network is never modified. Counts 2 forwards
// per sample.
PerturbedOutputs symmetric_forward(const Network& net, const ParamLayout& adapted, const Tensor& x,
                                   std::span<const PerturbationSpec> specs, ForwardCounter* counter = nullptr,
                                   PerturbationMeter* meter = nullptr);

// psi + mu z_i only (one forward per sample).
PerturbedOutputs positive_forward(const Network& net, const ParamLayout& adapted, const Tensor& x,
                                  std::span<const PerturbationSpec> specs, ForwardCounter* counter = nullptr,
                                  PerturbationMeter* meter = nullptr);

// (1/B) sum_i scalars[i] * z_i, regenerated one adapted tensor at a time and
// reduced in sample order.
ParamVector accumulate_update(const ParamLayout& adapted, std::span<const PerturbationSpec> specs,
                              std::span<const double> scalars, PerturbationMeter* meter = nullptr);

}  // namespace zofa
