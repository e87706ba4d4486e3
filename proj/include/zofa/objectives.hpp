#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "zofa/network.hpp"
#include "zofa/tensor.hpp"

namespace zofa {

// Norm guard in the rescaling of shortcut-resistant entropy.
inline constexpr double kSrNormEpsilon = 1e-12;

// EMA of symmetric-average logits, subtracted before the softmax.
struct OnlineCenter {
  std::vector<double> c;  // empty until the first update
  double ema_factor = 0.9;

  bool initialized() const { return !c.empty(); }
};

// Online first (m) and second (q) moments of the tapped features.
struct TargetMoments {
  std::vector<double> m;
  std::vector<double> q;
  double ema_factor = 0.9;

  bool initialized() const { return !m.empty(); }
};

std::vector<double> softmax(std::span<const double> logits);
double entropy(std::span<const double> logits);

// s(o) = r_ref / (||o|| + eps) * o - center. Empty center is the zero vector.
std::vector<double> sr_logits(std::span<const double> o, double reference_norm, std::span<const double> center);

// Entropy of softmax(s(o)) with r_ref = ||o_bar||.
double sr_entropy(std::span<const double> o, std::span<const double> o_bar, const OnlineCenter& center);
double sr_entropy_at_norm(std::span<const double> o, double reference_norm, std::span<const double> center);

OnlineCenter update_center(OnlineCenter center, const Tensor& o_bar_batch);

// Sample-wise alignment of hypothetically updated moments to the source
// statistics. When the variance reconstruction goes negative it is clamped
// to zero and *clamped (if given) is set.
double swa_loss(std::span<const double> h, const TargetMoments& moments, const SourceStats& src, double rho,
                bool* clamped = nullptr);

TargetMoments update_moments(TargetMoments moments, std::span<const double> h_bar, std::span<const double> h_sq_bar);

// E^SR(o) + lambda * l_SWA(h). `src` may be null only when lambda == 0.
double combined_loss(std::span<const double> o, std::span<const double> o_bar, std::span<const double> h,
                     const OnlineCenter& center, const TargetMoments& moments, const SourceStats* src, double rho,
                     double lambda);

// Value-and-gradient forms used by the backprop oracle. Each writes the
// gradient with respect to its first argument into `grad` and returns the value.
double cross_entropy_grad(std::span<const double> logits, int label, std::span<double> grad);
double entropy_grad(std::span<const double> logits, std::span<double> grad);
// r_ref is treated as a constant.
double sr_entropy_grad(std::span<const double> o, double reference_norm, std::span<const double> center,
                       std::span<double> grad);
double swa_grad(std::span<const double> h, const TargetMoments& moments, const SourceStats& src, double rho,
                std::span<double> grad);

}  // namespace zofa
