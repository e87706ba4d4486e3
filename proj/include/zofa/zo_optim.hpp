#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "zofa/network.hpp"
#include "zofa/perturb.hpp"

namespace zofa {

// ((loss_plus - loss_zero) / mu) z
ParamVector spsa_one_sided(double loss_plus, double loss_zero, double mu, std::span<const double> z,
                           std::string_view source = "one-sided");

// ((loss_plus - loss_minus) / (2 mu)) z
ParamVector spsa_two_sided(double loss_plus, double loss_minus, double mu, std::span<const double> z,
                           std::string_view source = "two-sided");

// Batch mean of per-sample two-sided estimates, each along its own z_i.
ParamVector eva_gradient(const ParamLayout& adapted, std::span<const PerturbationSpec> specs,
                         std::span<const double> loss_plus, std::span<const double> loss_minus, double mu,
                         PerturbationMeter* meter = nullptr);

// Exactly k of B positions are anchor-guided: the first k entries of a
// permutation keyed by step_seed.
std::vector<PerturbationKind> sample_perturbation_kinds(std::size_t batch, std::size_t k, std::uint64_t step_seed);

struct AnchorState {
  ParamVector theta_anchor;
  double ema_rate = 0.0;  // m; 0 keeps the anchor fixed
  double gamma = 0.001;
  double delta = 1e-8;
};

// E||u|| for u ~ N(0, I_n): sqrt(2) Gamma((n+1)/2) / Gamma(n/2).
double expected_gaussian_norm(std::size_t n);

// (E||u|| / (||d|| + delta)) d with d = theta_anchor - theta.
ParamVector anchor_direction(const ParamVector& theta, const AnchorState& anchor);

ParamVector sgd_step(const ParamVector& theta, const ParamVector& g_hat, double eta);

// (1 - gamma) theta' + gamma theta_anchor
ParamVector relax_weights(const ParamVector& theta_prime, const AnchorState& anchor);

// theta_anchor <- m theta + (1 - m) theta_anchor
AnchorState update_anchor(AnchorState anchor, const ParamVector& theta);

struct BalanceState {
  double a_in = 0.0;
  double a_out = 0.0;
  double beta = 0.9;
  double epsilon = 1e-8;
};

struct BalancedUpdate {
  ParamVector delta;
  BalanceState state;
  double proj_in = 0.0;  // <delta, e> before rescaling
  double alpha = 1.0;
};

// Shrinks the anchor-parallel part of outward updates by
// alpha = min(1, a_in / (a_out + eps)); inward updates pass through.
BalancedUpdate balance_update(const ParamVector& delta, const ParamVector& theta, const AnchorState& anchor,
                              const BalanceState& state);

struct ProjectionStats {
  double mean = 0.0;
  double variance = 0.0;
  double standard_error = 0.0;  // of the mean
  std::size_t trials = 0;
};

// Monte-Carlo moments of v^T g_zo with g_zo = (g^T z + xi) z, g = A e_1 + g_m,
// z ~ N(0, I), xi ~ N(0, noise_sigma^2). v must be a unit vector with v[0] == 0.
ProjectionStats shortcut_variance_probe(double shortcut_magnitude, std::span<const double> g_main,
                                        std::span<const double> v, std::size_t trials, double noise_sigma,
                                        std::uint64_t seed);

}  // namespace zofa
