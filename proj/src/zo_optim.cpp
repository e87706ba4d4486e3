#include "zofa/zo_optim.hpp"

#include <cmath>
#include <string>

#include "zofa/error.hpp"
#include "zofa/keyed_rng.hpp"

namespace zofa {

namespace {

void check_losses(double a, double b, double mu, std::string_view source) {
  if (!(mu > 0.0)) throw InputError("perturbation scale mu must be positive");
  if (!std::isfinite(a) || !std::isfinite(b)) {
    throw NumericalError("non-finite loss in " + std::string(source) + " estimate");
  }
}

ParamVector scaled(std::span<const double> z, double c) {
  ParamVector out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = c * z[i];
  return out;
}

}  // namespace

ParamVector spsa_one_sided(double loss_plus, double loss_zero, double mu, std::span<const double> z,
                           std::string_view source) {
  check_losses(loss_plus, loss_zero, mu, source);
  return scaled(z, (loss_plus - loss_zero) / mu);
}

ParamVector spsa_two_sided(double loss_plus, double loss_minus, double mu, std::span<const double> z,
                           std::string_view source) {
  check_losses(loss_plus, loss_minus, mu, source);
  return scaled(z, (loss_plus - loss_minus) / (2.0 * mu));
}

ParamVector eva_gradient(const ParamLayout& adapted, std::span<const PerturbationSpec> specs,
                         std::span<const double> loss_plus, std::span<const double> loss_minus, double mu,
                         PerturbationMeter* meter) {
  if (specs.empty()) throw InputError("eva_gradient: empty batch");
  if (loss_plus.size() != specs.size() || loss_minus.size() != specs.size()) {
    throw InputError("eva_gradient: one loss pair per sample required");
  }
  std::vector<double> scalars(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    check_losses(loss_plus[i], loss_minus[i], mu, "sample-wise two-sided");
    scalars[i] = (loss_plus[i] - loss_minus[i]) / (2.0 * mu);
  }
  return accumulate_update(adapted, specs, scalars, meter);
}

std::vector<PerturbationKind> sample_perturbation_kinds(std::size_t batch, std::size_t k, std::uint64_t step_seed) {
  if (k > batch) throw InputError("anchor-guided count k exceeds the batch size");
  std::vector<PerturbationKind> kinds(batch, PerturbationKind::gaussian);
  if (k == 0) return kinds;
  std::vector<std::size_t> perm(batch);
  for (std::size_t i = 0; i < batch; ++i) perm[i] = i;
  KeyedSampler rng(derive_key({step_seed, 0x616E63ULL}));
  for (std::size_t i = batch; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  for (std::size_t i = 0; i < k; ++i) kinds[perm[i]] = PerturbationKind::anchor_guided;
  return kinds;
}

double expected_gaussian_norm(std::size_t n) {
  if (n == 0) return 0.0;
  const double nd = static_cast<double>(n);
  // lgamma keeps the ratio finite for any n, so no large-n approximation is needed.
  return std::sqrt(2.0) * std::exp(std::lgamma((nd + 1.0) / 2.0) - std::lgamma(nd / 2.0));
}

ParamVector anchor_direction(const ParamVector& theta, const AnchorState& anchor) {
  if (theta.size() != anchor.theta_anchor.size()) throw InputError("anchor_direction: dimension mismatch");
  ParamVector d(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) d[i] = anchor.theta_anchor[i] - theta[i];
  const double scale = expected_gaussian_norm(theta.size()) / (vec::norm(d.values) + anchor.delta);
  for (double& v : d.values) v *= scale;
  return d;
}

ParamVector sgd_step(const ParamVector& theta, const ParamVector& g_hat, double eta) {
  if (eta < 0.0) throw InputError("learning rate must be nonnegative");
  if (theta.size() != g_hat.size()) throw InputError("sgd_step: dimension mismatch");
  ParamVector out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = theta[i] - eta * g_hat[i];
  return out;
}

ParamVector relax_weights(const ParamVector& theta_prime, const AnchorState& anchor) {
  const double g = anchor.gamma;
  if (!(g >= 0.0 && g <= 1.0)) throw InputError("gamma must lie in [0, 1]");
  if (theta_prime.size() != anchor.theta_anchor.size()) throw InputError("relax_weights: dimension mismatch");
  ParamVector out(theta_prime.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - g) * theta_prime[i] + g * anchor.theta_anchor[i];
  return out;
}

AnchorState update_anchor(AnchorState anchor, const ParamVector& theta) {
  const double m = anchor.ema_rate;
  if (!(m >= 0.0 && m <= 1.0)) throw InputError("anchor EMA rate must lie in [0, 1]");
  if (theta.size() != anchor.theta_anchor.size()) throw InputError("update_anchor: dimension mismatch");
  if (m == 0.0) return anchor;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    anchor.theta_anchor[i] = m * theta[i] + (1.0 - m) * anchor.theta_anchor[i];
  }
  return anchor;
}

BalancedUpdate balance_update(const ParamVector& delta, const ParamVector& theta, const AnchorState& anchor,
                              const BalanceState& state) {
  if (delta.size() != theta.size() || theta.size() != anchor.theta_anchor.size()) {
    throw InputError("balance_update: dimension mismatch");
  }
  std::vector<double> e(theta.size());
  for (std::size_t i = 0; i < e.size(); ++i) e[i] = anchor.theta_anchor[i] - theta[i];
  const double en = vec::norm(e) + state.epsilon;
  for (double& v : e) v /= en;

  BalancedUpdate out{delta, state, vec::dot(delta.values, e), 1.0};
  const double c = out.proj_in;
  out.state.a_in = state.beta * state.a_in + (1.0 - state.beta) * std::max(c, 0.0);
  out.state.a_out = state.beta * state.a_out + (1.0 - state.beta) * std::max(-c, 0.0);
  if (c < 0.0) {
    out.alpha = std::min(1.0, out.state.a_in / (out.state.a_out + state.epsilon));
    const double k = (out.alpha - 1.0) * c;
    for (std::size_t i = 0; i < e.size(); ++i) out.delta[i] += k * e[i];
  }
  return out;
}

ProjectionStats shortcut_variance_probe(double shortcut_magnitude, std::span<const double> g_main,
                                        std::span<const double> v, std::size_t trials, double noise_sigma,
                                        std::uint64_t seed) {
  if (trials < 1000) throw InputError("shortcut_variance_probe needs at least 1000 trials");
  const std::size_t n = g_main.size();
  if (n < 2 || v.size() != n) throw InputError("shortcut_variance_probe: dimension mismatch");
  if (v[0] != 0.0 || std::abs(vec::norm(v) - 1.0) > 1e-9) {
    throw InputError("probe direction must be a unit vector orthogonal to the shortcut axis");
  }
  if (g_main[0] != 0.0) throw InputError("g_m must be orthogonal to the shortcut axis");

  std::vector<double> g(g_main.begin(), g_main.end());
  g[0] += shortcut_magnitude;
  KeyedSampler rng(derive_key({seed, 0x70726F6265ULL}));
  std::vector<double> z(n);
  // Welford accumulation of the projection.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& zi : z) zi = rng.gaussian();
    const double xi = noise_sigma * rng.gaussian();
    const double proj = (vec::dot(g, z) + xi) * vec::dot(v, z);
    const double delta = proj - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (proj - mean);
  }
  ProjectionStats s;
  s.trials = trials;
  s.mean = mean;
  s.variance = m2 / static_cast<double>(trials - 1);
  s.standard_error = std::sqrt(s.variance / static_cast<double>(trials));
  return s;
}

}  // namespace zofa
