#include "zofa/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "zofa/error.hpp"

namespace zofa {

namespace {

// log-sum-exp and softmax in one pass.
double log_partition(std::span<const double> s, std::vector<double>& p) {
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  p.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    p[i] = std::exp(s[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return mx + std::log(z);
}

double entropy_of(std::span<const double> s, std::vector<double>& p) {
  const double lse = log_partition(s, p);
  double h = lse;
  for (std::size_t i = 0; i < s.size(); ++i) h -= p[i] * s[i];
  // Rounding can push the value a hair outside [0, ln C].
  return std::clamp(h, 0.0, std::log(static_cast<double>(s.size())));
}

void require_classes(std::size_t c) {
  if (c < 2) throw InputError("entropy objectives need at least 2 classes");
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p;
  log_partition(logits, p);
  return p;
}

double entropy(std::span<const double> logits) {
  require_classes(logits.size());
  std::vector<double> p;
  return entropy_of(logits, p);
}

std::vector<double> sr_logits(std::span<const double> o, double reference_norm, std::span<const double> center) {
  if (!center.empty() && center.size() != o.size()) throw InputError("output center width mismatch");
  const double a = reference_norm / (vec::norm(o) + kSrNormEpsilon);
  std::vector<double> s(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) s[i] = a * o[i] - (center.empty() ? 0.0 : center[i]);
  return s;
}

double sr_entropy_at_norm(std::span<const double> o, double reference_norm, std::span<const double> center) {
  require_classes(o.size());
  const auto s = sr_logits(o, reference_norm, center);
  std::vector<double> p;
  return entropy_of(s, p);
}

double sr_entropy(std::span<const double> o, std::span<const double> o_bar, const OnlineCenter& center) {
  if (o.size() != o_bar.size()) throw InputError("sr_entropy: o and o_bar width mismatch");
  return sr_entropy_at_norm(o, vec::norm(o_bar), center.c);
}

OnlineCenter update_center(OnlineCenter center, const Tensor& o_bar_batch) {
  if (o_bar_batch.rank() != 2 || o_bar_batch.rows() == 0) throw InputError("update_center: expected [B, C] batch");
  const std::size_t b = o_bar_batch.rows();
  const std::size_t c = o_bar_batch.cols();
  std::vector<double> mean(c, 0.0);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < c; ++j) mean[j] += o_bar_batch.at(r, j);
  for (double& v : mean) v /= static_cast<double>(b);
  if (!center.initialized()) {
    center.c = std::move(mean);
    return center;
  }
  if (center.c.size() != c) throw InputError("update_center: width changed");
  const double f = center.ema_factor;
  for (std::size_t j = 0; j < c; ++j) center.c[j] = f * center.c[j] + (1.0 - f) * mean[j];
  return center;
}

namespace {

struct HypotheticalMoments {
  double m_hat;
  double sigma_hat;
  bool clamped;
};

HypotheticalMoments hypothetical(double h, double m, double q, double rho) {
  const double q_hat = (1.0 - rho) * q + rho * h * h;
  const double m_hat = (1.0 - rho) * m + rho * h;
  const double var = q_hat - m_hat * m_hat;
  if (var <= 0.0) return {m_hat, 0.0, var < 0.0};
  return {m_hat, std::sqrt(var), false};
}

void check_swa_inputs(std::span<const double> h, const TargetMoments& moments, const SourceStats& src, double rho) {
  if (!moments.initialized()) throw InputError("swa_loss: target moments not initialized");
  if (src.mean.size() != h.size() || src.stddev.size() != h.size()) {
    throw InputError("swa_loss: feature width " + std::to_string(h.size()) + " does not match source statistics");
  }
  if (moments.m.size() != h.size() || moments.q.size() != h.size()) {
    throw InputError("swa_loss: feature width does not match target moments");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw InputError("swa_loss: rho must lie in [0, 1]");
}

}  // namespace

double swa_loss(std::span<const double> h, const TargetMoments& moments, const SourceStats& src, double rho,
                bool* clamped) {
  check_swa_inputs(h, moments, src, rho);
  double mean_term = 0.0;
  double std_term = 0.0;
  bool any_clamp = false;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto hm = hypothetical(h[i], moments.m[i], moments.q[i], rho);
    any_clamp = any_clamp || hm.clamped;
    const double dm = hm.m_hat - src.mean[i];
    const double ds = hm.sigma_hat - src.stddev[i];
    mean_term += dm * dm;
    std_term += ds * ds;
  }
  if (clamped) *clamped = any_clamp;
  return mean_term + std_term;
}

TargetMoments update_moments(TargetMoments moments, std::span<const double> h_bar, std::span<const double> h_sq_bar) {
  if (h_bar.size() != h_sq_bar.size()) throw InputError("update_moments: width mismatch");
  if (!moments.initialized()) {
    moments.m.assign(h_bar.begin(), h_bar.end());
    moments.q.assign(h_sq_bar.begin(), h_sq_bar.end());
    return moments;
  }
  if (moments.m.size() != h_bar.size()) throw InputError("update_moments: width changed");
  const double f = moments.ema_factor;
  for (std::size_t i = 0; i < h_bar.size(); ++i) {
    moments.m[i] = f * moments.m[i] + (1.0 - f) * h_bar[i];
    moments.q[i] = f * moments.q[i] + (1.0 - f) * h_sq_bar[i];
  }
  return moments;
}

double combined_loss(std::span<const double> o, std::span<const double> o_bar, std::span<const double> h,
                     const OnlineCenter& center, const TargetMoments& moments, const SourceStats* src, double rho,
                     double lambda) {
  if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  const double e = sr_entropy(o, o_bar, center);
  if (lambda == 0.0) return e;
  if (!src) throw ConfigError("lambda > 0 requires source feature statistics");
  return e + lambda * swa_loss(h, moments, *src, rho);
}

double cross_entropy_grad(std::span<const double> logits, int label, std::span<double> grad) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) throw InputError("label out of range");
  std::vector<double> p;
  const double lse = log_partition(logits, p);
  for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = p[i] - (static_cast<int>(i) == label ? 1.0 : 0.0);
  return lse - logits[static_cast<std::size_t>(label)];
}

namespace {

// dH/ds_j = -p_j (log p_j + H)
double entropy_grad_raw(std::span<const double> s, std::span<double> grad) {
  std::vector<double> p;
  const double lse = log_partition(s, p);
  double h = lse;
  for (std::size_t i = 0; i < s.size(); ++i) h -= p[i] * s[i];
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double log_p = s[i] - lse;
    grad[i] = -p[i] * (log_p + h);
  }
  return h;
}

}  // namespace

double entropy_grad(std::span<const double> logits, std::span<double> grad) {
  require_classes(logits.size());
  return entropy_grad_raw(logits, grad);
}

double sr_entropy_grad(std::span<const double> o, double reference_norm, std::span<const double> center,
                       std::span<double> grad) {
  require_classes(o.size());
  const auto s = sr_logits(o, reference_norm, center);
  std::vector<double> gs(o.size());
  const double value = entropy_grad_raw(s, gs);
  const double n = vec::norm(o);
  const double denom = n + kSrNormEpsilon;
  const double a = reference_norm / denom;
  const double proj = vec::dot(o, gs);
  const double radial = n > 0.0 ? -reference_norm / (denom * denom * n) * proj : 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) grad[i] = a * gs[i] + radial * o[i];
  return value;
}

double swa_grad(std::span<const double> h, const TargetMoments& moments, const SourceStats& src, double rho,
                std::span<double> grad) {
  check_swa_inputs(h, moments, src, rho);
  double value = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto hm = hypothetical(h[i], moments.m[i], moments.q[i], rho);
    const double dm = hm.m_hat - src.mean[i];
    const double ds = hm.sigma_hat - src.stddev[i];
    value += dm * dm + ds * ds;
    double g = 2.0 * rho * dm;
    // d sigma_hat / dh = rho (h - m_hat) / sigma_hat; zero on the clamped branch.
    if (hm.sigma_hat > 0.0) g += 2.0 * ds * rho * (h[i] - hm.m_hat) / hm.sigma_hat;
    grad[i] = g;
  }
  return value;
}

}  // namespace zofa
