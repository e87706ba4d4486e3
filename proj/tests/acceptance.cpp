// Acceptance suite: one PASS/FAIL line per criterion.
//
//   zofa_acceptance [--known-failures N,M,...] [--only N,M,...]
//
// Exit status is 0 when every criterion passes, or when the only failures are
// listed in --known-failures (they are still reported as FAIL).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "support.hpp"
#include "zofa/engine.hpp"
#include "zofa/experiment.hpp"
#include "zofa/gradients.hpp"
#include "zofa/keyed_rng.hpp"
#include "zofa/objectives.hpp"
#include "zofa/perturb.hpp"
#include "zofa/zo_optim.hpp"

using namespace zofa;
using zofa::testing::max_relative_error;
using zofa::testing::random_matrix;
using zofa::testing::zoo_net;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- desk runs

constexpr std::uint64_t kSeeds = 5;

struct DeskModels {
  std::vector<PreparedModel> models;
  std::vector<ExperimentSpec> specs;
};

const DeskModels& desk_models() {
  static const DeskModels d = [] {
    DeskModels out;
    for (std::uint64_t s = 1; s <= kSeeds; ++s) {
      out.specs.push_back(desk_experiment(s));
      out.models.push_back(prepare_model(out.specs.back()));
    }
    return out;
  }();
  return d;
}

struct Variant {
  std::string name;
  Mode mode;
  ResetPolicy reset;
  bool ago = true;
  int bits = 0;
};

struct VariantResult {
  std::vector<double> accuracy, drift;
  std::size_t forwards = 0, samples = 0;
  double mean_accuracy() const { return mean(accuracy); }
  double mean_drift() const { return mean(drift); }
  static double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  }
};

VariantResult run_variant(const Variant& v) {
  const auto& d = desk_models();
  VariantResult r;
  for (std::uint64_t i = 0; i < kSeeds; ++i) {
    Network net = d.models[i].net;
    if (v.bits) net = quantize_weights(net, v.bits);
    AdaptConfig cfg = desk_adapt_config(v.mode, i + 1);
    cfg.components.anchor_guided = v.ago;
    const RunReport rep = run_experiment(net, d.models[i].test, d.specs[i], cfg, v.reset);
    r.accuracy.push_back(rep.average_accuracy);
    r.drift.push_back(rep.final_drift);
    r.forwards += rep.total_forwards;
    for (const auto& dom : rep.domains) r.samples += dom.samples;
  }
  return r;
}

const VariantResult& variant(const std::string& name) {
  static std::vector<std::pair<std::string, VariantResult>> cache;
  for (const auto& [n, r] : cache)
    if (n == name) return r;
  static const std::vector<Variant> table = {
      {"no-adapt", Mode::no_adapt, ResetPolicy::single_domain},
      {"eva0-single", Mode::eva0, ResetPolicy::single_domain},
      {"eva0-continual", Mode::eva0, ResetPolicy::continual},
      {"one-sided-single", Mode::one_sided_baseline, ResetPolicy::single_domain},
      {"noago-single", Mode::eva0, ResetPolicy::single_domain, false},
      {"noago-continual", Mode::eva0, ResetPolicy::continual, false},
      {"q8-no-adapt", Mode::no_adapt, ResetPolicy::single_domain, true, 8},
      {"q8-eva0-dagger", Mode::eva0_dagger, ResetPolicy::single_domain, true, 8},
  };
  for (const auto& v : table) {
    if (v.name == name) {
      cache.emplace_back(name, run_variant(v));
      return cache.back().second;
    }
  }
  throw std::logic_error("unknown variant " + name);
}

std::string points(double a) { return fmt("%.2f", 100.0 * a); }

// ---------------------------------------------------------------- criteria

Verdict seeded_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  KeyedSampler rng(101);
  std::size_t mismatches = 0, elements = 0;
  for (int t = 0; t < 20; ++t) {
    const Network net = zoo_net(rng.below(zofa::testing::zoo_size()), 1000 + t);
    const ParamLayout layout(net, ParamSelection::adapted);
    const std::size_t b = 1 + rng.below(16);
    const std::uint64_t step_seed = rng.below(1ULL << 62);
    auto dir = std::make_shared<ParamVector>(layout.total());
    for (double& v : dir->values) v = rng.gaussian();
    std::vector<PerturbationSpec> specs(b);
    std::vector<double> scalars(b);
    for (std::size_t i = 0; i < b; ++i) {
      specs[i].step_seed = step_seed;
      specs[i].sample_index = i;
      if (rng.uniform01() < 0.3) {
        specs[i].kind = PerturbationKind::anchor_guided;
        specs[i].anchor_direction = dir;
      }
      scalars[i] = rng.gaussian();
    }
    const ParamVector fast = accumulate_update(layout, specs, scalars);
    std::vector<ParamVector> zs;
    for (const auto& s : specs) zs.push_back(materialize_perturbation(s, layout));
    for (std::size_t j = 0; j < layout.total(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < b; ++i) acc += scalars[i] * zs[i][j];
      mismatches += (acc / static_cast<double>(b)) != fast[j];
      ++elements;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0, std::to_string(mismatches) + " of " + std::to_string(elements) +
                                              " elements differ over 20 triples, " + fmt("%.2f s", secs) +
                                              " (limit 10 s)"};
}

double average_deviation(const Network& net, const Tensor& x, double mu) {
  const ParamLayout layout(net, ParamSelection::adapted);
  std::vector<PerturbationSpec> specs(x.rows());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].step_seed = 17;
    specs[i].sample_index = i;
    specs[i].scale = mu;
  }
  const auto out = symmetric_forward(net, layout, x, specs);
  const Tensor clean = forward(net, x).logits;
  double sq = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = 0.5 * (out.logits_plus[i] + out.logits_minus[i]) - clean[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

Verdict symmetric_average() {
  // Nonlinear fixture: input offset, layernorm and tanh with adapted affine parameters.
  const Network net = zoo_net(0, 6);
  const Tensor x = random_matrix(16, net.input_width(), 7);
  const double d1 = average_deviation(net, x, 0.06), d2 = average_deviation(net, x, 0.03),
               d3 = average_deviation(net, x, 0.015);
  const double r1 = d1 / d2, r2 = d2 / d3;
  double linear_worst = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    Network lin;
    lin.layers = {Layer::layernorm(6), Layer::linear(6, 3)};
    lin.feature_tap = 0;
    zofa::testing::randomize(lin, s);
    lin.adapt_norm_affine();
    linear_worst = std::max(linear_worst, average_deviation(lin, random_matrix(8, 6, s + 10), 0.06));
  }
  const bool ok = r1 >= 3.0 && r1 <= 5.0 && r2 >= 3.0 && r2 <= 5.0 && linear_worst <= 1e-12;
  return {ok, "ratios " + num(r1) + " (0.06/0.03) and " + num(r2) + " (0.03/0.015), want [3, 5]; parameter-affine net " +
                  fmt("%.2e", linear_worst) + " (limit 1e-12)"};
}

Verdict estimator_correctness() {
  // f(t) = 0.5 t^T H t + b^T t, H diagonal.
  const std::vector<double> h = {1.0, 3.0, 0.5}, bvec = {0.2, -0.4, 1.0}, t = {0.5, -1.0, 2.0};
  auto f = [&](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += 0.5 * h[i] * x[i] * x[i] + bvec[i] * x[i];
    return s;
  };
  auto at = [&](const std::vector<double>& z, double c) {
    std::vector<double> y = t;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * z[i];
    return f(y);
  };
  std::vector<double> g(3);
  for (std::size_t i = 0; i < 3; ++i) g[i] = h[i] * t[i] + bvec[i];

  const double mu = 0.05;
  KeyedSampler rng(31);
  const std::size_t n = 100000;
  std::vector<double> sum(3, 0.0), sq(3, 0.0), z(3);
  for (std::size_t k = 0; k < n; ++k) {
    for (double& v : z) v = rng.gaussian();
    const auto est = spsa_two_sided(at(z, mu), at(z, -mu), mu, z);
    for (std::size_t i = 0; i < 3; ++i) {
      sum[i] += est[i];
      sq[i] += est[i] * est[i];
    }
  }
  double worst_z = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double mean = sum[i] / n;
    const double se = std::sqrt((sq[i] / n - mean * mean) / n);
    worst_z = std::max(worst_z, std::abs(mean - g[i]) / se);
  }

  // Paired comparison of squared projection errors along v = e_1 under
  // additive loss noise; both estimators share z and the noise draws.
  const double sigma = 0.05;
  const std::size_t m = 10000;
  double dsum = 0.0, dsq = 0.0, e1 = 0.0, e2 = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    for (double& v : z) v = rng.gaussian();
    const double xi_plus = sigma * rng.gaussian(), xi_other = sigma * rng.gaussian();
    const double one = spsa_one_sided(at(z, mu) + xi_plus, f(t) + xi_other, mu, z)[0];
    const double two = spsa_two_sided(at(z, mu) + xi_plus, at(z, -mu) + xi_other, mu, z)[0];
    const double d = (one - g[0]) * (one - g[0]) - (two - g[0]) * (two - g[0]);
    e1 += (one - g[0]) * (one - g[0]);
    e2 += (two - g[0]) * (two - g[0]);
    dsum += d;
    dsq += d * d;
  }
  const double dmean = dsum / m;
  const double tstat = dmean / std::sqrt((dsq / m - dmean * dmean) / m);
  const bool ok = worst_z <= 3.0 && dmean >= 0.0 && tstat >= 3.0;
  return {ok, "max |mean - grad| = " + num(worst_z, 3) + " s.e. (limit 3, N=1e5); projected variance one-sided " +
                  num(e1 / m) + " vs two-sided " + num(e2 / m) + ", paired t = " + num(tstat, 3) +
                  " (want >= 3, N=1e4)"};
}

Verdict shortcut_bound() {
  const std::size_t dim = 64;
  std::vector<double> gm(dim, 0.0), v(dim, 0.0);
  for (std::size_t j = 1; j < dim; ++j) gm[j] = 1.0 / std::sqrt(static_cast<double>(dim - 1));
  v[1] = 1.0;
  bool ok = true;
  std::string detail;
  for (double a : {1.0, 5.0, 10.0}) {
    const ProjectionStats s = shortcut_variance_probe(a, gm, v, 100000, 0.0, 7 + static_cast<std::uint64_t>(a));
    const double zscore = std::abs(s.mean - gm[1]) / s.standard_error;
    const bool this_ok = s.variance >= 0.95 * a * a && zscore <= 3.0;
    ok = ok && this_ok;
    detail += "A=" + num(a) + ": var " + num(s.variance) + " vs 0.95A^2 " + num(0.95 * a * a) + ", mean off by " +
              num(zscore, 3) + " s.e.; ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Verdict scale_invariance() {
  KeyedSampler rng(55);
  double sr_worst = 0.0, plain_worst = 0.0;
  std::vector<double> o(10), c(10);
  for (int t = 0; t < 1000; ++t) {
    for (double& v : o) v = 3.0 * rng.gaussian();
    for (double& v : c) v = 0.5 * rng.gaussian();
    const double r_ref = std::abs(4.0 * rng.gaussian()) + 0.1;
    const double base = sr_entropy_at_norm(o, r_ref, c);
    const double plain = entropy(o);
    for (double a : {1e-3, 0.5, 2.0, 1e3}) {
      std::vector<double> so = o;
      for (double& v : so) v *= a;
      sr_worst = std::max(sr_worst, std::abs(sr_entropy_at_norm(so, r_ref, c) - base));
      plain_worst = std::max(plain_worst, std::abs(entropy(so) - plain));
    }
  }
  return {sr_worst <= 1e-8 && plain_worst > 1e-8,
          "max change " + fmt("%.2e", sr_worst) + " (limit 1e-8); plain entropy changes by up to " + num(plain_worst)};
}

// Frozen protocol: desk model (seed 1), gauss-noise severity 5, layernorm
// parameters adapted, plain entropy, naive ZO (eta 0.1, mu 0.06, B 16) and
// backprop entropy descent (eta 0.02), 600 steps each. Entropy and mean logit
// norm are measured every 10 steps on 500 held-out probe samples; the norms
// are compared where each run first reaches 50% of the smaller of the two
// entropy reductions.
Verdict shortcut_phenomenon() {
  const auto& d = desk_models();
  const Network& net0 = d.models[0].net;
  const Dataset shifted = corrupt(d.models[0].test, {CorruptionKind::gauss_noise, 5, 1});
  auto rows = [](std::size_t from, std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = from + i;
    return v;
  };
  const Dataset probe = shifted.subset(rows(0, 500));
  const std::size_t b = 16, steps = 600;
  std::vector<double> ent[2], norm[2], acc[2];
  int run = 0;
  for (Mode mode : {Mode::naive_entropy_zo, Mode::bp_oracle_tent}) {
    AdaptConfig cfg;
    cfg.mode = mode;
    cfg.eta = mode == Mode::bp_oracle_tent ? 0.02 : 0.1;
    cfg.mu = 0.06;
    cfg.lambda = 0.0;
    cfg.batch_size = b;
    cfg.seed = 1;
    Network net = net0;
    OnlineState st = initial_state(net, cfg);
    for (std::size_t s = 0; s <= steps; ++s) {
      if (s % 10 == 0) {
        const auto out = forward(net, probe.x);
        double h = 0.0, n = 0.0;
        for (std::size_t r = 0; r < out.logits.rows(); ++r) {
          h += entropy(out.logits.row(r));
          n += vec::norm(out.logits.row(r));
        }
        ent[run].push_back(h / 500.0);
        norm[run].push_back(n / 500.0);
        acc[run].push_back(static_accuracy(net, probe));
      }
      if (s == steps) break;
      const std::size_t off = 500 + (s * b) % (shifted.size() - 500 - b);
      auto outcome = adapt_step(net, st, Batch{shifted.subset(rows(off, b)).x, {}}, cfg);
      net = std::move(outcome.net);
      st = std::move(outcome.state);
    }
    ++run;
  }
  const double h0 = ent[0][0];
  const double reduction = std::min(h0 - *std::min_element(ent[0].begin(), ent[0].end()),
                                    h0 - *std::min_element(ent[1].begin(), ent[1].end()));
  if (reduction <= 0.0) return {false, "no entropy reduction in one of the runs"};
  const double target = h0 - 0.5 * reduction;
  double n_at[2] = {0.0, 0.0}, a_at[2] = {0.0, 0.0};
  for (int k = 0; k < 2; ++k) {
    for (std::size_t i = 1; i < ent[k].size(); ++i) {
      if (ent[k][i] <= target) {
        const double w = (ent[k][i - 1] - target) / (ent[k][i - 1] - ent[k][i]);
        n_at[k] = norm[k][i - 1] + w * (norm[k][i] - norm[k][i - 1]);
        a_at[k] = acc[k][i];
        break;
      }
    }
  }
  const double ratio = n_at[0] / n_at[1];
  return {ratio >= 1.2, "at entropy " + num(target) + " (from " + num(h0) + "): ZO logit norm " + num(n_at[0]) +
                            " vs BP " + num(n_at[1]) + ", ratio " + num(ratio, 3) + " (want >= 1.2); accuracy ZO " +
                            num(a_at[0], 3) + " vs BP " + num(a_at[1], 3)};
}

Verdict direction_alignment() {
  const auto& d = desk_models();
  const Network& net = d.models[0].net;
  const ExperimentSpec& spec = d.specs[0];
  const StreamProtocol protocol = make_protocol(spec, d.models[0].test.size(), ResetPolicy::single_domain);
  const auto& plan = protocol.domains.front();
  const Dataset shifted = corrupt(d.models[0].test, plan.corruption);
  AdaptConfig sw = desk_adapt_config(Mode::eva0, 1), shared = sw;
  shared.components.samplewise = false;
  const std::size_t b = sw.batch_size, probes = 200;
  double sum_a = 0.0, sum_s = 0.0, dsum = 0.0, dsq = 0.0;
  for (std::size_t i = 0; i < probes; ++i) {
    std::vector<std::size_t> rows(b);
    for (std::size_t r = 0; r < b; ++r) rows[r] = plan.order[(i * b + r) % plan.order.size()];
    const Dataset part = shifted.subset(rows);
    OnlineState st = initial_state(net, sw);
    st.step = i;
    st.stream_salt = plan.corruption.seed;
    const double a = gradient_alignment_probe(net, st, {part.x, part.y}, sw).cosine;
    const double s = gradient_alignment_probe(net, st, {part.x, part.y}, shared).cosine;
    sum_a += a;
    sum_s += s;
    dsum += a - s;
    dsq += (a - s) * (a - s);
  }
  const double n = static_cast<double>(probes);
  const double dmean = dsum / n;
  const double se = std::sqrt((dsq / n - dmean * dmean) / (n - 1.0));
  const double tstat = dmean / se;
  return {dmean > 0.0 && tstat >= 3.0, "mean cosine sample-wise " + num(sum_a / n, 3) + " vs batch-shared " +
                                           num(sum_s / n, 3) + " over 200 probes, paired t = " + num(tstat, 3) +
                                           " (want >= 3)"};
}

Verdict adaptation_gain() {
  const auto t0 = std::chrono::steady_clock::now();
  const double none = variant("no-adapt").mean_accuracy();
  const double single = variant("eva0-single").mean_accuracy();
  const double continual = variant("eva0-continual").mean_accuracy();
  const double one_sided = variant("one-sided-single").mean_accuracy();
  const double noago_single = variant("noago-single").mean_accuracy();
  const double noago_continual = variant("noago-continual").mean_accuracy();
  const double secs = seconds_since(t0);
  const bool ok = single - none >= 0.05 && single - one_sided >= 0.02 && std::abs(continual - single) <= 0.02 &&
                  noago_single - noago_continual >= 0.05 && secs < 300.0;
  return {ok, "5 seeds: eva0 " + points(single) + " vs no-adapt " + points(none) + " (+" + points(single - none) +
                  ", want >= 5) and one-sided " + points(one_sided) + " (+" + points(single - one_sided) +
                  ", want >= 2); continual " + points(continual) + " (gap " + points(std::abs(single - continual)) +
                  ", want <= 2); no-AGO single " + points(noago_single) + " vs continual " + points(noago_continual) +
                  " (drop " + points(noago_single - noago_continual) + ", want >= 5); " + fmt("%.0f s", secs) +
                  " (limit 300 s)"};
}

Verdict drift_control() {
  const double ago = variant("eva0-continual").mean_drift();
  const double noago = variant("noago-continual").mean_drift();
  KeyedSampler rng(77);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng.below(200);
    AnchorState a;
    a.gamma = rng.uniform01();
    a.theta_anchor = ParamVector(n);
    ParamVector tp(n);
    for (std::size_t i = 0; i < n; ++i) {
      a.theta_anchor[i] = rng.gaussian();
      tp[i] = rng.gaussian();
    }
    const ParamVector r = relax_weights(tp, a);
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      before += (tp[i] - a.theta_anchor[i]) * (tp[i] - a.theta_anchor[i]);
      after += (r[i] - a.theta_anchor[i]) * (r[i] - a.theta_anchor[i]);
    }
    worst = std::max(worst, std::abs(std::sqrt(after) - (1.0 - a.gamma) * std::sqrt(before)));
  }
  return {ago < 0.5 * noago && worst <= 1e-12, "final drift with AGO " + num(ago) + " vs without " + num(noago) +
                                                   " (ratio " + num(ago / noago, 3) +
                                                   ", want < 0.5); contraction identity error " + fmt("%.1e", worst)};
}

Verdict quantized_gain() {
  const double base = variant("q8-no-adapt").mean_accuracy();
  const double adapted = variant("q8-eva0-dagger").mean_accuracy();
  return {adapted - base >= 0.03, "8-bit model, 5 seeds: eva0-dagger " + points(adapted) + " vs no-adapt " +
                                      points(base) + " (+" + points(adapted - base) + ", want >= 3)"};
}

Verdict forward_budget() {
  // Every zeroth-order mode, one step each on a desk batch, plus the full desk streams.
  const auto& d = desk_models();
  const Dataset shifted = corrupt(d.models[0].test, {CorruptionKind::gauss_noise, 5, 3});
  std::vector<std::size_t> rows(16);
  for (std::size_t i = 0; i < 16; ++i) rows[i] = i;
  const Dataset part = shifted.subset(rows);
  std::string bad;
  for (Mode m : {Mode::eva0, Mode::eva0_dagger, Mode::one_sided_baseline, Mode::batch_shared_baseline,
                 Mode::naive_entropy_zo}) {
    const AdaptConfig cfg = desk_adapt_config(m, 1);
    try {
      const auto out = adapt_step(d.models[0].net, initial_state(d.models[0].net, cfg), {part.x, part.y}, cfg);
      if (out.record.forwards != 32) bad += std::string(to_string(m)) + "=" + std::to_string(out.record.forwards) + " ";
    } catch (const std::logic_error& e) {
      bad += std::string(to_string(m)) + ": " + e.what() + " ";
    }
  }
  for (const char* name : {"eva0-single", "eva0-continual", "one-sided-single", "noago-continual", "q8-eva0-dagger"}) {
    const auto& r = variant(name);
    if (r.forwards != 2 * r.samples) bad += std::string(name) + " stream ";
  }
  return {bad.empty(), bad.empty() ? "2 forwards per sample in all 5 zeroth-order modes and all desk streams"
                                   : "violations: " + bad};
}

LossSpec loss_of_kind(int kind, const Network& net, const Tensor& x) {
  LossSpec spec;
  if (kind == 0) {
    spec.kind = LossKind::cross_entropy;
    for (std::size_t i = 0; i < x.rows(); ++i) spec.labels.push_back(static_cast<int>(i % net.output_width()));
    return spec;
  }
  if (kind == 1) {
    spec.kind = LossKind::entropy;
    return spec;
  }
  spec.kind = LossKind::sr_entropy;
  spec.center = std::vector<double>(net.output_width(), 0.1);
  spec = freeze_reference_norms(net, x, spec);
  if (kind == 3) {
    const std::size_t f = net.feature_width();
    spec.lambda = 0.7;
    spec.rho = 0.3;
    spec.moments.m = std::vector<double>(f, 0.1);
    spec.moments.q = std::vector<double>(f, 1.5);
    spec.source = SourceStats{Tensor::vector(std::vector<double>(f, 0.2)), Tensor::vector(std::vector<double>(f, 0.9))};
  }
  return spec;
}

Verdict gradient_oracles() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (int seed = 0; seed < 10; ++seed)
    for (std::size_t k = 0; k < zofa::testing::zoo_size(); ++k)
      for (int kind = 0; kind < 4; ++kind) {
        const Network net = zoo_net(k, 100 + seed * 7 + k);
        const Tensor x = random_matrix(4, net.input_width(), 500 + seed);
        const LossSpec spec = loss_of_kind(kind, net, x);
        const auto bp = grad_backprop(net, x, spec);
        const auto fd =
            grad_finite_diff(net, [&](const Network& n) { return batch_loss(n, x, spec); }, ParamSelection::all);
        worst = std::max(worst, max_relative_error(bp.values, fd.values));
        ++cases;
      }
  return {worst <= 1e-4, "max relative error " + fmt("%.2e", worst) + " over " + std::to_string(cases) +
                             " (net, seed, loss) cases (limit 1e-4)"};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> known, only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--known-failures" || a == "--only") && i + 1 < argc) {
      (a == "--only" ? only : known) = parse_list(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--known-failures N,M,...] [--only N,M,...]\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"seeded perturbation regeneration", seeded_equivalence},
      {"symmetric-average inference", symmetric_average},
      {"two-sided estimator", estimator_correctness},
      {"shortcut variance bound", shortcut_bound},
      {"scale invariance of SR entropy", scale_invariance},
      {"shortcut phenomenon", shortcut_phenomenon},
      {"sample-wise directions", direction_alignment},
      {"adaptation gain", adaptation_gain},
      {"weight-drift control", drift_control},
      {"quantized adaptation", quantized_gain},
      {"two-forward budget", forward_budget},
      {"gradient oracles", gradient_oracles},
  };

  int unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %d (%s): %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass && !known.count(id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
