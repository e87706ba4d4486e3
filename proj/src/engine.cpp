#include "zofa/engine.hpp"

#include <cmath>
#include <stdexcept>

#include "zofa/error.hpp"
#include "zofa/gradients.hpp"
#include "zofa/keyed_rng.hpp"
#include "zofa/perturb.hpp"

namespace zofa {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::eva0: return "eva0";
    case Mode::eva0_dagger: return "eva0-dagger";
    case Mode::one_sided_baseline: return "one-sided-baseline";
    case Mode::batch_shared_baseline: return "batch-shared-baseline";
    case Mode::naive_entropy_zo: return "naive-entropy-zo";
    case Mode::bp_oracle_tent: return "bp-oracle-tent";
    case Mode::no_adapt: return "no-adapt";
  }
  return "unknown";
}

Mode mode_from_string(std::string_view name) {
  for (Mode m : {Mode::eva0, Mode::eva0_dagger, Mode::one_sided_baseline, Mode::batch_shared_baseline,
                 Mode::naive_entropy_zo, Mode::bp_oracle_tent, Mode::no_adapt}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + std::string(name) + "'");
}

void AdaptConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  if (!(mu > 0.0)) throw ConfigError("mu must be positive");
  if (!(eta >= 0.0)) throw ConfigError("eta must be nonnegative");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  unit(gamma, "gamma");
  unit(rho, "rho");
  unit(center_ema, "center_ema");
  unit(moment_ema, "moment_ema");
  unit(anchor_ema, "anchor_ema");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (k > batch_size) throw ConfigError("k must not exceed batch_size");
}

namespace {

enum class Estimator { two_sided, one_sided, backprop, none };

struct Strategy {
  Estimator estimator = Estimator::two_sided;
  bool sr_entropy = true;
  double lambda = 0.0;
  bool anchor_guided = true;
  bool samplewise = true;
};

Strategy resolve(const AdaptConfig& cfg) {
  Strategy s;
  s.sr_entropy = cfg.components.sr_entropy;
  s.lambda = cfg.components.alignment ? cfg.lambda : 0.0;
  s.anchor_guided = cfg.components.anchor_guided;
  s.samplewise = cfg.components.samplewise;
  switch (cfg.mode) {
    case Mode::eva0: break;
    case Mode::eva0_dagger: s.lambda = 0.0; break;
    case Mode::one_sided_baseline:
      s.estimator = Estimator::one_sided;
      s.samplewise = false;
      s.anchor_guided = false;
      break;
    case Mode::batch_shared_baseline: s.samplewise = false; break;
    case Mode::naive_entropy_zo:
      s.sr_entropy = false;
      s.lambda = 0.0;
      s.anchor_guided = false;
      s.samplewise = true;
      break;
    case Mode::bp_oracle_tent:
      s.estimator = Estimator::backprop;
      s.sr_entropy = false;
      s.lambda = 0.0;
      s.anchor_guided = false;
      break;
    case Mode::no_adapt: s.estimator = Estimator::none; break;
  }
  return s;
}

std::uint64_t step_seed_of(const AdaptConfig& cfg, const OnlineState& state) {
  return derive_key({cfg.seed, state.stream_salt, state.step, 0x73746570ULL});
}

double drift_of(const ParamVector& theta, const ParamVector& theta0) {
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) s += (theta[i] - theta0[i]) * (theta[i] - theta0[i]);
  return std::sqrt(s);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

// Everything one zeroth-order probe of a batch produces before any update.
struct Probe {
  Tensor predictions;
  std::vector<PerturbationSpec> specs;  // valid samples only
  std::vector<double> scalars;          // matching finite-difference feedback
  std::vector<double> loss_plus;
  std::vector<double> loss_minus;
  std::vector<std::size_t> valid_rows;
  std::vector<double> reference_norms;  // ||o_bar|| per valid row
  Tensor o_bar;                          // [valid, C]
  std::vector<double> h_mean;
  std::vector<double> h_sq_mean;
  OnlineCenter center;                   // after bootstrap, before this step's EMA
  TargetMoments moments;
  std::size_t excluded = 0;
  bool clamp = false;
};

const SourceStats* source_for(const Network& net, const Strategy& s) {
  if (s.lambda == 0.0) return nullptr;
  if (!net.source_stats) throw ConfigError("lambda > 0 but the model carries no source feature statistics");
  return &*net.source_stats;
}

double objective(const Strategy& s, std::span<const double> o, std::span<const double> o_bar,
                 std::span<const double> h, const OnlineCenter& center, const TargetMoments& moments,
                 const SourceStats* src, double rho, bool& clamp) {
  double value = s.sr_entropy ? sr_entropy(o, o_bar, center) : entropy(o);
  if (s.lambda > 0.0) {
    bool c = false;
    value += s.lambda * swa_loss(h, moments, *src, rho, &c);
    clamp = clamp || c;
  }
  return value;
}

std::vector<PerturbationSpec> make_specs(const Strategy& s, const AdaptConfig& cfg, const ParamVector& theta,
                                         const OnlineState& state, std::size_t batch, std::uint64_t step_seed) {
  std::vector<PerturbationSpec> specs(batch);
  std::shared_ptr<const ParamVector> direction;
  std::vector<PerturbationKind> kinds(batch, PerturbationKind::gaussian);
  const std::size_t k = std::min(cfg.k, batch);
  if (s.anchor_guided && k > 0) {
    direction = std::make_shared<const ParamVector>(anchor_direction(theta, state.anchor));
    if (s.samplewise) {
      kinds = sample_perturbation_kinds(batch, k, step_seed);
    } else {
      // One shared direction: anchor-guided for a k/B fraction of steps.
      KeyedSampler pick(derive_key({step_seed, 0x736872ULL}));
      const bool anchor = pick.uniform01() * static_cast<double>(batch) < static_cast<double>(k);
      kinds.assign(batch, anchor ? PerturbationKind::anchor_guided : PerturbationKind::gaussian);
    }
  }
  for (std::size_t i = 0; i < batch; ++i) {
    specs[i].step_seed = step_seed;
    specs[i].sample_index = s.samplewise ? i : 0;
    specs[i].scale = cfg.mu;
    specs[i].kind = kinds[i];
    if (kinds[i] == PerturbationKind::anchor_guided) specs[i].anchor_direction = direction;
  }
  return specs;
}

Probe zo_probe(const Network& net, const OnlineState& state, const Batch& batch, const AdaptConfig& cfg,
               const Strategy& s, std::uint64_t step_seed, ForwardCounter& counter) {
  const std::size_t b = batch.x.rows();
  const ParamLayout adapted(net, ParamSelection::adapted);
  if (adapted.total() == 0) throw ConfigError("adaptation requested but the network has no adapted parameters");
  const ParamVector theta = pack(net);
  const SourceStats* src = source_for(net, s);
  auto specs = make_specs(s, cfg, theta, state, b, step_seed);

  Probe p;
  const std::size_t c = net.output_width();
  const std::size_t f = net.feature_width();
  p.predictions = Tensor({b, c});
  Tensor o_bar_all({b, c});
  const bool two_sided = s.estimator == Estimator::two_sided;

  // Sides: "plus" is always psi + mu z; "other" is psi - mu z (two-sided) or
  // the clean model (one-sided).
  PerturbedOutputs pert;
  ForwardResult clean;
  if (two_sided) {
    pert = symmetric_forward(net, adapted, batch.x, specs, &counter);
  } else {
    clean = forward(net, batch.x, &counter);
    pert = positive_forward(net, adapted, batch.x, specs, &counter);
  }
  const Tensor& other_logits = two_sided ? pert.logits_minus : clean.logits;
  const Tensor& other_features = two_sided ? pert.features_minus : clean.features;

  for (std::size_t r = 0; r < b; ++r) {
    const bool plus_ok = pert.plus_finite[r] != 0;
    const bool other_ok = two_sided ? pert.minus_finite[r] != 0
                                    : (vec::all_finite(clean.logits.row(r)) && vec::all_finite(clean.features.row(r)));
    auto pred = p.predictions.row(r);
    if (two_sided) {
      for (std::size_t j = 0; j < c; ++j) {
        const double a = pert.logits_plus.at(r, j), m = pert.logits_minus.at(r, j);
        pred[j] = plus_ok && other_ok ? 0.5 * (a + m) : (plus_ok ? a : m);
      }
    } else {
      std::copy_n(clean.logits.row(r).begin(), c, pred.begin());
    }
    if (plus_ok && other_ok) {
      p.valid_rows.push_back(r);
    } else {
      ++p.excluded;
    }
    std::copy(pred.begin(), pred.end(), o_bar_all.row(r).begin());
  }
  if (p.valid_rows.empty()) return p;

  const std::size_t nv = p.valid_rows.size();
  p.o_bar = Tensor({nv, c});
  p.h_mean.assign(f, 0.0);
  p.h_sq_mean.assign(f, 0.0);
  for (std::size_t v = 0; v < nv; ++v) {
    const std::size_t r = p.valid_rows[v];
    std::copy_n(o_bar_all.row(r).begin(), c, p.o_bar.row(v).begin());
    for (std::size_t j = 0; j < f; ++j) {
      const double hp = pert.features_plus.at(r, j);
      const double ho = other_features.at(r, j);
      if (two_sided) {
        p.h_mean[j] += 0.5 * (hp + ho);
        p.h_sq_mean[j] += 0.5 * (hp * hp + ho * ho);
      } else {
        p.h_mean[j] += ho;
        p.h_sq_mean[j] += ho * ho;
      }
    }
  }
  for (std::size_t j = 0; j < f; ++j) {
    p.h_mean[j] /= static_cast<double>(nv);
    p.h_sq_mean[j] /= static_cast<double>(nv);
  }

  // First step: seed center and moments from this batch before any loss.
  p.center = state.center;
  p.moments = state.moments;
  p.center.ema_factor = cfg.center_ema;
  p.moments.ema_factor = cfg.moment_ema;
  if (!p.center.initialized()) p.center = update_center(p.center, p.o_bar);
  if (!p.moments.initialized()) p.moments = update_moments(p.moments, p.h_mean, p.h_sq_mean);

  for (std::size_t v = 0; v < nv; ++v) {
    const std::size_t r = p.valid_rows[v];
    const auto o_bar = p.o_bar.row(v);
    p.reference_norms.push_back(vec::norm(o_bar));
    const double lp = objective(s, pert.logits_plus.row(r), o_bar, pert.features_plus.row(r), p.center, p.moments,
                                src, cfg.rho, p.clamp);
    const double lo = objective(s, other_logits.row(r), o_bar, other_features.row(r), p.center, p.moments, src,
                                cfg.rho, p.clamp);
    p.loss_plus.push_back(lp);
    p.loss_minus.push_back(lo);
    p.specs.push_back(specs[r]);
    p.scalars.push_back(two_sided ? (lp - lo) / (2.0 * cfg.mu) : (lp - lo) / cfg.mu);
  }
  return p;
}

LossSpec oracle_loss(const Network& net, const Strategy& s, const AdaptConfig& cfg, const OnlineCenter& center,
                     const TargetMoments& moments, std::vector<double> reference_norms) {
  LossSpec spec;
  spec.kind = s.sr_entropy ? LossKind::sr_entropy : LossKind::entropy;
  spec.center = center.c;
  spec.reference_norms = std::move(reference_norms);
  spec.lambda = s.lambda;
  spec.moments = moments;
  spec.rho = cfg.rho;
  if (s.lambda > 0.0) spec.source = net.source_stats;
  return spec;
}

ParamVector oracle_gradient(const Network& net, const Tensor& x, const LossSpec& spec) {
  return select_params(net, grad_backprop(net, x, spec), ParamSelection::adapted);
}

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& rows) {
  Tensor out({rows.size(), x.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.row(rows[i]).begin(), x.cols(), out.row(i).begin());
  return out;
}

void fill_prediction_stats(StepRecord& rec, const Tensor& predictions, const Batch& batch,
                           const OnlineCenter& center) {
  rec.predicted = argmax_rows(predictions);
  if (!batch.labels.empty()) {
    if (batch.labels.size() != predictions.rows()) throw InputError("batch labels and rows disagree");
    rec.correct.resize(rec.predicted.size());
    for (std::size_t i = 0; i < rec.predicted.size(); ++i) rec.correct[i] = rec.predicted[i] == batch.labels[i];
  }
  double norm_sum = 0.0, sr_sum = 0.0, ent_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < predictions.rows(); ++r) {
    const auto row = predictions.row(r);
    if (!vec::all_finite(row)) continue;
    ++n;
    norm_sum += vec::norm(row);
    ent_sum += entropy(row);
    sr_sum += sr_entropy(row, row, center);
  }
  if (n) {
    rec.mean_logit_norm = norm_sum / static_cast<double>(n);
    rec.mean_entropy = ent_sum / static_cast<double>(n);
    rec.mean_sr_entropy = sr_sum / static_cast<double>(n);
  }
}

}  // namespace

OnlineState initial_state(const Network& net, const AdaptConfig& cfg) {
  cfg.validate();
  OnlineState st;
  st.center.ema_factor = cfg.center_ema;
  st.moments.ema_factor = cfg.moment_ema;
  st.theta0 = pack(net);
  st.anchor.theta_anchor = st.theta0;
  st.anchor.ema_rate = cfg.anchor_ema;
  st.anchor.gamma = cfg.gamma;
  return st;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b, bool* degenerate) {
  const double na = vec::norm(a), nb = vec::norm(b);
  if (na == 0.0 || nb == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return vec::dot(a, b) / (na * nb);
}

StepOutcome adapt_step(const Network& net, const OnlineState& state, const Batch& batch, const AdaptConfig& cfg) {
  cfg.validate();
  if (batch.x.rank() != 2 || batch.x.rows() == 0) throw InputError("adapt_step: empty batch");
  const Strategy s = resolve(cfg);
  const std::size_t b = batch.x.rows();
  const std::uint64_t step_seed = step_seed_of(cfg, state);

  StepOutcome out{Tensor{}, net, state, StepRecord{}};
  StepRecord& rec = out.record;
  rec.step = state.step;
  rec.step_seed = step_seed;
  ForwardCounter counter;

  if (s.estimator == Estimator::none || s.estimator == Estimator::backprop) {
    const auto clean = forward(net, batch.x, &counter);
    out.predictions = clean.logits;
    fill_prediction_stats(rec, out.predictions, batch, state.center);
    if (s.estimator == Estimator::backprop) {
      LossSpec spec;
      spec.kind = LossKind::entropy;
      const ParamVector g = oracle_gradient(net, batch.x, spec);
      const ParamVector theta = pack(net);
      const ParamVector next = sgd_step(theta, g, cfg.eta);
      unpack_into(out.net, next);
      rec.update_norm = cfg.eta * vec::norm(g.values);
      for (std::size_t r = 0; r < b; ++r) rec.loss_plus.push_back(entropy(clean.logits.row(r)));
      rec.drift = drift_of(next, state.theta0);
    } else {
      rec.drift = drift_of(pack(net), state.theta0);
    }
    rec.forwards = counter.count();
    if (rec.forwards != b) throw std::logic_error("forward budget violated: expected one forward per sample");
    out.state.step = state.step + 1;
    return out;
  }

  Probe p = zo_probe(net, state, batch, cfg, s, step_seed, counter);
  out.predictions = std::move(p.predictions);
  rec.forwards = counter.count();
  if (rec.forwards != 2 * b) throw std::logic_error("forward budget violated: expected two forwards per sample");
  rec.excluded = p.excluded;
  rec.loss_plus = p.loss_plus;
  rec.loss_minus = p.loss_minus;
  rec.clamp_triggered = p.clamp;

  if (p.valid_rows.empty()) {
    // Nothing usable: keep the state, answer from the clean model.
    const auto clean = forward(net, batch.x, &counter);
    out.predictions = clean.logits;
    rec.forwards = counter.count();
    rec.warning = "all samples produced non-finite outputs; update skipped";
    fill_prediction_stats(rec, out.predictions, batch, state.center);
    rec.drift = drift_of(pack(net), state.theta0);
    out.state.step = state.step + 1;
    return out;
  }
  fill_prediction_stats(rec, out.predictions, batch, p.center);

  const ParamLayout adapted(net, ParamSelection::adapted);
  const ParamVector theta = pack(net);
  const ParamVector g = accumulate_update(adapted, p.specs, p.scalars);

  if (cfg.diagnostics) {
    const Tensor xv = rows_of(batch.x, p.valid_rows);
    const LossSpec spec = oracle_loss(net, s, cfg, p.center, p.moments, p.reference_norms);
    rec.cosine = cosine_similarity(g.values, oracle_gradient(net, xv, spec).values);
  }

  // theta' = theta - eta g, optionally balanced, then relaxed toward the anchor.
  ParamVector delta(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) delta[i] = -cfg.eta * g[i];
  OnlineState& next = out.state;
  if (s.anchor_guided && cfg.balance_on) {
    auto balanced = balance_update(delta, theta, state.anchor, state.balance);
    delta = std::move(balanced.delta);
    next.balance = balanced.state;
  }
  ParamVector theta_next(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) theta_next[i] = theta[i] + delta[i];
  if (s.anchor_guided) {
    theta_next = relax_weights(theta_next, state.anchor);
    next.anchor = update_anchor(state.anchor, theta_next);
  }
  unpack_into(out.net, theta_next);
  rec.update_norm = drift_of(theta_next, theta);
  rec.drift = drift_of(theta_next, state.theta0);

  next.center = update_center(p.center, p.o_bar);
  next.moments = update_moments(p.moments, p.h_mean, p.h_sq_mean);
  next.step = state.step + 1;
  return out;
}

AlignmentProbe gradient_alignment_probe(const Network& net, const OnlineState& state, const Batch& batch,
                                        const AdaptConfig& cfg) {
  cfg.validate();
  const Strategy s = resolve(cfg);
  if (s.estimator == Estimator::none || s.estimator == Estimator::backprop) {
    throw ConfigError("gradient_alignment_probe needs a zeroth-order mode");
  }
  ForwardCounter counter;
  const Probe p = zo_probe(net, state, batch, cfg, s, step_seed_of(cfg, state), counter);
  AlignmentProbe result;
  if (p.valid_rows.empty()) {
    result.degenerate = true;
    return result;
  }
  const ParamLayout adapted(net, ParamSelection::adapted);
  const ParamVector g = accumulate_update(adapted, p.specs, p.scalars);
  const LossSpec spec = oracle_loss(net, s, cfg, p.center, p.moments, p.reference_norms);
  const ParamVector oracle = oracle_gradient(net, rows_of(batch.x, p.valid_rows), spec);
  result.cosine = cosine_similarity(g.values, oracle.values, &result.degenerate);
  return result;
}

double static_accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const auto out = forward(net, data.x);
  const auto pred = argmax_rows(out.logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.y[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

RunReport run_stream(const Network& net0, const Dataset& base, const StreamProtocol& protocol,
                     const AdaptConfig& cfg) {
  cfg.validate();
  RunReport report;
  report.reset = protocol.reset;
  if (protocol.domains.empty()) return report;

  const ParamVector theta0 = pack(net0);
  Network net = net0;
  OnlineState state = initial_state(net0, cfg);
  double acc_sum = 0.0;

  for (const auto& plan : protocol.domains) {
    if (protocol.reset == ResetPolicy::single_domain) {
      net = net0;
      state = initial_state(net0, cfg);
    }
    state.stream_salt = plan.corruption.seed;
    const Dataset data = corrupt(base, plan.corruption).subset(plan.order);
    DomainResult dom;
    dom.name = domain_name(plan.corruption);
    dom.start_drift = drift_of(pack(net), theta0);

    for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(data.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(end - start);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
      const Dataset mb = data.subset(idx);
      AdaptConfig step_cfg = cfg;
      step_cfg.k = std::min(cfg.k, idx.size());
      step_cfg.batch_size = std::max(cfg.batch_size, idx.size());
      StepOutcome outcome = adapt_step(net, state, Batch{mb.x, mb.y}, step_cfg);
      outcome.record.domain = dom.name;
      outcome.record.drift = drift_of(pack(outcome.net), theta0);
      for (char c : outcome.record.correct) dom.correct += c ? 1 : 0;
      dom.samples += idx.size();
      report.total_forwards += outcome.record.forwards;
      report.steps.push_back(std::move(outcome.record));
      net = std::move(outcome.net);
      state = std::move(outcome.state);
    }
    dom.accuracy = dom.samples ? static_cast<double>(dom.correct) / static_cast<double>(dom.samples) : 0.0;
    dom.end_drift = drift_of(pack(net), theta0);
    acc_sum += dom.accuracy;
    report.domains.push_back(dom);
  }
  report.average_accuracy = acc_sum / static_cast<double>(report.domains.size());
  report.final_drift = drift_of(pack(net), theta0);
  return report;
}

}  // namespace zofa
