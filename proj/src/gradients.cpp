#include "zofa/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "zofa/error.hpp"
#include "zofa/keyed_rng.hpp"

namespace zofa {

namespace {

std::vector<std::vector<std::span<const double>>> param_views(const Network& net) {
  std::vector<std::vector<std::span<const double>>> views(net.layers.size());
  for (std::size_t li = 0; li < net.layers.size(); ++li)
    for (const auto& p : net.layers[li].params) views[li].push_back(p.value.values());
  return views;
}

double reference_norm_for(const LossSpec& spec, std::size_t row, std::span<const double> logits) {
  if (spec.reference_norms.empty()) return vec::norm(logits);
  return spec.reference_norms.at(row);
}

void check_spec(const LossSpec& spec, std::size_t batch) {
  if (spec.kind == LossKind::cross_entropy && spec.labels.size() != batch) {
    throw InputError("cross-entropy loss needs one label per row");
  }
  if (!spec.reference_norms.empty() && spec.reference_norms.size() != batch) {
    throw InputError("reference norms must have one entry per row");
  }
  if (spec.lambda > 0.0 && !spec.source) throw ConfigError("lambda > 0 requires source statistics");
}

// Loss of one row plus, if requested, gradients w.r.t. logits and features.
double row_loss(const LossSpec& spec, std::size_t row, std::span<const double> logits,
                std::span<const double> features, std::vector<double>* g_logits, std::vector<double>* g_features) {
  double value = 0.0;
  std::vector<double> scratch(logits.size());
  std::span<double> gl = g_logits ? std::span<double>(*g_logits) : std::span<double>(scratch);
  switch (spec.kind) {
    case LossKind::cross_entropy: value = cross_entropy_grad(logits, spec.labels[row], gl); break;
    case LossKind::entropy: value = entropy_grad(logits, gl); break;
    case LossKind::sr_entropy:
      value = sr_entropy_grad(logits, reference_norm_for(spec, row, logits), spec.center, gl);
      break;
  }
  if (spec.lambda > 0.0) {
    std::vector<double> gf(features.size());
    value += spec.lambda * swa_grad(features, spec.moments, *spec.source, spec.rho, gf);
    if (g_features) {
      g_features->resize(features.size());
      for (std::size_t i = 0; i < gf.size(); ++i) (*g_features)[i] = spec.lambda * gf[i];
    }
  } else if (g_features) {
    g_features->assign(features.size(), 0.0);
  }
  return value;
}

}  // namespace

LossSpec freeze_reference_norms(const Network& net, const Tensor& x, LossSpec spec) {
  const auto out = forward(net, x);
  spec.reference_norms.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) spec.reference_norms[r] = vec::norm(out.logits.row(r));
  return spec;
}

double batch_loss(const Network& net, const Tensor& x, const LossSpec& spec) {
  const auto out = forward(net, x);
  check_spec(spec, x.rows());
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    total += row_loss(spec, r, out.logits.row(r), out.features.row(r), nullptr, nullptr);
  }
  return total / static_cast<double>(x.rows());
}

ParamVector grad_backprop(const Network& net, const Tensor& x, const LossSpec& spec, double* loss) {
  if (x.rank() != 2 || x.cols() != net.input_width()) throw InputError("grad_backprop: input shape mismatch");
  check_spec(spec, x.rows());
  const std::size_t batch = x.rows();
  const auto views = param_views(net);
  const ParamLayout layout(net, ParamSelection::all);
  // Offsets of each layer's parameters inside the all-parameter vector.
  std::vector<std::vector<std::size_t>> offsets(net.layers.size());
  for (const auto& s : layout.slots()) offsets[s.layer].push_back(s.offset);

  ParamVector grad(layout.total());
  double total = 0.0;
  const std::size_t n_layers = net.layers.size();
  std::vector<std::vector<double>> acts(n_layers + 1);
  std::vector<double> g_logits, g_features, dy, dx;

  for (std::size_t r = 0; r < batch; ++r) {
    auto in = x.row(r);
    acts[0].assign(in.begin(), in.end());
    for (std::size_t li = 0; li < n_layers; ++li) apply_layer(net.layers[li], views[li], acts[li], acts[li + 1]);
    const auto& logits = acts[n_layers];
    g_logits.assign(logits.size(), 0.0);
    total += row_loss(spec, r, logits, acts[net.feature_tap + 1], &g_logits, &g_features);

    dy = g_logits;
    for (std::size_t li = n_layers; li-- > 0;) {
      if (li == net.feature_tap) {
        for (std::size_t i = 0; i < dy.size(); ++i) dy[i] += g_features[i];
      }
      const Layer& layer = net.layers[li];
      const auto& xin = acts[li];
      const auto& yout = acts[li + 1];
      dx.assign(xin.size(), 0.0);
      switch (layer.kind) {
        case LayerKind::linear: {
          const auto w = views[li][0];
          const std::size_t n_in = xin.size();
          double* gw = grad.values.data() + offsets[li][0];
          double* gb = grad.values.data() + offsets[li][1];
          for (std::size_t o = 0; o < dy.size(); ++o) {
            const double d = dy[o];
            gb[o] += d;
            for (std::size_t i = 0; i < n_in; ++i) {
              gw[o * n_in + i] += d * xin[i];
              dx[i] += w[o * n_in + i] * d;
            }
          }
          break;
        }
        case LayerKind::relu:
          for (std::size_t i = 0; i < xin.size(); ++i) dx[i] = xin[i] > 0.0 ? dy[i] : 0.0;
          break;
        case LayerKind::tanh:
          for (std::size_t i = 0; i < xin.size(); ++i) dx[i] = dy[i] * (1.0 - yout[i] * yout[i]);
          break;
        case LayerKind::layernorm: {
          const auto gain = views[li][0];
          const std::size_t n = xin.size();
          double mean = 0.0;
          for (double v : xin) mean += v;
          mean /= static_cast<double>(n);
          double var = 0.0;
          for (double v : xin) var += (v - mean) * (v - mean);
          var /= static_cast<double>(n);
          const double inv = 1.0 / std::sqrt(var + layer.epsilon);
          double* gg = grad.values.data() + offsets[li][0];
          double* gs = grad.values.data() + offsets[li][1];
          std::vector<double> xhat(n), dxhat(n);
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double c = xin[i] - mean;
            xhat[i] = c == 0.0 ? 0.0 : c * inv;
            gg[i] += dy[i] * xhat[i];
            gs[i] += dy[i];
            dxhat[i] = dy[i] * gain[i];
            sum_dxhat += dxhat[i];
            sum_dxhat_xhat += dxhat[i] * xhat[i];
          }
          if (std::isfinite(inv)) {
            const double nd = static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
              dx[i] = inv / nd * (nd * dxhat[i] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
            }
          }
          break;
        }
        case LayerKind::input_offset: {
          double* go = grad.values.data() + offsets[li][0];
          for (std::size_t i = 0; i < dy.size(); ++i) {
            go[i] += dy[i];
            dx[i] = dy[i];
          }
          break;
        }
        default:
          throw CapabilityError("grad_backprop: no reverse rule for layer kind " + std::string(to_string(layer.kind)));
      }
      std::swap(dy, dx);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (double& g : grad.values) g *= inv_b;
  if (loss) *loss = total * inv_b;
  return grad;
}

ParamVector select_params(const Network& net, const ParamVector& all, ParamSelection selection) {
  const ParamLayout full(net, ParamSelection::all);
  if (all.size() != full.total()) throw InputError("select_params: expected an all-parameter vector");
  if (selection == ParamSelection::all) return all;
  const ParamLayout sub(net, selection);
  ParamVector out(sub.total());
  for (const auto& s : sub.slots()) {
    const TensorSlot* src = full.find(s.tensor_id);
    std::copy_n(all.values.begin() + static_cast<std::ptrdiff_t>(src->offset), s.size,
                out.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return out;
}

namespace {

double fd_step(double theta) { return 1e-5 * std::max(1.0, std::abs(theta)); }

[[noreturn]] void non_finite_probe(std::size_t coord, double value) {
  std::ostringstream os;
  os << "finite differences: non-finite loss " << value << " at coordinate " << coord;
  throw NumericalError(os.str());
}

}  // namespace

std::vector<double> grad_finite_diff(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> theta) {
  if (theta.size() > kFiniteDiffMaxParams) throw InputError("finite differences limited to 10000 parameters");
  std::vector<double> probe(theta.begin(), theta.end());
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double h = fd_step(theta[i]);
    probe[i] = theta[i] + h;
    const double up = loss(probe);
    if (!std::isfinite(up)) non_finite_probe(i, up);
    probe[i] = theta[i] - h;
    const double down = loss(probe);
    if (!std::isfinite(down)) non_finite_probe(i, down);
    probe[i] = theta[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

ParamVector grad_finite_diff(const Network& net, const NetworkLoss& loss, ParamSelection subset) {
  const ParamVector theta = pack(net, subset);
  if (theta.size() > kFiniteDiffMaxParams) throw InputError("finite differences limited to 10000 parameters");
  Network probe = net;
  auto eval = [&](std::span<const double> values) {
    unpack_into(probe, ParamVector(std::vector<double>(values.begin(), values.end())), subset);
    return loss(probe);
  };
  return ParamVector(grad_finite_diff(eval, theta.values));
}

SourceStats compute_source_stats(const Network& net, const Tensor& x) {
  if (x.rank() != 2 || x.rows() == 0) throw InputError("source statistics need a non-empty input set");
  const auto out = forward(net, x);
  const std::size_t f = out.features.cols();
  const double n = static_cast<double>(x.rows());
  std::vector<double> mean(f, 0.0), var(f, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < f; ++j) mean[j] += out.features.at(r, j);
  for (double& m : mean) m /= n;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const double d = out.features.at(r, j) - mean[j];
      var[j] += d * d;
    }
  for (double& v : var) v = std::sqrt(v / n);
  return {Tensor::vector(std::move(mean)), Tensor::vector(std::move(var))};
}

Network pretrain_source(const Network& net, const Dataset& data, const PretrainOptions& options) {
  data.validate();
  if (data.size() == 0) throw InputError("pretrain_source: empty training set");
  if (options.lr < 0.0) throw InputError("pretrain_source: negative learning rate");
  Network trained = net;
  ParamVector theta = pack(trained, ParamSelection::all);
  const std::size_t n = data.size();
  const std::size_t batch = options.batch_size == 0 ? n : std::min(options.batch_size, n);
  KeyedSampler rng(derive_key({options.seed, 0x707265ULL}));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;

  for (std::size_t step = 0; step < options.steps; ++step) {
    Dataset mb;
    if (batch == n) {
      mb = data;
    } else {
      if (cursor + batch > n) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        cursor = 0;
      }
      mb = data.subset(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                                order.begin() + static_cast<std::ptrdiff_t>(cursor + batch)));
      cursor += batch;
    }
    LossSpec spec;
    spec.kind = LossKind::cross_entropy;
    spec.labels = mb.y;
    double loss = 0.0;
    const ParamVector g = grad_backprop(trained, mb.x, spec, &loss);
    if (!std::isfinite(loss) || !vec::all_finite(g.values)) {
      throw NumericalError("pretraining diverged at step " + std::to_string(step));
    }
    if (options.lr == 0.0) continue;
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= options.lr * g[i];
    unpack_into(trained, theta, ParamSelection::all);
  }
  trained.source_stats = compute_source_stats(trained, data.x);
  return trained;
}

}  // namespace zofa
