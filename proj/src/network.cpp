#include "zofa/network.hpp"

#include <algorithm>
#include <cmath>

#include "zofa/error.hpp"
#include "zofa/keyed_rng.hpp"

namespace zofa {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::layernorm: return "layernorm";
    case LayerKind::input_offset: return "input-offset";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  if (name == "linear") return LayerKind::linear;
  if (name == "relu") return LayerKind::relu;
  if (name == "tanh") return LayerKind::tanh;
  if (name == "layernorm") return LayerKind::layernorm;
  if (name == "input-offset") return LayerKind::input_offset;
  throw CapabilityError("unsupported layer kind '" + std::string(name) + "'");
}

Layer Layer::linear(std::size_t in, std::size_t out) {
  Layer l;
  l.kind = LayerKind::linear;
  l.params.push_back({"weight", Tensor({out, in}), false});
  l.params.push_back({"bias", Tensor({out}), false});
  return l;
}

Layer Layer::relu() { return Layer{LayerKind::relu, {}, 0.0}; }

Layer Layer::tanh() { return Layer{LayerKind::tanh, {}, 0.0}; }

Layer Layer::layernorm(std::size_t width, double epsilon) {
  Layer l;
  l.kind = LayerKind::layernorm;
  l.epsilon = epsilon;
  l.params.push_back({"gain", Tensor({width}, 1.0), false});
  l.params.push_back({"shift", Tensor({width}), false});
  return l;
}

Layer Layer::input_offset(std::size_t width) {
  Layer l;
  l.kind = LayerKind::input_offset;
  l.params.push_back({"offset", Tensor({width}), false});
  return l;
}

std::size_t Layer::input_width() const {
  switch (kind) {
    case LayerKind::linear: return params.at(0).value.dim(1);
    case LayerKind::layernorm:
    case LayerKind::input_offset: return params.at(0).value.size();
    default: return 0;
  }
}

std::size_t Layer::output_width(std::size_t in) const {
  if (kind == LayerKind::linear) return params.at(0).value.dim(0);
  return in;
}

Param& Layer::param(std::string_view name) {
  for (auto& p : params) {
    if (p.name == name) return p;
  }
  throw InputError("layer " + std::string(to_string(kind)) + " has no parameter '" + std::string(name) + "'");
}

const Param& Layer::param(std::string_view name) const { return const_cast<Layer*>(this)->param(name); }

void Network::validate() const {
  if (layers.empty()) throw InputError("network has no layers");
  std::size_t width = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.kind == LayerKind::input_offset && i != 0) {
      throw InputError("input-offset layer may only appear first (found at " + std::to_string(i) + ")");
    }
    switch (l.kind) {
      case LayerKind::linear:
        if (l.params.size() != 2 || l.params[0].value.rank() != 2 ||
            l.params[1].value.size() != l.params[0].value.dim(0)) {
          throw InputError("malformed linear layer at " + std::to_string(i));
        }
        break;
      case LayerKind::layernorm:
        if (l.params.size() != 2 || l.params[0].value.size() != l.params[1].value.size()) {
          throw InputError("layernorm gain/shift length mismatch at layer " + std::to_string(i));
        }
        break;
      case LayerKind::input_offset:
        if (l.params.size() != 1) throw InputError("malformed input-offset layer");
        break;
      default:
        if (!l.params.empty()) throw InputError("activation layer carries parameters");
    }
    const std::size_t need = l.input_width();
    if (i == 0) {
      width = need;
      if (width == 0) throw InputError("first layer must fix the input width");
    } else if (need != 0 && need != width) {
      throw InputError("layer " + std::to_string(i) + " expects width " + std::to_string(need) + ", got " +
                       std::to_string(width));
    }
    width = l.output_width(width);
  }
  if (feature_tap >= layers.size()) {
    throw InputError("feature_tap " + std::to_string(feature_tap) + " does not index a layer");
  }
  if (source_stats) {
    const std::size_t f = feature_width();
    if (source_stats->mean.size() != f || source_stats->stddev.size() != f) {
      throw InputError("source statistics width does not match the feature width");
    }
    for (double s : source_stats->stddev.values()) {
      if (!(s >= 0.0)) throw InputError("source stddev must be nonnegative");
    }
  }
}

std::size_t Network::input_width() const { return layers.front().input_width(); }

std::size_t Network::output_width() const {
  std::size_t w = input_width();
  for (const auto& l : layers) w = l.output_width(w);
  return w;
}

std::size_t Network::feature_width() const {
  std::size_t w = input_width();
  for (std::size_t i = 0; i <= feature_tap && i < layers.size(); ++i) w = layers[i].output_width(w);
  return w;
}

std::size_t Network::adapted_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& p : l.params)
      if (p.adapted) n += p.value.size();
  return n;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& p : l.params) n += p.value.size();
  return n;
}

void Network::select_adapted(const std::function<bool(std::size_t, const Layer&, const Param&)>& pred) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (auto& p : layers[i].params) p.adapted = pred(i, layers[i], p);
}

void Network::adapt_norm_affine() {
  select_adapted([](std::size_t, const Layer& l, const Param&) {
    return l.kind == LayerKind::layernorm || l.kind == LayerKind::input_offset;
  });
}

ParamLayout::ParamLayout(const Network& net, ParamSelection selection) {
  std::size_t id = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const auto& params = net.layers[li].params;
    for (std::size_t pi = 0; pi < params.size(); ++pi, ++id) {
      const Param& p = params[pi];
      if (selection == ParamSelection::adapted && !p.adapted) continue;
      slots_.push_back({id, li, pi, total_, p.value.size(), p.value.shape()});
      total_ += p.value.size();
    }
  }
}

std::size_t ParamLayout::max_slot_size() const {
  std::size_t m = 0;
  for (const auto& s : slots_) m = std::max(m, s.size);
  return m;
}

const TensorSlot* ParamLayout::find(std::size_t tensor_id) const {
  for (const auto& s : slots_)
    if (s.tensor_id == tensor_id) return &s;
  return nullptr;
}

std::vector<const TensorSlot*> ParamLayout::slots_of_layer(std::size_t layer) const {
  std::vector<const TensorSlot*> out;
  for (const auto& s : slots_)
    if (s.layer == layer) out.push_back(&s);
  return out;
}

ParamVector pack(const Network& net, ParamSelection selection) {
  const ParamLayout layout(net, selection);
  ParamVector out(layout.total());
  for (const auto& s : layout.slots()) {
    const auto src = net.layers[s.layer].params[s.param].value.values();
    std::copy(src.begin(), src.end(), out.values.begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return out;
}

void unpack_into(Network& net, const ParamVector& values, ParamSelection selection) {
  const ParamLayout layout(net, selection);
  if (values.size() != layout.total()) {
    throw InputError("parameter vector length " + std::to_string(values.size()) + " != " +
                     std::to_string(layout.total()));
  }
  for (const auto& s : layout.slots()) {
    auto dst = net.layers[s.layer].params[s.param].value.values();
    std::copy_n(values.values.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, dst.begin());
  }
}

Network with_params(Network net, const ParamVector& values, ParamSelection selection) {
  unpack_into(net, values, selection);
  return net;
}

void apply_layer(const Layer& layer, std::span<const std::span<const double>> params,
                 std::span<const double> in, std::vector<double>& out) {
  switch (layer.kind) {
    case LayerKind::linear: {
      const auto w = params[0];
      const auto b = params[1];
      const std::size_t n_out = b.size();
      const std::size_t n_in = in.size();
      out.assign(n_out, 0.0);
      for (std::size_t o = 0; o < n_out; ++o) {
        double acc = b[o];
        const double* row = w.data() + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * in[i];
        out[o] = acc;
      }
      return;
    }
    case LayerKind::relu:
      out.resize(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] < 0.0 ? 0.0 : in[i];  // NaN passes through
      return;
    case LayerKind::tanh:
      out.resize(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
      return;
    case LayerKind::layernorm: {
      const auto gain = params[0];
      const auto shift = params[1];
      const std::size_t n = in.size();
      double mean = 0.0;
      for (double v : in) mean += v;
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (double v : in) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + layer.epsilon);
      out.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Zero-variance rows with epsilon 0 normalize to 0 rather than NaN.
        const double centered = in[i] - mean;
        const double normalized = centered == 0.0 ? 0.0 : centered * inv;
        out[i] = gain[i] * normalized + shift[i];
      }
      return;
    }
    case LayerKind::input_offset: {
      const auto offset = params[0];
      out.resize(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + offset[i];
      return;
    }
  }
  throw CapabilityError("unsupported layer kind");
}

ForwardResult forward(const Network& net, const Tensor& x, ForwardCounter* counter) {
  if (x.rank() != 2 || x.cols() != net.input_width()) {
    throw InputError("forward: input shape " + shape_string(x.shape()) + " does not match input width " +
                     std::to_string(net.input_width()));
  }
  const std::size_t batch = x.rows();
  std::vector<std::vector<std::span<const double>>> views(net.layers.size());
  for (std::size_t li = 0; li < net.layers.size(); ++li)
    for (const auto& p : net.layers[li].params) views[li].push_back(p.value.values());

  Tensor logits({batch, net.output_width()});
  Tensor features({batch, net.feature_width()});
  std::vector<double> cur, next;
  for (std::size_t r = 0; r < batch; ++r) {
    auto row = x.row(r);
    cur.assign(row.begin(), row.end());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      apply_layer(net.layers[li], views[li], cur, next);
      std::swap(cur, next);
      if (li == net.feature_tap) std::copy(cur.begin(), cur.end(), features.row(r).begin());
    }
    std::copy(cur.begin(), cur.end(), logits.row(r).begin());
  }
  if (counter) counter->add(batch);
  return {std::move(logits), std::move(features)};
}

namespace {

// Scale fixed point of s -> (s * levels) / levels, so a second quantization
// pass recovers the same scale and reproduces the tensor bit-exactly.
double stable_scale(double max_abs, double levels) {
  double s = max_abs / levels;
  for (int i = 0; i < 8; ++i) {
    const double back = (s * levels) / levels;
    if (back == s) break;
    s = back;
  }
  return s;
}

}  // namespace

Network quantize_weights(const Network& net, int bits) {
  if (bits < 2 || bits > 32) throw InputError("quantize_weights: bits must be in [2, 32]");
  Network out = net;
  const double levels = std::ldexp(1.0, bits - 1) - 1.0;
  for (auto& layer : out.layers) {
    if (layer.kind != LayerKind::linear) continue;
    Param& w = layer.params[0];
    if (w.adapted) continue;
    double max_abs = 0.0;
    for (double v : w.value.values()) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs == 0.0) continue;
    const double s = stable_scale(max_abs, levels);
    for (double& v : w.value.values()) v = s * std::round(v / s);
  }
  return out;
}

Network make_mlp(const MlpSpec& spec, std::uint64_t seed) {
  if (spec.input == 0 || spec.hidden == 0 || spec.classes == 0 || spec.depth == 0) {
    throw InputError("make_mlp: widths and depth must be positive");
  }
  Network net;
  KeyedSampler rng(derive_key({seed, 0x6D6C70ULL}));
  if (spec.input_offset) net.layers.push_back(Layer::input_offset(spec.input));
  auto init_linear = [&](std::size_t in, std::size_t out) {
    Layer l = Layer::linear(in, out);
    const double scale = std::sqrt(2.0 / static_cast<double>(in));
    for (double& v : l.params[0].value.values()) v = scale * rng.gaussian();
    return l;
  };
  std::size_t width = spec.input;
  for (std::size_t b = 0; b < spec.depth; ++b) {
    net.layers.push_back(init_linear(width, spec.hidden));
    net.layers.push_back(Layer::layernorm(spec.hidden));
    net.layers.push_back(spec.activation == Activation::relu ? Layer::relu() : Layer::tanh());
    width = spec.hidden;
  }
  net.feature_tap = net.layers.size() - 1;
  net.layers.push_back(init_linear(width, spec.classes));
  net.adapt_norm_affine();
  net.validate();
  return net;
}

}  // namespace zofa
