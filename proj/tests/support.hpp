#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "zofa/keyed_rng.hpp"
#include "zofa/network.hpp"

namespace zofa::testing {

inline Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  KeyedSampler rng(derive_key({seed, 0x6d6174ULL}));
  Tensor t({rows, cols});
  for (double& v : t.values()) v = scale * rng.gaussian();
  return t;
}

// Fills every parameter with seeded values; layernorm gains stay near 1.
inline void randomize(Network& net, std::uint64_t seed, double scale = 0.5) {
  KeyedSampler rng(derive_key({seed, 0x726e64ULL}));
  for (auto& layer : net.layers) {
    for (auto& p : layer.params) {
      for (double& v : p.value.values()) {
        v = scale * rng.gaussian();
        if (layer.kind == LayerKind::layernorm && p.name == "gain") v += 1.0;
      }
    }
  }
}

inline std::size_t zoo_size() { return 5; }

// Small networks covering every layer kind.
inline Network zoo_net(std::size_t which, std::uint64_t seed) {
  Network net;
  switch (which % zoo_size()) {
    case 0:
      net.layers = {Layer::input_offset(4), Layer::linear(4, 6), Layer::layernorm(6), Layer::tanh(),
                    Layer::linear(6, 3)};
      net.feature_tap = 3;
      break;
    case 1:
      net.layers = {Layer::linear(5, 8), Layer::relu(), Layer::layernorm(8), Layer::linear(8, 4)};
      net.feature_tap = 2;
      break;
    case 2: {
      MlpSpec spec;
      spec.input = 6;
      spec.hidden = 7;
      spec.classes = 4;
      spec.depth = 2;
      spec.activation = Activation::tanh;
      spec.input_offset = true;
      net = make_mlp(spec, seed);
      break;
    }
    case 3:
      net.layers = {Layer::layernorm(5), Layer::linear(5, 5), Layer::tanh(), Layer::linear(5, 3)};
      net.feature_tap = 2;
      break;
    default:
      net.layers = {Layer::linear(3, 4), Layer::layernorm(4), Layer::relu(), Layer::linear(4, 4),
                    Layer::layernorm(4), Layer::tanh(), Layer::linear(4, 2)};
      net.feature_tap = 5;
      break;
  }
  randomize(net, seed);
  net.adapt_norm_affine();
  net.validate();
  return net;
}

}  // namespace zofa::testing

namespace zofa::testing {

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

}  // namespace zofa::testing
