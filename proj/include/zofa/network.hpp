#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zofa/tensor.hpp"

namespace zofa {

enum class LayerKind { linear, relu, tanh, layernorm, input_offset };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct Param {
  std::string name;
  Tensor value;
  bool adapted = false;
};

// One layer of a forward-only network. Parameter order inside a layer is
// fixed: linear (weight [out,in], bias [out]), layernorm (gain, shift),
// input-offset (offset).
struct Layer {
  LayerKind kind = LayerKind::relu;
  std::vector<Param> params;
  double epsilon = 1e-5;  // layernorm only

  static Layer linear(std::size_t in, std::size_t out);
  static Layer relu();
  static Layer tanh();
  static Layer layernorm(std::size_t width, double epsilon = 1e-5);
  static Layer input_offset(std::size_t width);

  // Width this layer requires from its input; 0 for elementwise activations.
  std::size_t input_width() const;
  std::size_t output_width(std::size_t in) const;

  Param& param(std::string_view name);
  const Param& param(std::string_view name) const;
};

// Per-dimension population mean and standard deviation of the tapped
// features over the source training set.
struct SourceStats {
  Tensor mean;
  Tensor stddev;
};

struct Network {
  std::vector<Layer> layers;
  std::size_t feature_tap = 0;  // index of the layer whose output is the feature h
  std::optional<SourceStats> source_stats;

  // Throws InputError on inconsistent widths, a misplaced input-offset, a bad
  // feature tap or mismatched source statistics.
  void validate() const;

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t feature_width() const;
  std::size_t adapted_count() const;
  std::size_t param_count() const;

  // Marks parameters adapted/frozen. The predicate sees (layer index, layer, param).
  void select_adapted(const std::function<bool(std::size_t, const Layer&, const Param&)>& pred);
  // Adapts layernorm gain/shift (and any input-offset), freezes the rest.
  void adapt_norm_affine();
};

enum class ParamSelection { adapted, all };

// Location of one parameter tensor inside the flat canonical ordering.
// tensor_id enumerates every parameter tensor of the network (adapted or not)
// in layer-major order and is the key used for perturbation regeneration.
struct TensorSlot {
  std::size_t tensor_id = 0;
  std::size_t layer = 0;
  std::size_t param = 0;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::vector<std::size_t> shape;
};

class ParamLayout {
 public:
  ParamLayout() = default;
  ParamLayout(const Network& net, ParamSelection selection);

  const std::vector<TensorSlot>& slots() const { return slots_; }
  std::size_t total() const { return total_; }
  std::size_t max_slot_size() const;
  // nullptr when the tensor is not part of this selection.
  const TensorSlot* find(std::size_t tensor_id) const;
  // Slots belonging to one layer.
  std::vector<const TensorSlot*> slots_of_layer(std::size_t layer) const;

 private:
  std::vector<TensorSlot> slots_;
  std::size_t total_ = 0;
};

struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

ParamVector pack(const Network& net, ParamSelection selection = ParamSelection::adapted);
void unpack_into(Network& net, const ParamVector& values, ParamSelection selection = ParamSelection::adapted);
Network with_params(Network net, const ParamVector& values, ParamSelection selection = ParamSelection::adapted);

// Counts per-sample network evaluations (one per row pushed through the model).
class ForwardCounter {
 public:
  void add(std::size_t rows) { count_ += rows; }
  std::size_t count() const { return count_; }
  void reset() { count_ = 0; }

 private:
  std::size_t count_ = 0;
};

struct ForwardResult {
  Tensor logits;    // [B, C]
  Tensor features;  // [B, F]
};

ForwardResult forward(const Network& net, const Tensor& x, ForwardCounter* counter = nullptr);

// Single-row kernel. `params` holds one span per parameter of the layer, in
// the layer's fixed order; callers may pass perturbed copies.
void apply_layer(const Layer& layer, std::span<const std::span<const double>> params,
                 std::span<const double> in, std::vector<double>& out);

// Symmetric per-tensor rounding of every frozen weight matrix to `bits` bits.
Network quantize_weights(const Network& net, int bits);

enum class Activation { relu, tanh };

struct MlpSpec {
  std::size_t input = 32;
  std::size_t hidden = 64;
  std::size_t classes = 10;
  std::size_t depth = 2;  // number of hidden blocks: linear -> layernorm -> activation
  Activation activation = Activation::relu;
  bool input_offset = false;
};

// Seeded MLP. Weights use a scaled-normal init, layernorm starts at identity.
// Adapted set defaults to the layernorm affine parameters; the feature tap is
// the last hidden activation.
Network make_mlp(const MlpSpec& spec, std::uint64_t seed);

}  // namespace zofa
