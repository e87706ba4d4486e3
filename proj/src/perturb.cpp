#include "zofa/perturb.hpp"

#include <algorithm>

#include "zofa/error.hpp"
#include "zofa/keyed_rng.hpp"

namespace zofa {

namespace {

constexpr std::uint64_t kGaussianTag = 0x67617573ULL;
constexpr std::uint64_t kUniformTag = 0x756E6966ULL;

}  // namespace

void draw_slot(const PerturbationSpec& spec, const TensorSlot& slot, std::span<double> out) {
  if (out.size() != slot.size) throw InputError("draw_slot: output size mismatch");
  if (spec.kind == PerturbationKind::gaussian) {
    const KeyedStream stream(derive_key({spec.step_seed, spec.sample_index, slot.tensor_id, kGaussianTag}));
    for (std::size_t j = 0; j < slot.size; ++j) out[j] = stream.gaussian(j);
    return;
  }
  if (!spec.anchor_direction) throw InputError("anchor-guided perturbation without an anchor direction");
  const auto& d = spec.anchor_direction->values;
  if (slot.offset + slot.size > d.size()) throw InputError("anchor direction shorter than the adapted layout");
  const KeyedStream stream(derive_key({spec.step_seed, spec.sample_index, slot.tensor_id, kUniformTag}));
  for (std::size_t j = 0; j < slot.size; ++j) out[j] = d[slot.offset + j] * (2.0 * stream.uniform01(j));
}

Tensor draw_layer_perturbation(const PerturbationSpec& spec, const ParamLayout& adapted, std::size_t tensor_id,
                               const std::vector<std::size_t>& shape) {
  const TensorSlot* slot = adapted.find(tensor_id);
  if (!slot) throw InputError("tensor " + std::to_string(tensor_id) + " is not in the adapted set");
  if (shape != slot->shape) {
    throw InputError("perturbation shape " + shape_string(shape) + " does not match adapted tensor " +
                     shape_string(slot->shape));
  }
  Tensor out(shape);
  draw_slot(spec, *slot, out.values());
  return out;
}

ParamVector materialize_perturbation(const PerturbationSpec& spec, const ParamLayout& adapted) {
  ParamVector z(adapted.total());
  for (const auto& slot : adapted.slots()) draw_slot(spec, slot, z.span().subspan(slot.offset, slot.size));
  return z;
}

namespace {

// RAII batch of regenerated perturbations for one adapted tensor.
class SlotBatch {
 public:
  SlotBatch(const TensorSlot& slot, std::span<const PerturbationSpec> specs, PerturbationMeter* meter)
      : size_(slot.size), data_(specs.size() * slot.size), meter_(meter) {
    if (meter_) meter_->acquire(data_.size());
    for (std::size_t i = 0; i < specs.size(); ++i) draw_slot(specs[i], slot, sample(i));
  }
  ~SlotBatch() {
    if (meter_) meter_->release(data_.size());
  }
  SlotBatch(const SlotBatch&) = delete;
  SlotBatch& operator=(const SlotBatch&) = delete;

  std::span<double> sample(std::size_t i) { return std::span<double>(data_).subspan(i * size_, size_); }
  std::span<const double> sample(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * size_, size_);
  }

 private:
  std::size_t size_;
  std::vector<double> data_;
  PerturbationMeter* meter_;
};

PerturbedOutputs perturbed_pass(const Network& net, const ParamLayout& adapted, const Tensor& x,
                                std::span<const PerturbationSpec> specs, bool two_sided, ForwardCounter* counter,
                                PerturbationMeter* meter) {
  if (x.rank() != 2 || x.cols() != net.input_width()) {
    throw InputError("perturbed forward: input shape " + shape_string(x.shape()) + " does not match network");
  }
  const std::size_t batch = x.rows();
  if (specs.size() != batch) throw InputError("perturbed forward: one perturbation spec per row required");
  for (const auto& s : specs) {
    if (!(s.scale > 0.0)) throw InputError("perturbation scale must be positive");
  }
  const std::size_t n_layers = net.layers.size();
  std::size_t first_adapted = n_layers;
  for (const auto& slot : adapted.slots()) first_adapted = std::min(first_adapted, slot.layer);

  const std::size_t sides = two_sided ? 2 : 1;
  const std::size_t c = net.output_width();
  const std::size_t f = net.feature_width();
  PerturbedOutputs out;
  out.logits_plus = Tensor({batch, c});
  out.features_plus = Tensor({batch, f});
  if (two_sided) {
    out.logits_minus = Tensor({batch, c});
    out.features_minus = Tensor({batch, f});
  }
  Tensor* logits[2] = {&out.logits_plus, &out.logits_minus};
  Tensor* features[2] = {&out.features_plus, &out.features_minus};

  std::vector<std::vector<std::span<const double>>> views(n_layers);
  for (std::size_t li = 0; li < n_layers; ++li)
    for (const auto& p : net.layers[li].params) views[li].push_back(p.value.values());

  // Shared frozen prefix, then one activation stream per (sample, side).
  std::vector<std::vector<double>> streams(batch * sides);
  std::vector<double> cur, next;
  for (std::size_t r = 0; r < batch; ++r) {
    auto row = x.row(r);
    cur.assign(row.begin(), row.end());
    for (std::size_t li = 0; li < first_adapted; ++li) {
      apply_layer(net.layers[li], views[li], cur, next);
      std::swap(cur, next);
      if (li == net.feature_tap) {
        for (std::size_t s = 0; s < sides; ++s) std::copy(cur.begin(), cur.end(), features[s]->row(r).begin());
      }
    }
    for (std::size_t s = 0; s < sides; ++s) streams[r * sides + s] = cur;
  }

  std::vector<std::span<const double>> layer_params;
  std::vector<std::vector<double>> composed;
  for (std::size_t li = first_adapted; li < n_layers; ++li) {
    const Layer& layer = net.layers[li];
    const auto slots = adapted.slots_of_layer(li);
    if (slots.empty()) {
      for (auto& st : streams) {
        apply_layer(layer, views[li], st, next);
        std::swap(st, next);
      }
    } else {
      std::vector<std::unique_ptr<SlotBatch>> batches;
      for (const TensorSlot* slot : slots) batches.push_back(std::make_unique<SlotBatch>(*slot, specs, meter));
      composed.assign(layer.params.size(), {});
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t s = 0; s < sides; ++s) {
          layer_params.assign(views[li].begin(), views[li].end());
          for (std::size_t k = 0; k < slots.size(); ++k) {
            const std::size_t pi = slots[k]->param;
            const auto base = views[li][pi];
            const auto z = batches[k]->sample(r);
            const double mu = specs[r].scale;
            auto& buf = composed[pi];
            buf.resize(base.size());
            // +mu z and -mu z come from the same product, so the pair is exactly symmetric.
            for (std::size_t j = 0; j < base.size(); ++j) {
              const double step = mu * z[j];
              buf[j] = s == 0 ? base[j] + step : base[j] - step;
            }
            layer_params[pi] = buf;
          }
          auto& st = streams[r * sides + s];
          apply_layer(layer, layer_params, st, next);
          std::swap(st, next);
        }
      }
    }
    if (li == net.feature_tap) {
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t s = 0; s < sides; ++s) {
          const auto& st = streams[r * sides + s];
          std::copy(st.begin(), st.end(), features[s]->row(r).begin());
        }
    }
  }

  out.plus_finite.assign(batch, 1);
  if (two_sided) out.minus_finite.assign(batch, 1);
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t s = 0; s < sides; ++s) {
      const auto& st = streams[r * sides + s];
      std::copy(st.begin(), st.end(), logits[s]->row(r).begin());
      const bool ok = vec::all_finite(logits[s]->row(r)) && vec::all_finite(features[s]->row(r));
      (s == 0 ? out.plus_finite : out.minus_finite)[r] = ok ? 1 : 0;
    }
  }
  if (counter) counter->add(batch * sides);
  return out;
}

}  // namespace

PerturbedOutputs symmetric_forward(const Network& net, const ParamLayout& adapted, const Tensor& x,
                                   std::span<const PerturbationSpec> specs, ForwardCounter* counter,
                                   PerturbationMeter* meter) {
  return perturbed_pass(net, adapted, x, specs, true, counter, meter);
}

PerturbedOutputs positive_forward(const Network& net, const ParamLayout& adapted, const Tensor& x,
                                  std::span<const PerturbationSpec> specs, ForwardCounter* counter,
                                  PerturbationMeter* meter) {
  return perturbed_pass(net, adapted, x, specs, false, counter, meter);
}

ParamVector accumulate_update(const ParamLayout& adapted, std::span<const PerturbationSpec> specs,
                              std::span<const double> scalars, PerturbationMeter* meter) {
  if (specs.size() != scalars.size()) {
    throw InputError("accumulate_update: " + std::to_string(specs.size()) + " specs but " +
                     std::to_string(scalars.size()) + " scalars");
  }
  ParamVector out(adapted.total());
  if (specs.empty()) return out;
  const double b = static_cast<double>(specs.size());
  for (const auto& slot : adapted.slots()) {
    const SlotBatch z(slot, specs, meter);
    for (std::size_t j = 0; j < slot.size; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < specs.size(); ++i) acc += scalars[i] * z.sample(i)[j];
      out[slot.offset + j] = acc / b;
    }
  }
  return out;
}

}  // namespace zofa
