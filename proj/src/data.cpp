#include "zofa/data.hpp"

#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include "zofa/binary_io.hpp"
#include "zofa/error.hpp"
#include "zofa/keyed_rng.hpp"

namespace zofa {

void Dataset::validate() const {
  if (y.empty()) {
    if (!x.empty()) throw InputError("dataset has rows but no labels");
    return;
  }
  if (x.rank() != 2 || x.rows() != y.size()) throw InputError("dataset rows and labels disagree");
  for (int label : y) {
    if (label < 0 || (meta.classes > 0 && static_cast<std::size_t>(label) >= meta.classes)) {
      throw InputError("label " + std::to_string(label) + " out of range");
    }
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.meta = meta;
  if (indices.empty()) return out;
  const std::size_t d = x.cols();
  std::vector<double> data;
  data.reserve(indices.size() * d);
  for (std::size_t i : indices) {
    if (i >= size()) throw InputError("subset index out of range");
    auto r = x.row(i);
    data.insert(data.end(), r.begin(), r.end());
    out.y.push_back(y[i]);
  }
  out.x = Tensor::matrix(indices.size(), d, std::move(data));
  return out;
}

namespace {

// Stream tags keep the keyed streams of unrelated purposes apart.
enum : std::uint64_t {
  kTagMeans = 0x10,
  kTagOffset,
  kTagCovariance,
  kTagTrain,
  kTagTest,
  kTagNoise,
  kTagScale,
  kTagRotation,
  kTagMask,
  kTagOrder,
};

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t key) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  KeyedSampler rng(key);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

Dataset sample_split(const TaskSpec& spec, const std::vector<std::vector<double>>& means,
                     const std::vector<double>& cov, std::size_t n, std::uint64_t tag, const std::string& domain) {
  Dataset ds;
  ds.meta = {spec.seed, spec.dim, spec.classes, domain, 0};
  if (n == 0) return ds;
  const std::size_t d = spec.dim;
  std::vector<double> data(n * d);
  std::vector<double> eps(d);
  KeyedSampler rng(derive_key({spec.seed, tag}));
  for (std::size_t r = 0; r < n; ++r) {
    const int label = static_cast<int>(rng.below(spec.classes));
    for (auto& e : eps) e = rng.gaussian();
    for (std::size_t i = 0; i < d; ++i) {
      double acc = means[static_cast<std::size_t>(label)][i];
      for (std::size_t j = 0; j < d; ++j) acc += cov[i * d + j] * eps[j];
      data[r * d + i] = acc;
    }
    ds.y.push_back(label);
  }
  ds.x = Tensor::matrix(n, d, std::move(data));
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> make_source_task(const TaskSpec& spec) {
  if (spec.dim < 2) throw InputError("make_source_task: d must be at least 2");
  if (spec.classes < 2) throw InputError("make_source_task: C must be at least 2");
  const std::size_t d = spec.dim;

  KeyedSampler offset_rng(derive_key({spec.seed, kTagOffset}));
  std::vector<double> offset(d);
  for (auto& v : offset) v = offset_rng.gaussian();
  const double on = vec::norm(offset);
  for (auto& v : offset) v *= spec.offset / on;

  KeyedSampler mean_rng(derive_key({spec.seed, kTagMeans}));
  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(d));
  for (auto& m : means) {
    for (auto& v : m) v = mean_rng.gaussian();
    const double n = vec::norm(m);
    for (std::size_t i = 0; i < d; ++i) m[i] = offset[i] + spec.radius * m[i] / n;
  }

  // Shared covariance factor: noise * (I + 0.5 G / sqrt(d)).
  KeyedSampler cov_rng(derive_key({spec.seed, kTagCovariance}));
  std::vector<double> cov(d * d);
  const double mix = 0.5 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) cov[i * d + j] = spec.noise * ((i == j ? 1.0 : 0.0) + mix * cov_rng.gaussian());

  // A crowded configuration is still generated; callers see the warning in
  // the dataset's domain tag.
  const double min_sep = 2.0 * spec.radius * std::sin(std::numbers::pi / static_cast<double>(spec.classes));
  const std::string tag = min_sep < spec.noise ? "source(crowded)" : "source";

  return {sample_split(spec, means, cov, spec.n_train, kTagTrain, tag),
          sample_split(spec, means, cov, spec.n_test, kTagTest, tag)};
}

std::string_view to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gauss_noise: return "gauss-noise";
    case CorruptionKind::feature_scale: return "feature-scale";
    case CorruptionKind::rotation_2plane: return "rotation-2plane";
    case CorruptionKind::mask_dropout: return "mask-dropout";
    case CorruptionKind::mixed: return "mixed";
  }
  return "unknown";
}

CorruptionKind corruption_kind_from_string(std::string_view name) {
  if (name == "gauss-noise") return CorruptionKind::gauss_noise;
  if (name == "feature-scale") return CorruptionKind::feature_scale;
  if (name == "rotation-2plane") return CorruptionKind::rotation_2plane;
  if (name == "mask-dropout") return CorruptionKind::mask_dropout;
  if (name == "mixed") return CorruptionKind::mixed;
  throw InputError("unknown corruption kind '" + std::string(name) + "'");
}

double severity_fraction(int severity) {
  if (severity < 0 || severity > 5) throw InputError("severity must be in 0..5");
  return 0.2 * severity;
}

std::string domain_name(const CorruptionSpec& spec) {
  std::ostringstream os;
  os << to_string(spec.kind) << '/' << spec.severity << '/' << spec.seed;
  return os.str();
}

namespace {

void add_noise(Tensor& x, double sigma, std::uint64_t seed) {
  if (sigma == 0.0) return;
  KeyedSampler rng(derive_key({seed, kTagNoise}));
  for (double& v : x.values()) v += sigma * rng.gaussian();
}

void scale_features(Tensor& x, double spread, std::uint64_t seed) {
  if (spread == 0.0) return;
  KeyedSampler rng(derive_key({seed, kTagScale}));
  std::vector<double> factors(x.cols());
  for (auto& f : factors) f = std::exp(spread * rng.gaussian());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) x.at(r, j) *= factors[j];
}

}  // namespace

Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec) {
  const double frac = severity_fraction(spec.severity);
  Dataset out = ds;
  out.meta.domain = domain_name(spec);
  out.meta.severity = spec.severity;
  if (ds.size() == 0) return out;
  Tensor& x = out.x;
  const std::size_t d = x.cols();
  switch (spec.kind) {
    case CorruptionKind::gauss_noise: add_noise(x, frac * 2.0, spec.seed); break;
    case CorruptionKind::feature_scale: scale_features(x, frac * 0.8, spec.seed); break;
    case CorruptionKind::rotation_2plane: {
      if (d < 2) throw InputError("rotation-2plane needs at least 2 features");
      const double angle = frac * std::numbers::pi / 4.0;
      if (angle == 0.0) break;
      const auto perm = seeded_permutation(d, derive_key({spec.seed, kTagRotation}));
      const double c = std::cos(angle), s = std::sin(angle);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t p = 0; p + 1 < d; p += 2) {
          double& a = x.at(r, perm[p]);
          double& b = x.at(r, perm[p + 1]);
          const double na = c * a - s * b;
          const double nb = s * a + c * b;
          a = na;
          b = nb;
        }
      }
      break;
    }
    case CorruptionKind::mask_dropout: {
      const auto count = static_cast<std::size_t>(std::lround(frac * 0.5 * static_cast<double>(d)));
      const auto perm = seeded_permutation(d, derive_key({spec.seed, kTagMask}));
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t k = 0; k < count; ++k) x.at(r, perm[k]) = 0.0;
      break;
    }
    case CorruptionKind::mixed:
      scale_features(x, frac * 0.8, spec.seed);
      add_noise(x, frac * 2.0, spec.seed);
      break;
  }
  return out;
}

StreamProtocol build_protocol(const std::vector<CorruptionSpec>& domains, std::size_t base_size,
                              std::size_t samples_per_domain, std::uint64_t order_seed, ResetPolicy reset) {
  StreamProtocol protocol;
  protocol.reset = reset;
  const std::size_t take = (samples_per_domain == 0 || samples_per_domain > base_size) ? base_size : samples_per_domain;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    auto perm = seeded_permutation(base_size, derive_key({order_seed, kTagOrder, i}));
    perm.resize(take);
    protocol.domains.push_back({domains[i], std::move(perm)});
  }
  return protocol;
}

std::vector<CorruptionSpec> preset_domains(int severity, std::uint64_t seed) {
  using K = CorruptionKind;
  const std::vector<std::pair<K, int>> groups = {
      {K::gauss_noise, 3}, {K::feature_scale, 4}, {K::rotation_2plane, 4}, {K::mask_dropout, 2}, {K::mixed, 2}};
  std::vector<CorruptionSpec> out;
  std::uint64_t index = 0;
  for (const auto& [kind, count] : groups) {
    for (int i = 0; i < count; ++i) out.push_back({kind, severity, derive_key({seed, 0x7072ULL, index++})});
  }
  return out;
}

std::vector<CorruptionSpec> parse_domain_list(std::string_view text, int default_severity, std::uint64_t seed) {
  if (text == "preset15") return preset_domains(default_severity, seed);
  std::vector<CorruptionSpec> out;
  std::size_t pos = 0;
  std::uint64_t index = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    std::string_view item = text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos);
    pos = comma == std::string_view::npos ? text.size() + 1 : comma + 1;
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (item.empty()) continue;
    CorruptionSpec spec;
    spec.severity = default_severity;
    spec.seed = derive_key({seed, 0x7072ULL, index++});
    const std::size_t c1 = item.find(':');
    spec.kind = corruption_kind_from_string(item.substr(0, c1));
    if (c1 != std::string_view::npos) {
      const std::string_view rest = item.substr(c1 + 1);
      const std::size_t c2 = rest.find(':');
      try {
        spec.severity = std::stoi(std::string(rest.substr(0, c2)));
        if (c2 != std::string_view::npos) spec.seed = std::stoull(std::string(rest.substr(c2 + 1)));
      } catch (const std::exception&) {
        throw InputError("malformed domain entry '" + std::string(item) + "'");
      }
      severity_fraction(spec.severity);
    }
    out.push_back(spec);
  }
  if (out.empty()) throw InputError("domain list is empty");
  return out;
}

namespace {
constexpr std::string_view kDatasetMagic = "ZOFD1";
}

std::string encode_dataset(const Dataset& ds) {
  ds.validate();
  ByteWriter w;
  w.bytes(kDatasetMagic);
  const std::size_t n = ds.size();
  const std::size_t d = n ? ds.x.cols() : ds.meta.dim;
  w.u32(static_cast<std::uint32_t>(n));
  w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(ds.meta.classes));
  if (n) w.f64s(ds.x.values());
  for (int label : ds.y) w.i32(label);
  return w.buffer();
}

Dataset decode_dataset(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(kDatasetMagic.size()) != kDatasetMagic) throw IoError("not a ZOFD1 dataset file (bad magic)");
  const std::size_t n = r.u32();
  const std::size_t d = r.u32();
  Dataset ds;
  ds.meta.classes = r.u32();
  ds.meta.dim = d;
  ds.meta.domain = "external";
  if (n > 0) {
    if (d == 0) throw IoError("dataset with rows but zero width");
    ds.x = Tensor::matrix(n, d, r.f64s(n * d));
  }
  ds.y.resize(n);
  for (auto& label : ds.y) label = r.i32();
  if (!r.at_end()) throw IoError("trailing bytes after dataset payload");
  try {
    ds.validate();
  } catch (const InputError& e) {
    throw IoError(std::string("invalid dataset file: ") + e.what());
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) { write_file(path, encode_dataset(ds)); }

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace zofa
