#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zofa/dataset.hpp"

namespace zofa {

struct TaskSpec {
  std::uint64_t seed = 0;
  std::size_t dim = 32;
  std::size_t classes = 10;
  std::size_t n_train = 4000;
  std::size_t n_test = 2000;
  double radius = 4.0;      // class means lie on a sphere of this radius
  double noise = 1.0;       // isotropic scale of the shared covariance
  double offset = 8.0;      // norm of the common mean offset
};

// Gaussian class clusters with a shared covariance. Train and test rows are
// drawn from disjoint counter ranges of the same keyed stream.
std::pair<Dataset, Dataset> make_source_task(const TaskSpec& spec);

enum class CorruptionKind { gauss_noise, feature_scale, rotation_2plane, mask_dropout, mixed };

std::string_view to_string(CorruptionKind kind);
CorruptionKind corruption_kind_from_string(std::string_view name);

// Severity 1..5 scales the intensity linearly (0.2, 0.4, ..., 1.0 of the kind's
// base strength); severity 0 is the identity.
//   gauss-noise      x + sigma * N(0,1),      sigma = 0.2 * sev * 2.0
//   feature-scale    x_j * exp(spread * n_j), spread = 0.2 * sev * 0.8
//   rotation-2plane  rotate d/2 seeded coordinate pairs by angle 0.2 * sev * pi/4
//   mask-dropout     zero a seeded fraction 0.2 * sev * 0.5 of the features
//   mixed            feature-scale then gauss-noise, both at this severity
struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gauss_noise;
  int severity = 5;
  std::uint64_t seed = 0;
};

double severity_fraction(int severity);
std::string domain_name(const CorruptionSpec& spec);

Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec);

enum class ResetPolicy { single_domain, continual };

struct DomainPlan {
  CorruptionSpec corruption;
  std::vector<std::size_t> order;  // indices into the base test set
};

struct StreamProtocol {
  std::vector<DomainPlan> domains;
  ResetPolicy reset = ResetPolicy::single_domain;
};

// Each domain draws `samples_per_domain` rows (all rows when 0 or larger than
// the set) in a seeded order keyed by (order_seed, domain position).
StreamProtocol build_protocol(const std::vector<CorruptionSpec>& domains, std::size_t base_size,
                              std::size_t samples_per_domain, std::uint64_t order_seed,
                              ResetPolicy reset = ResetPolicy::single_domain);

// Fifteen domains in four groups: three noise, four feature-scale ("blur"),
// four rotation ("weather"), two mask-dropout and two mixed ("digital").
std::vector<CorruptionSpec> preset_domains(int severity, std::uint64_t seed);

// "preset15", or a comma-separated list of kind:severity[:seed] entries.
std::vector<CorruptionSpec> parse_domain_list(std::string_view text, int default_severity, std::uint64_t seed);

// Dataset file: "ZOFD1", u32 N, u32 d, u32 C, N*d little-endian f64 rows,
// N little-endian i32 labels.
std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace zofa
