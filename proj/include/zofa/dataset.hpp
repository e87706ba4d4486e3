#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zofa/tensor.hpp"

namespace zofa {

struct DatasetMeta {
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::size_t classes = 0;
  std::string domain = "source";
  int severity = 0;
};

// Labeled (or label-carrying) sample set. x is [N, d]; an empty dataset has
// an empty x and no labels.
struct Dataset {
  Tensor x;
  std::vector<int> y;
  DatasetMeta meta;

  std::size_t size() const { return y.size(); }
  // Throws InputError if labels and rows disagree or a label is out of range.
  void validate() const;
  // Rows selected by `indices`, in that order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

}  // namespace zofa
