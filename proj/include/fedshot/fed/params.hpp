#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedshot/errors.hpp"
#include "fedshot/tensor/tensor.hpp"

namespace fedshot {

// The unit of federation: named, ordered weight arrays (including batch-norm
// running statistics). Order is identical across all clients of a run, so
// aggregation can walk entries positionally.
struct ParamEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct ParameterSet {
  std::vector<ParamEntry> entries;

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& e : entries) n += static_cast<int64_t>(e.values.size());
    return n;
  }

  // Names, shapes, and order must agree; throws StructureMismatch naming the
  // first divergent entry.
  void check_same_structure(const ParameterSet& other) const {
    const size_t n = std::min(entries.size(), other.entries.size());
    for (size_t i = 0; i < n; ++i) {
      const auto& a = entries[i];
      const auto& b = other.entries[i];
      if (a.name != b.name)
        throw StructureMismatch("entry " + std::to_string(i) + ": '" + a.name + "' vs '" +
                                b.name + "'");
      if (a.shape != b.shape)
        throw StructureMismatch("entry '" + a.name + "': shape " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
    }
    if (entries.size() != other.entries.size())
      throw StructureMismatch("entry count " + std::to_string(entries.size()) + " vs " +
                              std::to_string(other.entries.size()));
  }
};

}  // namespace fedshot
