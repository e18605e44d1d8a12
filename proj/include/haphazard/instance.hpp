#pragma once

#include <cstdint>
#include <vector>

namespace haphazard {

/// 1-based feature id, as in the source column order.
using FeatureId = std::uint32_t;

struct FeatureValue {
  FeatureId id = 0;
  double value = 0.0;

  friend bool operator==(const FeatureValue&, const FeatureValue&) = default;
};

/// One stream element: the features present at time `index`, sorted by id.
struct Instance {
  std::uint64_t index = 0;
  std::vector<FeatureValue> features;
  int label = 0;

  bool empty() const { return features.empty(); }
  friend bool operator==(const Instance&, const Instance&) = default;
};

/// A fully observed row of a dense dataset.
struct DenseRecord {
  std::vector<double> values;
  int label = 0;

  friend bool operator==(const DenseRecord&, const DenseRecord&) = default;
};

}  // namespace haphazard
