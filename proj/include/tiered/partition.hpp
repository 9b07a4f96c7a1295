#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace tiered {

/// Ordered cut-points c_1 < ... < c_{K-1}. Tier k (1-based) is the interval
/// (c_{k-1}, c_k] with c_0 = -inf and c_K = +inf.
class TierPartition {
 public:
  TierPartition() = default;

  explicit TierPartition(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {
    if (thresholds_.empty()) throw ConfigError("partition needs at least one threshold");
    for (std::size_t i = 0; i < thresholds_.size(); ++i) {
      if (!std::isfinite(thresholds_[i]))
        throw ConfigError("partition thresholds must be finite");
      if (i > 0 && !(thresholds_[i - 1] < thresholds_[i]))
        throw ConfigError("partition thresholds must be strictly increasing");
    }
  }

  std::size_t tiers() const { return thresholds_.size() + 1; }
  std::size_t inner() const { return thresholds_.size(); }
  std::span<const double> thresholds() const { return thresholds_; }

  /// c_k for k in [0, K]; the ends are infinite.
  double cut(std::size_t k) const {
    if (k == 0) return -std::numeric_limits<double>::infinity();
    if (k >= tiers()) return std::numeric_limits<double>::infinity();
    return thresholds_[k - 1];
  }

  /// 1-based tier holding y.
  std::size_t tier_of(double y) const {
    std::size_t k = 1;
    while (k < tiers() && y > thresholds_[k - 1]) ++k;
    return k;
  }

 private:
  std::vector<double> thresholds_;
};

/// Ordered categorical outcomes (labels 1..K) handled as a degenerate
/// continuous case: label k becomes the value k and the cut-points sit at
/// k + 0.5, so tier membership is preserved exactly.
inline std::pair<std::vector<double>, TierPartition> categorical_as_continuous(
    std::span<const int> labels, std::size_t tiers) {
  if (tiers < 2) throw ConfigError("categorical outcome needs at least two tiers");
  std::vector<double> y;
  y.reserve(labels.size());
  for (int label : labels) {
    if (label < 1 || static_cast<std::size_t>(label) > tiers)
      throw DataError("tier label " + std::to_string(label) + " outside 1.." +
                      std::to_string(tiers));
    y.push_back(static_cast<double>(label));
  }
  std::vector<double> cuts;
  for (std::size_t k = 1; k < tiers; ++k) cuts.push_back(static_cast<double>(k) + 0.5);
  return {std::move(y), TierPartition(std::move(cuts))};
}

}  // namespace tiered
