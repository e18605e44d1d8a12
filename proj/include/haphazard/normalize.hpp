#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>

#include "haphazard/instance.hpp"

namespace haphazard {

enum class NormKind { None, MinMax, Decimal, ZScore, MeanNorm, UnitVector };

std::string_view norm_kind_name(NormKind kind);
std::optional<NormKind> parse_norm_kind(std::string_view name);

/// Running count / mean / min / max plus Welford's M2 accumulator.
struct FeatureStats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
  double min = 0.0;
  double max = 0.0;

  void update(double x);
  /// m2 / (count - 1); nullopt for count < 2.
  std::optional<double> sample_variance() const;

  friend bool operator==(const FeatureStats&, const FeatureStats&) = default;
};

/// Per-feature statistics updated strictly online, then used to normalise
/// the value that produced them.
class StreamingNormalizer {
 public:
  explicit StreamingNormalizer(NormKind kind = NormKind::None, int decimal_exponent = 3);

  NormKind kind() const { return kind_; }
  int decimal_exponent() const { return decimal_m_; }

  /// Updates statistics with the raw values first, then emits normalised values.
  Instance apply(const Instance& raw);

  const std::map<FeatureId, FeatureStats>& stats() const { return stats_; }
  std::map<FeatureId, FeatureStats>& mutable_stats() { return stats_; }

 private:
  double emit(const FeatureStats& st, double x) const;

  NormKind kind_;
  int decimal_m_;
  double decimal_scale_;
  std::map<FeatureId, FeatureStats> stats_;
};

/// Recomputes mean, sample variance, min and max from the raw history in one
/// (two-pass for variance) batch and compares with the streaming values.
bool stats_merge_check(const FeatureStats& stats, std::span<const double> history,
                       double rel_tol = 1e-9);

}  // namespace haphazard
