#include "haphazard/normalize.hpp"

#include <algorithm>
#include <cmath>

#include "haphazard/numerics.hpp"

namespace haphazard {

std::string_view norm_kind_name(NormKind kind) {
  switch (kind) {
    case NormKind::None: return "none";
    case NormKind::MinMax: return "minmax";
    case NormKind::Decimal: return "decimal";
    case NormKind::ZScore: return "zscore";
    case NormKind::MeanNorm: return "meannorm";
    case NormKind::UnitVector: return "unitvector";
  }
  return "unknown";
}

std::optional<NormKind> parse_norm_kind(std::string_view name) {
  for (NormKind k : {NormKind::None, NormKind::MinMax, NormKind::Decimal, NormKind::ZScore,
                     NormKind::MeanNorm, NormKind::UnitVector}) {
    if (norm_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

void FeatureStats::update(double x) {
  count += 1;
  if (count == 1) {
    min = max = x;
  } else {
    min = std::min(min, x);
    max = std::max(max, x);
  }
  const double prev_mean = mean;
  mean = prev_mean + (x - prev_mean) / static_cast<double>(count);
  m2 += (x - prev_mean) * (x - mean);
}

std::optional<double> FeatureStats::sample_variance() const {
  if (count < 2) return std::nullopt;
  return m2 / static_cast<double>(count - 1);
}

StreamingNormalizer::StreamingNormalizer(NormKind kind, int decimal_exponent)
    : kind_(kind), decimal_m_(decimal_exponent), decimal_scale_(std::pow(10.0, decimal_exponent)) {}

double StreamingNormalizer::emit(const FeatureStats& st, double x) const {
  switch (kind_) {
    case NormKind::None:
    case NormKind::UnitVector: return x;
    case NormKind::MinMax: {
      const double range = st.max - st.min;
      return range > 0.0 ? (x - st.min) / range : 0.0;
    }
    case NormKind::Decimal: return x / decimal_scale_;
    case NormKind::ZScore: {
      const auto var = st.sample_variance();
      if (!var || *var <= 0.0) return 0.0;
      return (x - st.mean) / std::sqrt(*var);
    }
    case NormKind::MeanNorm: return x - st.mean;
  }
  return x;
}

Instance StreamingNormalizer::apply(const Instance& raw) {
  Instance out = raw;
  if (kind_ == NormKind::None || kind_ == NormKind::Decimal) {
    if (kind_ == NormKind::Decimal) {
      for (auto& fv : out.features) fv.value /= decimal_scale_;
    }
    return out;
  }
  if (kind_ == NormKind::UnitVector) {
    double sq = 0.0;
    for (const auto& fv : raw.features) sq += fv.value * fv.value;
    const double norm = std::sqrt(sq);
    for (auto& fv : out.features) fv.value = norm > 0.0 ? fv.value / norm : 0.0;
    return out;
  }
  for (auto& fv : out.features) {
    auto& st = stats_[fv.id];
    st.update(fv.value);
    fv.value = emit(st, fv.value);
  }
  return out;
}

bool stats_merge_check(const FeatureStats& stats, std::span<const double> history,
                       double rel_tol) {
  if (history.empty()) return stats == FeatureStats{};
  if (stats.count != history.size()) return false;
  double sum = 0.0;
  for (double x : history) sum += x;
  const double mean = sum / static_cast<double>(history.size());
  const auto [mn, mx] = std::minmax_element(history.begin(), history.end());
  double ss = 0.0;
  for (double x : history) ss += (x - mean) * (x - mean);

  // Tiny absolute floor so means that are ~0 by symmetry still compare sanely.
  const double floor = 1e-15 * std::max(std::abs(*mn), std::abs(*mx));
  auto close = [&](double a, double b, double abs_floor) {
    return std::abs(a - b) <= rel_tol * std::max(std::abs(a), std::abs(b)) + abs_floor;
  };
  if (!close(stats.mean, mean, floor) || stats.min != *mn || stats.max != *mx) return false;
  if (history.size() < 2) return !stats.sample_variance().has_value();
  const double var = ss / static_cast<double>(history.size() - 1);
  return close(*stats.sample_variance(), var, 0.0);
}

}  // namespace haphazard
