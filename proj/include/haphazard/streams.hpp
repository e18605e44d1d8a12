#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "haphazard/instance.hpp"
#include "haphazard/numerics.hpp"

namespace haphazard {

// ---------------------------------------------------------------------------
// Ingestion (plain or gzip-compressed text)
// ---------------------------------------------------------------------------

struct CsvOptions {
  /// 0-based label column; negative counts from the end (-1 = last).
  int label_column = -1;
  bool header = false;
  /// When set, labels equal to this token map to 1 and everything else to 0.
  /// Otherwise labels must be numeric and map to 1 iff > 0.
  std::optional<std::string> positive_label;
  char delimiter = ',';
};

std::vector<DenseRecord> read_csv(const std::string& path, const CsvOptions& opts = {});

/// "label idx:val ..." with 1-based indices; absent indices densify to 0.
std::vector<DenseRecord> read_svmlight(const std::string& path, std::size_t n_features);

/// Same format, but each line becomes an already-haphazard Instance holding only
/// the listed pairs (native sparsity passthrough).
std::vector<Instance> read_svmlight_sparse(const std::string& path, std::size_t n_features);

/// Fisher-Yates permutation with the project Rng (portable across standard libraries).
void shuffle_records(std::vector<DenseRecord>& records, std::uint64_t seed);
/// Same permutation for already-haphazard instances; indices are renumbered 0..n-1.
void shuffle_instances(std::vector<Instance>& instances, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

enum class ScheduleKind { Bernoulli, Sudden, Obsolete, Reappearing, Alternating };

std::string_view schedule_kind_name(ScheduleKind kind);
std::optional<ScheduleKind> parse_schedule_kind(std::string_view name);

struct Schedule {
  ScheduleKind kind = ScheduleKind::Bernoulli;
  double p = 1.0;
  double p_low = 0.25;
  double p_high = 0.75;
  std::size_t period = 100;
  std::size_t intervals = 5;

  void validate() const;
};

/// 1-based interval of 0-based instance t in a stream of `total` instances:
/// floor(intervals * t / total) + 1.
std::size_t interval_of(std::uint64_t t, std::uint64_t total, std::size_t intervals);

/// round(num / den) with halves rounded up, exact in integers.
std::size_t round_half_up_div(std::uint64_t num, std::uint64_t den);

/// Features kept (as a prefix 1..n, or the complement for reappearing) by the
/// deterministic schedules in 1-based interval k.
struct FeatureRange {
  FeatureId first = 1;  // inclusive
  FeatureId last = 0;   // inclusive; last < first means empty
};
FeatureRange scheduled_features(const Schedule& schedule, std::size_t interval, std::size_t n);

/// Pull-based generator turning dense records into haphazard instances.
/// Preserves record order and labels; deterministic per (records, schedule, seed).
class StreamGenerator {
 public:
  StreamGenerator(std::span<const DenseRecord> records, Schedule schedule, std::uint64_t seed);

  std::optional<Instance> next();
  std::size_t size() const { return records_.size(); }
  std::uint64_t position() const { return t_; }

 private:
  std::span<const DenseRecord> records_;
  Schedule schedule_;
  Rng rng_;
  std::uint64_t t_ = 0;
};

std::vector<Instance> generate_stream(std::span<const DenseRecord> records, const Schedule& schedule,
                                      std::uint64_t seed);

std::vector<Instance> mask_bernoulli(std::span<const DenseRecord> records, double p,
                                     std::uint64_t seed);
std::vector<Instance> schedule_sudden(std::span<const DenseRecord> records, std::size_t intervals = 5);
std::vector<Instance> schedule_obsolete(std::span<const DenseRecord> records,
                                        std::size_t intervals = 5);
std::vector<Instance> schedule_reappearing(std::span<const DenseRecord> records,
                                           std::size_t intervals = 5);
std::vector<Instance> schedule_alternating(std::span<const DenseRecord> records, double p_low,
                                           double p_high, std::size_t period, std::uint64_t seed);

}  // namespace haphazard
