#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "haphazard/instance.hpp"
#include "haphazard/normalize.hpp"
#include "haphazard/numerics.hpp"

namespace haphazard {

/// What a learner reports for one instance: the prediction made before the
/// label was used, and the loss of that prediction.
struct Prediction {
  Vec probs;
  double loss = 0.0;
  bool empty = false;
};

/// Test-then-train learner: predict on `inst`, then update with `inst.label`.
class OnlineLearner {
 public:
  virtual ~OnlineLearner() = default;
  virtual Prediction learn_one(const Instance& inst) = 0;
};

struct MetricEntry {
  double score = 0.0;  // probability of the positive class
  int pred = 0;
  int label = 0;
  std::size_t interval = 1;
  bool empty = false;
};

using MetricRecord = std::vector<MetricEntry>;

/// argmax with ties going to class 0.
int predicted_class(std::span<const double> probs);

std::optional<double> balanced_accuracy(std::span<const MetricEntry> record);
/// Mann-Whitney statistic; ties count one half.
std::optional<double> auroc(std::span<const MetricEntry> record);
/// Average precision over distinct score thresholds.
std::optional<double> auprc(std::span<const MetricEntry> record);

std::vector<std::optional<double>> interval_report(std::span<const MetricEntry> record,
                                                   std::size_t intervals);

struct MetricReport {
  std::size_t instances = 0;
  std::size_t errors = 0;
  std::size_t empty_instances = 0;
  double accuracy = 0.0;  // fractions in [0, 1]; formatted x100
  std::optional<double> balanced_accuracy;
  std::optional<double> auroc;
  std::optional<double> auprc;
  double seconds = 0.0;
  std::vector<std::optional<double>> interval_balanced_accuracy;
  bool aborted = false;
  std::string abort_reason;
};

MetricReport make_report(std::span<const MetricEntry> record, std::size_t intervals,
                         double seconds);

struct PrequentialResult {
  MetricRecord record;
  double seconds = 0.0;
  std::optional<std::string> error;  // set when training aborted; record stays partial
};

/// Streams every instance once, in order: normalise, predict, reveal label, train.
/// `total` is the full stream length used for interval ids (instance indices are global).
PrequentialResult run_prequential(OnlineLearner& learner, StreamingNormalizer& normalizer,
                                  std::span<const Instance> stream, std::size_t intervals,
                                  std::uint64_t total);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> values);

/// Per-metric mean +- sample std across seeds (metrics in report units, x100).
std::map<std::string, MeanStd> aggregate_runs(std::span<const MetricReport> reports);

/// Flat "key = value" text; metrics x100 with two decimals, missing values as "missing".
void write_report(std::ostream& os, const MetricReport& report);
void write_aggregate(std::ostream& os, const std::map<std::string, MeanStd>& agg);

/// "t,score,pred,label,interval,empty" per instance.
void write_score_log(std::ostream& os, std::span<const MetricEntry> record,
                     std::uint64_t first_index = 0);

}  // namespace haphazard
