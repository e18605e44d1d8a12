#include "haphazard/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "haphazard/streams.hpp"

namespace haphazard {

int predicted_class(std::span<const double> probs) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[best]) best = k;
  }
  return static_cast<int>(best);
}

std::optional<double> balanced_accuracy(std::span<const MetricEntry> record) {
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (const auto& e : record) {
    if (e.label == 1) {
      (e.pred == 1 ? tp : fn) += 1;
    } else {
      (e.pred == 1 ? fp : tn) += 1;
    }
  }
  if (tp + fn == 0 || tn + fp == 0) return std::nullopt;
  const double sens = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double spec = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return (sens + spec) / 2.0;
}

namespace {

std::vector<std::size_t> order_by_score(std::span<const MetricEntry> record, bool descending) {
  std::vector<std::size_t> idx(record.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? record[a].score > record[b].score : record[a].score < record[b].score;
  });
  return idx;
}

}  // namespace

std::optional<double> auroc(std::span<const MetricEntry> record) {
  std::size_t pos = 0;
  for (const auto& e : record) pos += e.label == 1;
  const std::size_t neg = record.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  // Rank-sum with tied groups sharing their midrank.
  const auto idx = order_by_score(record, false);
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && record[idx[j]].score == record[idx[i]].score) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (record[idx[k]].label == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

std::optional<double> auprc(std::span<const MetricEntry> record) {
  std::size_t pos = 0;
  for (const auto& e : record) pos += e.label == 1;
  if (pos == 0) return std::nullopt;

  const auto idx = order_by_score(record, true);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0, i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && record[idx[j]].score == record[idx[i]].score) {
      tp += record[idx[j]].label == 1;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::vector<std::optional<double>> interval_report(std::span<const MetricEntry> record,
                                                   std::size_t intervals) {
  std::vector<MetricRecord> split(intervals);
  for (const auto& e : record) {
    if (e.interval >= 1 && e.interval <= intervals) split[e.interval - 1].push_back(e);
  }
  std::vector<std::optional<double>> out;
  out.reserve(intervals);
  for (const auto& part : split) out.push_back(balanced_accuracy(part));
  return out;
}

MetricReport make_report(std::span<const MetricEntry> record, std::size_t intervals,
                         double seconds) {
  MetricReport r;
  r.instances = record.size();
  for (const auto& e : record) {
    r.errors += e.pred != e.label;
    r.empty_instances += e.empty;
  }
  r.accuracy = record.empty()
                   ? 0.0
                   : 1.0 - static_cast<double>(r.errors) / static_cast<double>(record.size());
  r.balanced_accuracy = balanced_accuracy(record);
  r.auroc = auroc(record);
  r.auprc = auprc(record);
  r.seconds = seconds;
  r.interval_balanced_accuracy = interval_report(record, intervals);
  return r;
}

PrequentialResult run_prequential(OnlineLearner& learner, StreamingNormalizer& normalizer,
                                  std::span<const Instance> stream, std::size_t intervals,
                                  std::uint64_t total) {
  PrequentialResult res;
  res.record.reserve(stream.size());
  const auto start = std::chrono::steady_clock::now();
  for (const Instance& raw : stream) {
    const Instance inst = normalizer.apply(raw);
    Prediction pred;
    try {
      pred = learner.learn_one(inst);
    } catch (const TrainingError& e) {
      res.error = e.what();
      break;
    }
    MetricEntry e;
    e.score = pred.probs.size() > 1 ? pred.probs[1] : 0.0;
    e.pred = predicted_class(pred.probs);
    e.label = inst.label;
    e.interval = interval_of(inst.index, total, intervals);
    e.empty = pred.empty;
    res.record.push_back(e);
  }
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  m.n = values.size();
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m.n);
  if (m.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(m.n - 1));
  }
  return m;
}

std::map<std::string, MeanStd> aggregate_runs(std::span<const MetricReport> reports) {
  std::map<std::string, std::vector<double>> cols;
  for (const auto& r : reports) {
    cols["errors"].push_back(static_cast<double>(r.errors));
    cols["accuracy"].push_back(100.0 * r.accuracy);
    if (r.balanced_accuracy) cols["balanced_accuracy"].push_back(100.0 * *r.balanced_accuracy);
    if (r.auroc) cols["auroc"].push_back(100.0 * *r.auroc);
    if (r.auprc) cols["auprc"].push_back(100.0 * *r.auprc);
    cols["seconds"].push_back(r.seconds);
    for (std::size_t k = 0; k < r.interval_balanced_accuracy.size(); ++k) {
      if (const auto& v = r.interval_balanced_accuracy[k]) {
        cols["interval_" + std::to_string(k + 1) + "_balanced_accuracy"].push_back(100.0 * *v);
      }
    }
  }
  std::map<std::string, MeanStd> out;
  for (const auto& [name, vals] : cols) out[name] = mean_std(vals);
  return out;
}

namespace {

std::string pct(const std::optional<double>& v) {
  if (!v) return "missing";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_report(std::ostream& os, const MetricReport& r) {
  os << "instances = " << r.instances << '\n'
     << "errors = " << r.errors << '\n'
     << "empty_instances = " << r.empty_instances << '\n'
     << "accuracy = " << pct(r.accuracy) << '\n'
     << "balanced_accuracy = " << pct(r.balanced_accuracy) << '\n'
     << "auroc = " << pct(r.auroc) << '\n'
     << "auprc = " << pct(r.auprc) << '\n'
     << "seconds = " << fixed(r.seconds, 3) << '\n';
  for (std::size_t k = 0; k < r.interval_balanced_accuracy.size(); ++k) {
    os << "interval_" << k + 1 << "_balanced_accuracy = " << pct(r.interval_balanced_accuracy[k])
       << '\n';
  }
  os << "aborted = " << (r.aborted ? "true" : "false") << '\n';
  if (r.aborted) os << "abort_reason = " << r.abort_reason << '\n';
}

void write_aggregate(std::ostream& os, const std::map<std::string, MeanStd>& agg) {
  for (const auto& [name, m] : agg) {
    os << name << "_mean = " << fixed(m.mean, 2) << '\n'
       << name << "_std = " << fixed(m.std, 2) << '\n'
       << name << "_runs = " << m.n << '\n';
  }
}

void write_score_log(std::ostream& os, std::span<const MetricEntry> record,
                     std::uint64_t first_index) {
  os << "t,score,pred,label,interval,empty\n";
  char buf[64];
  for (std::size_t i = 0; i < record.size(); ++i) {
    const auto& e = record[i];
    std::snprintf(buf, sizeof buf, "%.17g", e.score);
    os << first_index + i << ',' << buf << ',' << e.pred << ',' << e.label << ',' << e.interval
       << ',' << (e.empty ? 1 : 0) << '\n';
  }
}

}  // namespace haphazard
