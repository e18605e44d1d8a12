#include "haphazard/streams.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <memory>

namespace haphazard {

namespace {

/// Line reader over plain or gzip files (zlib reads uncompressed input transparently).
class LineReader {
 public:
  explicit LineReader(const std::string& path) : file_(gzopen(path.c_str(), "rb"), &gzclose) {
    if (!file_) throw ParseError("cannot open '" + path + "'");
    buf_.resize(1 << 16);
  }

  bool next(std::string& line) {
    line.clear();
    for (;;) {
      char* got = gzgets(file_.get(), buf_.data(), static_cast<int>(buf_.size()));
      if (!got) {
        if (line.empty()) return false;
        break;
      }
      const std::size_t n = std::strlen(got);
      line.append(got, n);
      if (n > 0 && got[n - 1] == '\n') break;
    }
    ++line_no_;
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    return true;
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::unique_ptr<gzFile_s, int (*)(gzFile)> file_;
  std::vector<char> buf_;
  std::size_t line_no_ = 0;
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

int numeric_label(std::string_view tok, std::size_t line) {
  auto v = parse_double(tok);
  if (!v) throw ParseError("non-numeric label '" + std::string(tok) + "'", line);
  return *v > 0.0 ? 1 : 0;
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

struct SparseLine {
  int label = 0;
  std::vector<FeatureValue> pairs;
};

SparseLine parse_svmlight_line(std::string_view line, std::size_t n_features, std::size_t line_no) {
  if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  SparseLine out;
  std::size_t pos = 0;
  bool first = true;
  FeatureId prev = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
    if (pos >= line.size()) break;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t') ++end;
    std::string_view tok = line.substr(pos, end - pos);
    pos = end;
    if (first) {
      out.label = numeric_label(tok, line_no);
      first = false;
      continue;
    }
    const auto colon = tok.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError("expected idx:val, got '" + std::string(tok) + "'", line_no);
    }
    std::uint64_t idx = 0;
    auto idx_s = tok.substr(0, colon);
    auto [p, ec] = std::from_chars(idx_s.data(), idx_s.data() + idx_s.size(), idx);
    if (ec != std::errc() || p != idx_s.data() + idx_s.size() || idx == 0) {
      throw ParseError("bad feature index '" + std::string(idx_s) + "'", line_no);
    }
    if (idx > n_features) {
      throw ParseError("feature index " + std::to_string(idx) + " exceeds n_features " +
                           std::to_string(n_features),
                       line_no);
    }
    auto val = parse_double(tok.substr(colon + 1));
    if (!val) throw ParseError("bad feature value in '" + std::string(tok) + "'", line_no);
    const auto id = static_cast<FeatureId>(idx);
    if (id <= prev) throw ParseError("feature indices must be strictly increasing", line_no);
    prev = id;
    out.pairs.push_back({id, *val});
  }
  if (first) throw ParseError("missing label", line_no);
  return out;
}

}  // namespace

std::vector<DenseRecord> read_csv(const std::string& path, const CsvOptions& opts) {
  LineReader reader(path);
  std::vector<DenseRecord> out;
  std::string line;
  std::vector<std::string_view> cells;
  std::size_t width = 0;
  bool skip = opts.header;
  while (reader.next(line)) {
    if (skip) {
      skip = false;
      continue;
    }
    if (is_blank(line)) continue;
    cells.clear();
    std::string_view rest(line);
    for (;;) {
      const auto cut = rest.find(opts.delimiter);
      cells.push_back(rest.substr(0, cut));
      if (cut == std::string_view::npos) break;
      rest.remove_prefix(cut + 1);
    }
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw ParseError("need at least one feature and a label", reader.line_no());
    } else if (cells.size() != width) {
      throw ParseError("ragged row: expected " + std::to_string(width) + " cells, got " +
                           std::to_string(cells.size()),
                       reader.line_no());
    }
    const int lc = opts.label_column < 0 ? static_cast<int>(width) + opts.label_column
                                         : opts.label_column;
    if (lc < 0 || lc >= static_cast<int>(width)) {
      throw ParseError("label column out of range", reader.line_no());
    }
    DenseRecord rec;
    rec.values.reserve(width - 1);
    for (std::size_t c = 0; c < width; ++c) {
      if (static_cast<int>(c) == lc) {
        const auto tok = trim(cells[c]);
        rec.label = opts.positive_label ? (tok == *opts.positive_label ? 1 : 0)
                                        : numeric_label(tok, reader.line_no());
        continue;
      }
      auto v = parse_double(cells[c]);
      if (!v) {
        throw ParseError("non-numeric cell '" + std::string(trim(cells[c])) + "' in column " +
                             std::to_string(c + 1),
                         reader.line_no());
      }
      rec.values.push_back(*v);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<DenseRecord> read_svmlight(const std::string& path, std::size_t n_features) {
  LineReader reader(path);
  std::vector<DenseRecord> out;
  std::string line;
  while (reader.next(line)) {
    if (is_blank(line)) continue;
    auto parsed = parse_svmlight_line(line, n_features, reader.line_no());
    DenseRecord rec;
    rec.values.assign(n_features, 0.0);
    rec.label = parsed.label;
    for (const auto& fv : parsed.pairs) rec.values[fv.id - 1] = fv.value;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<Instance> read_svmlight_sparse(const std::string& path, std::size_t n_features) {
  LineReader reader(path);
  std::vector<Instance> out;
  std::string line;
  while (reader.next(line)) {
    if (is_blank(line)) continue;
    auto parsed = parse_svmlight_line(line, n_features, reader.line_no());
    Instance inst;
    inst.index = out.size();
    inst.label = parsed.label;
    inst.features = std::move(parsed.pairs);
    out.push_back(std::move(inst));
  }
  return out;
}

namespace {

template <class T>
void fisher_yates(std::vector<T>& items, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace

void shuffle_records(std::vector<DenseRecord>& records, std::uint64_t seed) {
  fisher_yates(records, seed);
}

void shuffle_instances(std::vector<Instance>& instances, std::uint64_t seed) {
  fisher_yates(instances, seed);
  for (std::size_t t = 0; t < instances.size(); ++t) instances[t].index = t;
}

// ---------------------------------------------------------------------------

std::string_view schedule_kind_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Bernoulli: return "bernoulli";
    case ScheduleKind::Sudden: return "sudden";
    case ScheduleKind::Obsolete: return "obsolete";
    case ScheduleKind::Reappearing: return "reappearing";
    case ScheduleKind::Alternating: return "alternating";
  }
  return "unknown";
}

std::optional<ScheduleKind> parse_schedule_kind(std::string_view name) {
  for (ScheduleKind k : {ScheduleKind::Bernoulli, ScheduleKind::Sudden, ScheduleKind::Obsolete,
                         ScheduleKind::Reappearing, ScheduleKind::Alternating}) {
    if (schedule_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

void Schedule::validate() const {
  auto prob = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!prob(p) || !prob(p_low) || !prob(p_high)) {
    throw ConfigError("schedule: probabilities must lie in [0, 1]");
  }
  if (period == 0) throw ConfigError("schedule: period must be positive");
  if (intervals == 0) throw ConfigError("schedule: intervals must be positive");
}

std::size_t interval_of(std::uint64_t t, std::uint64_t total, std::size_t intervals) {
  if (total == 0) return 1;
  return static_cast<std::size_t>((static_cast<unsigned __int128>(t) * intervals) / total) + 1;
}

std::size_t round_half_up_div(std::uint64_t num, std::uint64_t den) {
  return static_cast<std::size_t>((2 * num + den) / (2 * den));
}

FeatureRange scheduled_features(const Schedule& schedule, std::size_t interval, std::size_t n) {
  const std::size_t k = interval;
  const std::size_t K = schedule.intervals;
  auto prefix = [](std::size_t count) { return FeatureRange{1, static_cast<FeatureId>(count)}; };
  switch (schedule.kind) {
    case ScheduleKind::Sudden: return prefix(round_half_up_div(k * n, K));
    case ScheduleKind::Obsolete: return prefix(round_half_up_div((K + 1 - k) * n, K));
    case ScheduleKind::Reappearing: {
      const std::size_t half = round_half_up_div(n, 2);
      if (k % 2 == 1) return prefix(half);
      return FeatureRange{static_cast<FeatureId>(half + 1), static_cast<FeatureId>(n)};
    }
    case ScheduleKind::Bernoulli:
    case ScheduleKind::Alternating: return prefix(n);
  }
  return prefix(n);
}

StreamGenerator::StreamGenerator(std::span<const DenseRecord> records, Schedule schedule,
                                 std::uint64_t seed)
    : records_(records), schedule_(schedule), rng_(seed) {
  schedule_.validate();
}

std::optional<Instance> StreamGenerator::next() {
  if (t_ >= records_.size()) return std::nullopt;
  const DenseRecord& rec = records_[t_];
  Instance inst;
  inst.index = t_;
  inst.label = rec.label;
  const std::size_t n = rec.values.size();

  auto keep_random = [&](double p) {
    for (std::size_t j = 0; j < n; ++j) {
      if (rng_.bernoulli(p)) inst.features.push_back({static_cast<FeatureId>(j + 1), rec.values[j]});
    }
  };

  switch (schedule_.kind) {
    case ScheduleKind::Bernoulli: keep_random(schedule_.p); break;
    case ScheduleKind::Alternating: {
      const bool high = (t_ / schedule_.period) % 2 == 1;
      keep_random(high ? schedule_.p_high : schedule_.p_low);
      break;
    }
    case ScheduleKind::Sudden:
    case ScheduleKind::Obsolete:
    case ScheduleKind::Reappearing: {
      const auto k = interval_of(t_, records_.size(), schedule_.intervals);
      const auto range = scheduled_features(schedule_, k, n);
      for (FeatureId id = range.first; id <= range.last; ++id) {
        inst.features.push_back({id, rec.values[id - 1]});
      }
      break;
    }
  }
  ++t_;
  return inst;
}

std::vector<Instance> generate_stream(std::span<const DenseRecord> records, const Schedule& schedule,
                                      std::uint64_t seed) {
  StreamGenerator gen(records, schedule, seed);
  std::vector<Instance> out;
  out.reserve(gen.size());
  while (auto inst = gen.next()) out.push_back(std::move(*inst));
  return out;
}

std::vector<Instance> mask_bernoulli(std::span<const DenseRecord> records, double p,
                                     std::uint64_t seed) {
  return generate_stream(records, Schedule{.kind = ScheduleKind::Bernoulli, .p = p}, seed);
}

std::vector<Instance> schedule_sudden(std::span<const DenseRecord> records, std::size_t intervals) {
  return generate_stream(records, Schedule{.kind = ScheduleKind::Sudden, .intervals = intervals}, 0);
}

std::vector<Instance> schedule_obsolete(std::span<const DenseRecord> records,
                                        std::size_t intervals) {
  return generate_stream(records, Schedule{.kind = ScheduleKind::Obsolete, .intervals = intervals},
                         0);
}

std::vector<Instance> schedule_reappearing(std::span<const DenseRecord> records,
                                           std::size_t intervals) {
  return generate_stream(
      records, Schedule{.kind = ScheduleKind::Reappearing, .intervals = intervals}, 0);
}

std::vector<Instance> schedule_alternating(std::span<const DenseRecord> records, double p_low,
                                           double p_high, std::size_t period, std::uint64_t seed) {
  return generate_stream(records,
                         Schedule{.kind = ScheduleKind::Alternating,
                                  .p_low = p_low,
                                  .p_high = p_high,
                                  .period = period},
                         seed);
}

}  // namespace haphazard
