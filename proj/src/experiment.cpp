#include "haphazard/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <type_traits>

namespace haphazard {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Value parsing and formatting
// ---------------------------------------------------------------------------

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError(key + ": invalid value '" + value + "' (expected " + expected + ")");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    bad_value(key, v, "a nonnegative integer");
  }
  return out;
}

std::int64_t to_i64(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "an integer");
  return out;
}

double to_f64(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true|false");
}

template <class E, class Parse>
E to_enum(const std::string& key, const std::string& v, Parse parse, const char* expected) {
  auto e = parse(v);
  if (!e) bad_value(key, v, expected);
  return *e;
}

bool is_unset(const std::string& v) { return v.empty() || v == "none"; }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string fmt_opt(const std::optional<T>& v) {
  if (!v) return "none";
  if constexpr (std::is_same_v<T, fs::path>) {
    return v->string();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return *v;
  } else {
    return std::to_string(*v);
  }
}

fs::path resolve(const fs::path& base, const std::string& v) {
  fs::path p(v);
  return p.is_relative() && !base.empty() ? base / p : p;
}

std::string_view data_format_name(DataFormat f) {
  switch (f) {
    case DataFormat::Csv: return "csv";
    case DataFormat::Svmlight: return "svmlight";
    case DataFormat::SvmlightSparse: return "svmlight_sparse";
  }
  return "unknown";
}

std::optional<DataFormat> parse_data_format(std::string_view s) {
  for (auto f : {DataFormat::Csv, DataFormat::Svmlight, DataFormat::SvmlightSparse}) {
    if (data_format_name(f) == s) return f;
  }
  return std::nullopt;
}

std::string_view model_family_name(ModelFamily m) {
  return m == ModelFamily::Packet ? "packet" : "single_baseline";
}

std::optional<ModelFamily> parse_model_family(std::string_view s) {
  for (auto m : {ModelFamily::Packet, ModelFamily::SingleBaseline}) {
    if (model_family_name(m) == s) return m;
  }
  return std::nullopt;
}

std::optional<InitScheme> parse_init(std::string_view s) {
  if (s == "uniform") return InitScheme::UniformScaled;
  if (s == "zeros") return InitScheme::Zeros;
  return std::nullopt;
}

std::string init_name(InitScheme s) { return s == InitScheme::Zeros ? "zeros" : "uniform"; }

// ---------------------------------------------------------------------------
// Key table
// ---------------------------------------------------------------------------

using Setter = std::function<void(RunConfig&, const std::string&, const fs::path&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct KeyDef {
  const char* name;
  Setter set;
  Getter get;
  bool affects_trajectory;
};

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      // dataset
      {"data_path", [](RunConfig& c, const std::string& v, const fs::path& b) {
         c.data_path = resolve(b, v);
       },
       [](const RunConfig& c) { return c.data_path.string(); }, false},
      {"data_format", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.data_format = to_enum<DataFormat>("data_format", v, parse_data_format,
                                             "csv|svmlight|svmlight_sparse");
       },
       [](const RunConfig& c) { return std::string(data_format_name(c.data_format)); }, true},
      {"label_column", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.label_column = static_cast<int>(to_i64("label_column", v));
       },
       [](const RunConfig& c) { return std::to_string(c.label_column); }, true},
      {"header", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.header = to_bool("header", v);
       },
       [](const RunConfig& c) { return std::string(c.header ? "true" : "false"); }, true},
      {"positive_label", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.positive_label = is_unset(v) ? std::nullopt : std::optional<std::string>(v);
       },
       [](const RunConfig& c) { return fmt_opt(c.positive_label); }, true},
      {"n_features", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.n_features = to_u64("n_features", v);
       },
       [](const RunConfig& c) { return std::to_string(c.n_features); }, true},
      {"shuffle_seed", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.shuffle_seed = is_unset(v) ? std::nullopt
                                      : std::optional<std::uint64_t>(to_u64("shuffle_seed", v));
       },
       [](const RunConfig& c) { return fmt_opt(c.shuffle_seed); }, true},
      {"limit", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.limit = is_unset(v) ? std::nullopt : std::optional<std::size_t>(to_u64("limit", v));
       },
       [](const RunConfig& c) { return fmt_opt(c.limit); }, true},
      // schedule
      {"schedule", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.schedule.kind = to_enum<ScheduleKind>("schedule", v, parse_schedule_kind,
                                                 "bernoulli|sudden|obsolete|reappearing|alternating");
       },
       [](const RunConfig& c) { return std::string(schedule_kind_name(c.schedule.kind)); }, true},
      {"p", [](RunConfig& c, const std::string& v, const fs::path&) { c.schedule.p = to_f64("p", v); },
       [](const RunConfig& c) { return fmt(c.schedule.p); }, true},
      {"p_low", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.schedule.p_low = to_f64("p_low", v);
       },
       [](const RunConfig& c) { return fmt(c.schedule.p_low); }, true},
      {"p_high", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.schedule.p_high = to_f64("p_high", v);
       },
       [](const RunConfig& c) { return fmt(c.schedule.p_high); }, true},
      {"period", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.schedule.period = to_u64("period", v);
       },
       [](const RunConfig& c) { return std::to_string(c.schedule.period); }, true},
      {"intervals", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.schedule.intervals = to_u64("intervals", v);
       },
       [](const RunConfig& c) { return std::to_string(c.schedule.intervals); }, true},
      // normalisation
      {"normalizer", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.normalizer = to_enum<NormKind>("normalizer", v, parse_norm_kind,
                                          "none|minmax|decimal|zscore|meannorm|unitvector");
       },
       [](const RunConfig& c) { return std::string(norm_kind_name(c.normalizer)); }, true},
      {"decimal_exponent", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.decimal_exponent = static_cast<int>(to_i64("decimal_exponent", v));
       },
       [](const RunConfig& c) { return std::to_string(c.decimal_exponent); }, true},
      // model
      {"model", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.model = to_enum<ModelFamily>("model", v, parse_model_family, "packet|single_baseline");
       },
       [](const RunConfig& c) { return std::string(model_family_name(c.model)); }, true},
      {"cell", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.cell = to_enum<CellKind>(
             "cell", v, parse_cell_kind,
             "timelstm3|timelstm2|timelstm1|decaylstm|vanillalstm|gru|vanillarnn");
       },
       [](const RunConfig& c) { return std::string(cell_kind_name(c.packet.cell)); }, true},
      {"hidden_size", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.hidden = to_u64("hidden_size", v);
       },
       [](const RunConfig& c) { return std::to_string(c.packet.hidden); }, true},
      {"aggregate_by", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.agg = to_enum<Aggregator>("aggregate_by", v, parse_aggregator, "mean|sum|min|max");
       },
       [](const RunConfig& c) { return std::string(aggregator_name(c.packet.agg)); }, true},
      {"feat_space", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.feat_space = to_enum<FeatSpace>("feat_space", v, parse_feat_space,
                                                  "current|universal");
       },
       [](const RunConfig& c) { return std::string(feat_space_name(c.packet.feat_space)); }, true},
      {"concat", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.concat = to_enum<ConcatMode>("concat", v, parse_concat_mode,
                                               "both|only_ltm|only_stm");
       },
       [](const RunConfig& c) { return std::string(concat_mode_name(c.packet.concat)); }, true},
      {"lr", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.optim.lr = to_f64("lr", v);
       },
       [](const RunConfig& c) { return fmt(c.packet.optim.lr); }, true},
      {"beta1", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.optim.beta1 = to_f64("beta1", v);
       },
       [](const RunConfig& c) { return fmt(c.packet.optim.beta1); }, true},
      {"beta2", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.optim.beta2 = to_f64("beta2", v);
       },
       [](const RunConfig& c) { return fmt(c.packet.optim.beta2); }, true},
      {"eps", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.optim.eps = to_f64("eps", v);
       },
       [](const RunConfig& c) { return fmt(c.packet.optim.eps); }, true},
      {"weight_decay", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.optim.weight_decay = to_f64("weight_decay", v);
       },
       [](const RunConfig& c) { return fmt(c.packet.optim.weight_decay); }, true},
      {"drop_max_features", [](RunConfig& c, const std::string& v, const fs::path&) {
         if (is_unset(v)) {
           c.packet.drop.reset();
           return;
         }
         if (!c.packet.drop) c.packet.drop = DropPolicy{};
         c.packet.drop->max_slots = to_u64("drop_max_features", v);
       },
       [](const RunConfig& c) {
         return c.packet.drop ? std::to_string(c.packet.drop->max_slots) : std::string("none");
       },
       true},
      {"drop_min_seen", [](RunConfig& c, const std::string& v, const fs::path&) {
         if (is_unset(v)) {
           c.packet.drop.reset();
           return;
         }
         if (!c.packet.drop) c.packet.drop = DropPolicy{};
         c.packet.drop->min_seen = to_u64("drop_min_seen", v);
       },
       [](const RunConfig& c) {
         return c.packet.drop ? std::to_string(c.packet.drop->min_seen) : std::string("none");
       },
       true},
      {"cell_init", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.cell_init = to_enum<InitScheme>("cell_init", v, parse_init, "uniform|zeros");
       },
       [](const RunConfig& c) { return init_name(c.packet.cell_init); }, true},
      {"head_init", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.head_init = to_enum<InitScheme>("head_init", v, parse_init, "uniform|zeros");
       },
       [](const RunConfig& c) { return init_name(c.packet.head_init); }, true},
      {"exec", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.packet.exec = to_enum<ExecPolicy>("exec", v, parse_exec_policy, "serial|parallel");
       },
       [](const RunConfig& c) { return std::string(exec_policy_name(c.packet.exec)); }, false},
      // single baseline
      {"impute", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.impute = to_enum<ImputeMethod>("impute", v, parse_impute_method, "ffill|rolling_mean");
       },
       [](const RunConfig& c) { return std::string(impute_method_name(c.impute)); }, true},
      {"impute_window", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.impute_window = to_u64("impute_window", v);
       },
       [](const RunConfig& c) { return std::to_string(c.impute_window); }, true},
      {"single_hidden_size", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.single_hidden = to_u64("single_hidden_size", v);
       },
       [](const RunConfig& c) { return std::to_string(c.single_hidden); }, true},
      // orchestration
      {"seeds", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.seeds.clear();
         std::stringstream ss(v);
         std::string tok;
         while (std::getline(ss, tok, ',')) {
           tok = trim(tok);
           if (!tok.empty()) c.seeds.push_back(to_u64("seeds", tok));
         }
       },
       [](const RunConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.seeds.size(); ++i) {
           out += (i ? "," : "") + std::to_string(c.seeds[i]);
         }
         return out;
       },
       false},
      {"output_dir", [](RunConfig& c, const std::string& v, const fs::path& b) {
         c.output_dir = resolve(b, v);
       },
       [](const RunConfig& c) { return c.output_dir.string(); }, false},
      {"checkpoint_in", [](RunConfig& c, const std::string& v, const fs::path& b) {
         c.checkpoint_in = is_unset(v) ? std::nullopt : std::optional<fs::path>(resolve(b, v));
       },
       [](const RunConfig& c) { return fmt_opt(c.checkpoint_in); }, false},
      {"checkpoint_out", [](RunConfig& c, const std::string& v, const fs::path& b) {
         c.checkpoint_out = is_unset(v) ? std::nullopt : std::optional<fs::path>(resolve(b, v));
       },
       [](const RunConfig& c) { return fmt_opt(c.checkpoint_out); }, false},
      {"stop_at", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.stop_at = is_unset(v) ? std::nullopt : std::optional<std::uint64_t>(to_u64("stop_at", v));
       },
       [](const RunConfig& c) { return fmt_opt(c.stop_at); }, false},
      {"retraining", [](RunConfig& c, const std::string& v, const fs::path&) {
         c.retraining = to_bool("retraining", v);
       },
       [](const RunConfig& c) { return std::string(c.retraining ? "true" : "false"); }, false},
  };
  return table;
}

const KeyDef& find_key(const std::string& key) {
  for (const auto& k : key_table()) {
    if (key == k.name) return k;
  }
  throw ConfigError(key + ": unknown key");
}

void assign(RunConfig& config, std::string key, std::string value, const fs::path& base) {
  key = trim(std::move(key));
  value = trim(std::move(value));
  find_key(key).set(config, value, base);
}

}  // namespace

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  for (const auto& k : key_table()) out[k.name] = k.get(*this);
  return out;
}

void RunConfig::validate() const {
  if (data_path.empty()) throw ConfigError("data_path: required");
  if (!fs::exists(data_path)) throw ConfigError("data_path: no such file '" + data_path.string() + "'");
  if (data_format != DataFormat::Csv && n_features == 0) {
    throw ConfigError("n_features: required for svmlight input");
  }
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  try {
    schedule.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  packet.validate();
  if (model == ModelFamily::SingleBaseline) {
    if (single_hidden == 0) throw ConfigError("single_hidden_size: must be positive");
    if (impute_window == 0) throw ConfigError("impute_window: must be positive");
  }
  if (checkpoint_in && !fs::exists(*checkpoint_in)) {
    throw ConfigError("checkpoint_in: no such file '" + checkpoint_in->string() + "'");
  }
  if ((checkpoint_in || checkpoint_out) && seeds.size() != 1) {
    throw ConfigError("seeds: checkpointing needs exactly one seed");
  }
  if (decimal_exponent < 0 || decimal_exponent > 300) {
    throw ConfigError("decimal_exponent: out of range");
  }
}

RunConfig parse_run_config(std::istream& in, const fs::path& base_dir) {
  RunConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    assign(config, line.substr(0, eq), line.substr(eq + 1), base_dir);
  }
  return config;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return parse_run_config(in, path.parent_path());
}

void apply_override(RunConfig& config, const std::string& assignment, const fs::path& base_dir) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "': expected key=value");
  assign(config, assignment.substr(0, eq), assignment.substr(eq + 1), base_dir);
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& k : key_table()) out += std::string(k.name) + " = " + k.get(config) + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& config, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& k : key_table()) {
    if (!k.affects_trajectory) continue;
    feed(k.name);
    feed("=");
    feed(k.get(config));
    feed("\n");
  }
  feed("seed=" + std::to_string(seed));
  return h;
}

std::uint64_t stream_seed(std::uint64_t seed) { return mix_seed(seed, 0x73747265616d); }
std::uint64_t model_seed(std::uint64_t seed) { return mix_seed(seed, 0x6d6f64656c); }

Dataset load_dataset(const RunConfig& config) {
  Dataset d;
  switch (config.data_format) {
    case DataFormat::Csv: {
      CsvOptions o;
      o.label_column = config.label_column;
      o.header = config.header;
      o.positive_label = config.positive_label;
      d.dense = read_csv(config.data_path.string(), o);
      break;
    }
    case DataFormat::Svmlight:
      d.dense = read_svmlight(config.data_path.string(), config.n_features);
      break;
    case DataFormat::SvmlightSparse:
      d.sparse = read_svmlight_sparse(config.data_path.string(), config.n_features);
      break;
  }
  if (config.shuffle_seed) {
    shuffle_records(d.dense, *config.shuffle_seed);
    shuffle_instances(d.sparse, *config.shuffle_seed);
  }
  if (config.limit) {
    if (d.dense.size() > *config.limit) d.dense.resize(*config.limit);
    if (d.sparse.size() > *config.limit) d.sparse.resize(*config.limit);
  }
  d.n_features = !d.dense.empty() ? d.dense.front().values.size() : config.n_features;
  if (config.n_features != 0 && d.n_features != config.n_features) {
    throw ConfigError("n_features: config says " + std::to_string(config.n_features) +
                      " but the data has " + std::to_string(d.n_features));
  }
  return d;
}

std::vector<Instance> build_stream(const RunConfig& config, const Dataset& data,
                                   std::uint64_t seed) {
  if (!data.sparse.empty()) return data.sparse;
  return generate_stream(data.dense, config.schedule, stream_seed(seed));
}

std::unique_ptr<OnlineLearner> make_learner(const RunConfig& config, std::size_t n_features,
                                            std::uint64_t seed) {
  if (config.model == ModelFamily::Packet) {
    return std::make_unique<PacketModel>(config.packet, model_seed(seed));
  }
  SingleConfig sc;
  sc.n_features = n_features;
  sc.hidden = config.single_hidden;
  sc.impute = config.impute;
  sc.window = config.impute_window;
  sc.optim = config.packet.optim;
  sc.cell_init = config.packet.cell_init;
  sc.head_init = config.packet.head_init;
  return std::make_unique<SingleModel>(sc, model_seed(seed));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'H', 'P', 'Z', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw ConfigError("checkpoint_out: cannot open '" + path.string() + "'");
  }
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), n); }
  template <class T>
  void pod(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    raw(&v, sizeof v);
  }
  void vec(const Vec& v) {
    pod<std::uint64_t>(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void adam(const AdamWState& s) {
    vec(s.m);
    vec(s.v);
    pod(s.step);
  }
  void finish() {
    out_.flush();
    if (!out_) throw ConfigError("checkpoint_out: write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw ConfigError("checkpoint_in: cannot open '" + path.string() + "'");
  }
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw ConfigError("checkpoint_in: truncated file");
  }
  template <class T>
  T pod() {
    T v{};
    raw(&v, sizeof v);
    return v;
  }
  Vec vec() {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t{1} << 32)) throw ConfigError("checkpoint_in: corrupt vector length");
    Vec v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  AdamWState adam() {
    AdamWState s;
    s.m = vec();
    s.v = vec();
    s.step = pod<std::uint64_t>();
    return s;
  }

 private:
  std::ifstream in_;
};

void write_packet(Writer& w, const PacketState& st) {
  w.pod<std::uint64_t>(st.slots.size());
  for (const auto& [id, slot] : st.slots) {
    w.pod<std::uint32_t>(id);
    w.vec(slot.params.values);
    w.adam(slot.optim);
    w.vec(slot.h);
    w.pod<std::uint8_t>(slot.last_seen.has_value());
    w.pod<std::uint64_t>(slot.last_seen.value_or(0));
    w.pod(slot.seen_count);
  }
  w.vec(st.c);
  w.vec(st.h);
  w.vec(st.head);
  w.adam(st.head_optim);
  w.pod(st.t);
  w.pod(st.seed);
  w.pod(st.slot_creations);
  w.pod(st.capacity_overflows);
}

PacketState read_packet(Reader& r) {
  PacketState st;
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    FeatureSlot slot;
    slot.id = r.pod<std::uint32_t>();
    slot.params.values = r.vec();
    slot.optim = r.adam();
    slot.h = r.vec();
    const bool seen = r.pod<std::uint8_t>() != 0;
    const auto last = r.pod<std::uint64_t>();
    if (seen) slot.last_seen = last;
    slot.seen_count = r.pod<std::uint64_t>();
    const FeatureId id = slot.id;
    st.slots.emplace(id, std::move(slot));
  }
  st.c = r.vec();
  st.h = r.vec();
  st.head = r.vec();
  st.head_optim = r.adam();
  st.t = r.pod<std::uint64_t>();
  st.seed = r.pod<std::uint64_t>();
  st.slot_creations = r.pod<std::uint64_t>();
  st.capacity_overflows = r.pod<std::uint64_t>();
  return st;
}

void write_single(Writer& w, const SingleModel& m) {
  const auto& st = m.state();
  w.vec(st.cell.values);
  w.adam(st.cell_optim);
  w.vec(st.h);
  w.vec(st.c);
  w.vec(st.head);
  w.adam(st.head_optim);
  w.pod(st.t);
  const auto& hist = m.imputer().history();
  w.pod<std::uint64_t>(hist.size());
  for (const auto& h : hist) {
    w.pod<std::uint8_t>(h.last.has_value());
    w.pod<double>(h.last.value_or(0.0));
    w.vec(h.window);
    w.pod<std::uint64_t>(h.next);
  }
}

void read_single(Reader& r, SingleModel& m) {
  auto& st = m.mutable_state();
  SingleModel::State fresh = st;
  fresh.cell.values = r.vec();
  fresh.cell_optim = r.adam();
  fresh.h = r.vec();
  fresh.c = r.vec();
  fresh.head = r.vec();
  fresh.head_optim = r.adam();
  fresh.t = r.pod<std::uint64_t>();
  const std::size_t s = m.config().hidden;
  if (fresh.cell.values.size() != st.cell.values.size() || fresh.h.size() != s ||
      fresh.c.size() != s || fresh.head.size() != st.head.size() ||
      fresh.cell_optim.m.size() != fresh.cell.values.size() ||
      fresh.head_optim.m.size() != fresh.head.size()) {
    throw ConfigError("checkpoint_in: single-model shape mismatch");
  }
  const auto n = r.pod<std::uint64_t>();
  if (n != m.imputer().n_features()) throw ConfigError("checkpoint_in: imputer width mismatch");
  std::vector<Imputer::FeatureHistory> hist(n);
  for (auto& h : hist) {
    const bool has = r.pod<std::uint8_t>() != 0;
    const double last = r.pod<double>();
    if (has) h.last = last;
    h.window = r.vec();
    h.next = r.pod<std::uint64_t>();
  }
  st = std::move(fresh);
  m.imputer().mutable_history() = std::move(hist);
}

}  // namespace

void save_checkpoint(const fs::path& path, std::uint64_t hash, const OnlineLearner& learner,
                     const StreamingNormalizer& normalizer, std::uint64_t next_index) {
  Writer w(path);
  w.raw(kMagic, sizeof kMagic);
  w.pod(kVersion);
  w.pod(hash);
  if (const auto* p = dynamic_cast<const PacketModel*>(&learner)) {
    w.pod<std::uint8_t>(0);
    write_packet(w, p->state());
  } else if (const auto* s = dynamic_cast<const SingleModel*>(&learner)) {
    w.pod<std::uint8_t>(1);
    write_single(w, *s);
  } else {
    throw ConfigError("checkpoint_out: unsupported learner");
  }
  w.pod<std::uint8_t>(static_cast<std::uint8_t>(normalizer.kind()));
  w.pod<std::int32_t>(normalizer.decimal_exponent());
  w.pod<std::uint64_t>(normalizer.stats().size());
  for (const auto& [id, st] : normalizer.stats()) {
    w.pod<std::uint32_t>(id);
    w.pod(st.count);
    w.pod(st.mean);
    w.pod(st.m2);
    w.pod(st.min);
    w.pod(st.max);
  }
  w.pod(next_index);
  w.finish();
}

std::uint64_t load_checkpoint(const fs::path& path, std::uint64_t hash, OnlineLearner& learner,
                              StreamingNormalizer& normalizer) {
  Reader r(path);
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw ConfigError("checkpoint_in: not a checkpoint file");
  }
  if (r.pod<std::uint32_t>() != kVersion) throw ConfigError("checkpoint_in: unsupported version");
  if (r.pod<std::uint64_t>() != hash) {
    throw ConfigError("checkpoint_in: written by a different configuration or seed");
  }
  const auto family = r.pod<std::uint8_t>();
  if (auto* p = dynamic_cast<PacketModel*>(&learner); p && family == 0) {
    p->set_state(read_packet(r));
  } else if (auto* s = dynamic_cast<SingleModel*>(&learner); s && family == 1) {
    read_single(r, *s);
  } else {
    throw ConfigError("checkpoint_in: model family mismatch");
  }
  const auto kind = static_cast<NormKind>(r.pod<std::uint8_t>());
  const auto m = r.pod<std::int32_t>();
  if (kind != normalizer.kind() || m != normalizer.decimal_exponent()) {
    throw ConfigError("checkpoint_in: normalizer mismatch");
  }
  std::map<FeatureId, FeatureStats> stats;
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto id = r.pod<std::uint32_t>();
    FeatureStats st;
    st.count = r.pod<std::uint64_t>();
    st.mean = r.pod<double>();
    st.m2 = r.pod<double>();
    st.min = r.pod<double>();
    st.max = r.pod<double>();
    stats[id] = st;
  }
  normalizer.mutable_stats() = std::move(stats);
  return r.pod<std::uint64_t>();
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
  if (!out) throw ConfigError("output_dir: cannot write '" + path.string() + "'");
}

fs::path seed_dir(const RunConfig& config, std::uint64_t seed) {
  return config.output_dir / ("seed_" + std::to_string(seed));
}

}  // namespace

RunOutcome run_experiment(const RunConfig& config, const RunOptions& options) {
  config.validate();
  const Dataset data = load_dataset(config);
  RunOutcome outcome;
  std::vector<MetricReport> reports;

  if (options.write_files) {
    fs::create_directories(config.output_dir);
    write_text(config.output_dir / "config.txt", to_text(config));
  }

  for (const std::uint64_t seed : config.seeds) {
    const auto stream = build_stream(config, data, seed);
    auto learner = make_learner(config, data.n_features, seed);
    StreamingNormalizer normalizer(config.normalizer, config.decimal_exponent);
    const std::uint64_t hash = config_hash(config, seed);

    std::uint64_t start = 0;
    if (config.checkpoint_in) {
      start = load_checkpoint(*config.checkpoint_in, hash, *learner, normalizer);
      if (start > stream.size()) throw ConfigError("checkpoint_in: index beyond the stream");
    }
    std::uint64_t end = stream.size();
    if (config.stop_at) end = std::clamp<std::uint64_t>(*config.stop_at, start, end);

    if (options.log) {
      *options.log << "seed " << seed << ": instances " << start << ".." << end << " of "
                   << stream.size() << '\n';
    }
    const std::span<const Instance> slice(stream.data() + start, end - start);
    auto res = run_prequential(*learner, normalizer, slice, config.schedule.intervals,
                               stream.size());

    SeedOutcome so;
    so.seed = seed;
    so.first_index = start;
    so.report = make_report(res.record, config.schedule.intervals, res.seconds);
    if (res.error) {
      so.report.aborted = true;
      so.report.abort_reason = *res.error;
    }
    if (config.checkpoint_out && !res.error) {
      save_checkpoint(*config.checkpoint_out, hash, *learner, normalizer,
                      start + res.record.size());
    }
    if (options.write_files) {
      const auto dir = seed_dir(config, seed);
      fs::create_directories(dir);
      std::ostringstream rep, log;
      rep << "seed = " << seed << '\n' << "first_index = " << start << '\n';
      write_report(rep, so.report);
      write_text(dir / "report.txt", rep.str());
      write_score_log(log, res.record, start);
      write_text(dir / "scores.csv", log.str());
    }
    if (options.log) {
      *options.log << "seed " << seed << ": balanced_accuracy "
                   << (so.report.balanced_accuracy ? fmt(100.0 * *so.report.balanced_accuracy)
                                                   : std::string("missing"))
                   << (so.report.aborted ? " (aborted: " + so.report.abort_reason + ")" : "")
                   << ", " << so.report.seconds << " s\n";
    }
    so.record = std::move(res.record);
    reports.push_back(so.report);
    outcome.seeds.push_back(std::move(so));
  }

  outcome.aggregate = aggregate_runs(reports);
  if (options.write_files) {
    std::ostringstream agg;
    write_aggregate(agg, outcome.aggregate);
    write_text(config.output_dir / "aggregate.txt", agg.str());
  }
  return outcome;
}

ScenarioOutcome run_scenario(const RunConfig& config, const RunOptions& options) {
  config.validate();
  if (config.model != ModelFamily::Packet) {
    throw ConfigError("model: the retraining comparison needs the packet model");
  }
  const Dataset data = load_dataset(config);
  const std::size_t K = config.schedule.intervals;
  ScenarioOutcome outcome;

  for (const std::uint64_t seed : config.seeds) {
    const auto stream = build_stream(config, data, seed);
    PacketModel persistent(config.packet, model_seed(seed));
    PacketModel retrained(config.packet, model_seed(seed));
    StreamingNormalizer normalizer(config.normalizer, config.decimal_exponent);
    MetricRecord rec_p, rec_r;
    rec_p.reserve(stream.size());
    rec_r.reserve(stream.size());
    std::size_t current = 1;
    std::optional<std::string> error;

    const auto start = std::chrono::steady_clock::now();
    for (const Instance& raw : stream) {
      const std::size_t k = interval_of(raw.index, stream.size(), K);
      if (k != current) {
        current = k;
        retrained.reinitialize(mix_seed(model_seed(seed), k), raw.index);
        if (options.on_interval) options.on_interval(k, persistent, retrained);
      }
      const Instance inst = normalizer.apply(raw);
      try {
        for (auto [model, rec] : {std::pair{&persistent, &rec_p}, std::pair{&retrained, &rec_r}}) {
          const StepResult r = model->train_step(inst);
          MetricEntry e;
          e.score = r.probs[1];
          e.pred = predicted_class(r.probs);
          e.label = inst.label;
          e.interval = k;
          e.empty = r.empty;
          rec->push_back(e);
        }
      } catch (const TrainingError& e) {
        error = e.what();
        break;
      }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    MetricReport rp = make_report(rec_p, K, seconds);
    MetricReport rr = make_report(rec_r, K, seconds);
    if (error) {
      rp.aborted = rr.aborted = true;
      rp.abort_reason = rr.abort_reason = *error;
    }
    if (options.write_files) {
      const auto dir = seed_dir(config, seed);
      fs::create_directories(dir);
      std::ostringstream a, b;
      write_report(a, rp);
      write_report(b, rr);
      write_text(dir / "persistent_report.txt", a.str());
      write_text(dir / "retrained_report.txt", b.str());
      std::ostringstream la, lb;
      write_score_log(la, rec_p);
      write_score_log(lb, rec_r);
      write_text(dir / "persistent_scores.csv", la.str());
      write_text(dir / "retrained_scores.csv", lb.str());
    }
    if (options.log) {
      *options.log << "seed " << seed << ":";
      for (std::size_t k = 0; k < K; ++k) {
        auto pct = [](const std::optional<double>& v) {
          return v ? fmt(std::round(10000.0 * *v) / 100.0) : std::string("missing");
        };
        *options.log << " [" << k + 1 << "] " << pct(rp.interval_balanced_accuracy[k]) << " vs "
                     << pct(rr.interval_balanced_accuracy[k]);
      }
      *options.log << '\n';
    }
    outcome.seeds.push_back(seed);
    outcome.persistent.push_back(std::move(rp));
    outcome.retrained.push_back(std::move(rr));
  }

  outcome.persistent_aggregate = aggregate_runs(outcome.persistent);
  outcome.retrained_aggregate = aggregate_runs(outcome.retrained);
  if (options.write_files) {
    fs::create_directories(config.output_dir);
    write_text(config.output_dir / "config.txt", to_text(config));
    std::ostringstream a;
    a << "# persistent\n";
    write_aggregate(a, outcome.persistent_aggregate);
    a << "# retrained\n";
    write_aggregate(a, outcome.retrained_aggregate);
    write_text(config.output_dir / "aggregate.txt", a.str());
  }
  return outcome;
}

}  // namespace haphazard
