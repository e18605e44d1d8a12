#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "haphazard/baselines.hpp"
#include "haphazard/eval.hpp"
#include "haphazard/normalize.hpp"
#include "haphazard/packet.hpp"
#include "haphazard/streams.hpp"

namespace haphazard {

enum class DataFormat { Csv, Svmlight, SvmlightSparse };
enum class ModelFamily { Packet, SingleBaseline };

struct RunConfig {
  // dataset
  std::filesystem::path data_path;
  DataFormat data_format = DataFormat::Csv;
  int label_column = -1;
  bool header = false;
  std::optional<std::string> positive_label;
  std::size_t n_features = 0;  // required for svmlight and the single baseline
  std::optional<std::uint64_t> shuffle_seed;
  std::optional<std::size_t> limit;  // keep only the first `limit` records

  Schedule schedule;
  NormKind normalizer = NormKind::ZScore;
  int decimal_exponent = 3;

  ModelFamily model = ModelFamily::Packet;
  PacketConfig packet;
  ImputeMethod impute = ImputeMethod::Ffill;
  std::size_t impute_window = 5;
  std::size_t single_hidden = 32;

  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> checkpoint_in;
  std::optional<std::filesystem::path> checkpoint_out;
  std::optional<std::uint64_t> stop_at;  // stop before this instance index (then checkpoint)
  bool retraining = false;

  /// Every key, as written by to_text; the values are canonical.
  std::map<std::string, std::string> entries() const;
  void validate() const;
};

/// Flat "key = value" text; '#' starts a comment. Unknown keys and bad values
/// raise ConfigError naming the key. Relative paths resolve against `base_dir`.
RunConfig parse_run_config(std::istream& in, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Applies one "key=value" override.
void apply_override(RunConfig& config, const std::string& assignment,
                    const std::filesystem::path& base_dir = {});
std::string to_text(const RunConfig& config);

/// FNV-1a over the canonical entries that determine a trajectory
/// (output and checkpoint paths excluded).
std::uint64_t config_hash(const RunConfig& config, std::uint64_t seed);

struct Dataset {
  std::vector<DenseRecord> dense;
  std::vector<Instance> sparse;  // svmlight passthrough
  std::size_t n_features = 0;
  std::size_t size() const { return dense.empty() ? sparse.size() : dense.size(); }
};

/// Reads, optionally shuffles (once, with shuffle_seed) and truncates to `limit`.
Dataset load_dataset(const RunConfig& config);
std::vector<Instance> build_stream(const RunConfig& config, const Dataset& data,
                                   std::uint64_t seed);
std::unique_ptr<OnlineLearner> make_learner(const RunConfig& config, std::size_t n_features,
                                            std::uint64_t seed);

std::uint64_t stream_seed(std::uint64_t seed);
std::uint64_t model_seed(std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Binary layout: magic, format version, config hash, model family, model
/// state, normalizer state, next instance index. Host byte order.
void save_checkpoint(const std::filesystem::path& path, std::uint64_t hash,
                     const OnlineLearner& learner, const StreamingNormalizer& normalizer,
                     std::uint64_t next_index);
/// Restores into an already-constructed learner of the same family and config.
/// Returns the next instance index.
std::uint64_t load_checkpoint(const std::filesystem::path& path, std::uint64_t hash,
                              OnlineLearner& learner, StreamingNormalizer& normalizer);

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

struct SeedOutcome {
  std::uint64_t seed = 0;
  MetricReport report;
  MetricRecord record;
  std::uint64_t first_index = 0;
};

struct RunOutcome {
  std::vector<SeedOutcome> seeds;
  std::map<std::string, MeanStd> aggregate;
};

struct RunOptions {
  bool write_files = true;
  std::ostream* log = nullptr;
  /// Scenario runs only: called at the start of each interval k >= 2, after the
  /// retrained model has been reset.
  std::function<void(std::size_t k, const PacketModel& persistent, const PacketModel& retrained)>
      on_interval;
};

/// Prequential runs for every seed; writes seed_<s>/report.txt, seed_<s>/scores.csv
/// and aggregate.txt under output_dir.
RunOutcome run_experiment(const RunConfig& config, const RunOptions& options = {});

struct ScenarioOutcome {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricReport> persistent;
  std::vector<MetricReport> retrained;
  std::map<std::string, MeanStd> persistent_aggregate;
  std::map<std::string, MeanStd> retrained_aggregate;
};

/// Persistent model vs one re-initialised at every interval boundary, trained
/// side by side on the identical normalised stream.
ScenarioOutcome run_scenario(const RunConfig& config, const RunOptions& options = {});

}  // namespace haphazard
