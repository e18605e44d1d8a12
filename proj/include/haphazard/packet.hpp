#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "haphazard/cells.hpp"
#include "haphazard/eval.hpp"
#include "haphazard/instance.hpp"
#include "haphazard/numerics.hpp"

namespace haphazard {

enum class Aggregator { Mean, Sum, Min, Max };
enum class FeatSpace { Current, Universal };
enum class ConcatMode { Both, OnlyLtm, OnlyStm };
enum class ExecPolicy { Serial, Parallel };

std::string_view aggregator_name(Aggregator a);
std::optional<Aggregator> parse_aggregator(std::string_view name);
std::string_view feat_space_name(FeatSpace f);
std::optional<FeatSpace> parse_feat_space(std::string_view name);
std::string_view concat_mode_name(ConcatMode m);
std::optional<ConcatMode> parse_concat_mode(std::string_view name);
std::string_view exec_policy_name(ExecPolicy p);
std::optional<ExecPolicy> parse_exec_policy(std::string_view name);

/// Element-wise reduction over a nonempty set of equal-length vectors.
/// For min/max, `winners` (if given) receives the index of the contributing
/// input per element; ties go to the lowest index.
Vec aggregate(std::span<const std::span<const double>> inputs, Aggregator op,
              std::vector<std::uint32_t>* winners = nullptr);

/// Runs fn(i) for i in [0, n), either on OpenMP threads or in a plain loop.
/// Callers write only to index-owned storage so both paths produce identical bits.
template <class Fn>
void for_each_index(ExecPolicy policy, std::size_t n, Fn&& fn) {
  if (policy == ExecPolicy::Parallel && n > 1) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
      fn(static_cast<std::size_t>(i));
    }
    return;
#endif
  }
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

// ---------------------------------------------------------------------------
// Two-layer classifier head: Linear(in -> s), ReLU, Linear(s -> C)
// ---------------------------------------------------------------------------

struct HeadShape {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::size_t classes = 2;

  std::size_t w1() const { return 0; }
  std::size_t b1() const { return hidden * in; }
  std::size_t w2() const { return b1() + hidden; }
  std::size_t b2() const { return w2() + classes * hidden; }
  std::size_t count() const { return b2() + classes; }
};

struct HeadCache {
  Vec input;
  Vec pre;  // first affine output
  Vec act;  // relu(pre)
  Vec logits;
};

Vec make_head_params(const HeadShape& shape, Rng& rng, InitScheme scheme);
void head_forward(const HeadShape& shape, std::span<const double> params,
                  std::span<const double> input, HeadCache& cache);
/// Accumulates into dparams; overwrites dinput (may be empty to skip).
void head_backward(const HeadShape& shape, std::span<const double> params, const HeadCache& cache,
                   std::span<const double> dlogits, std::span<double> dparams,
                   std::span<double> dinput);

// ---------------------------------------------------------------------------
// Packet model
// ---------------------------------------------------------------------------

struct DropPolicy {
  std::size_t max_slots = 0;     // l_f
  std::uint64_t min_seen = 0;    // i_l
};

struct PacketConfig {
  CellKind cell = CellKind::TimeLstm3;
  std::size_t hidden = 64;
  Aggregator agg = Aggregator::Max;
  FeatSpace feat_space = FeatSpace::Current;
  ConcatMode concat = ConcatMode::Both;
  AdamWConfig optim{};
  std::optional<DropPolicy> drop;
  std::size_t classes = 2;
  InitScheme cell_init = InitScheme::UniformScaled;
  InitScheme head_init = InitScheme::UniformScaled;
  ExecPolicy exec = ExecPolicy::Parallel;

  void validate() const;
  /// GRU / RNN have no long-term memory, so the head sees the short-term memory only.
  ConcatMode effective_concat() const;
  HeadShape head_shape() const;
};

struct FeatureSlot {
  FeatureId id = 0;
  CellParams params;
  AdamWState optim;
  Vec h;
  std::optional<std::uint64_t> last_seen;
  std::uint64_t seen_count = 0;
};

/// Everything that evolves during a run; exactly what a checkpoint stores.
struct PacketState {
  std::map<FeatureId, FeatureSlot> slots;
  Vec c;  // common long-term memory
  Vec h;  // last predictive short-term memory
  Vec head;
  AdamWState head_optim;
  std::uint64_t t = 0;  // next expected instance index
  std::uint64_t seed = 0;
  std::uint64_t slot_creations = 0;
  std::uint64_t capacity_overflows = 0;
};

struct ActiveCell {
  FeatureId id = 0;
  double x = 0.0;
  double delta = 0.0;
  CellOutput out;
};

struct ForwardResult {
  std::vector<ActiveCell> active;  // ascending feature id
  Vec c_new;
  Vec h_pred;
  // min/max routing: index into `active` per element (c), index into h_sources (h)
  std::vector<std::uint32_t> c_winners;
  std::vector<std::uint32_t> h_winners;
  // each h source's position in `active`, or -1 for a stored (constant) memory
  std::vector<std::int32_t> h_sources;
  HeadCache head;
  Vec probs;
  bool empty = false;
  std::vector<FeatureId> dropped;  // evicted while making room for new slots
};

struct PacketGradients {
  double loss = 0.0;
  Vec probs;
  Vec head;
  std::vector<Vec> cells;  // parallel to ForwardResult::active
};

struct StepResult {
  double loss = 0.0;
  Vec probs;
  bool empty = false;
  std::vector<FeatureId> dropped;
};

struct DropResult {
  std::vector<FeatureId> dropped;
  bool over_capacity = false;  // no eligible slot was left while still above l_f
};

/// KL(softmax(p) || softmax(q)).
double softmax_kl(std::span<const double> p, std::span<const double> q);

class PacketModel : public OnlineLearner {
 public:
  PacketModel(PacketConfig config, std::uint64_t seed);

  const PacketConfig& config() const { return config_; }
  const PacketState& state() const { return state_; }
  /// Replaces all mutable state; shapes are validated against the config.
  void set_state(PacketState state);

  std::size_t slot_count() const { return state_.slots.size(); }
  const FeatureSlot* find_slot(FeatureId id) const;
  FeatureSlot* find_slot(FeatureId id);
  std::span<double> head_params() { return state_.head; }

  /// Returns the existing slot or creates a fresh one (h = 0, unseen).
  FeatureSlot& ensure_slot(FeatureId id);

  /// KL-based eviction down to l_f. Slots listed in `protect` are never evicted.
  DropResult drop_slots(std::span<const FeatureId> protect = {});

  /// Creates slots for unseen features, then runs the cells and head.
  /// Does not touch memories, optimizer state or the instance counter.
  ForwardResult forward(const Instance& inst);

  /// Cross-entropy gradients of a forward pass. Stored memories are constants.
  PacketGradients gradients(const ForwardResult& fwd, int label) const;

  /// Predict, update head and active cells, then commit memories.
  StepResult train_step(const Instance& inst);

  Prediction learn_one(const Instance& inst) override;

  /// Discards all slots and memories and re-seeds the head; t restarts at `start_index`.
  void reinitialize(std::uint64_t seed, std::uint64_t start_index = 0);

  std::size_t parameter_count() const;

 private:
  std::vector<FeatureValue> sorted_features(const Instance& inst) const;

  PacketConfig config_;
  CellLayout layout_;
  HeadShape head_shape_;
  PacketState state_;
};

/// Scalars in a packet with `slots` cells (cells + head).
std::size_t packet_param_count(const PacketConfig& config, std::size_t slots);

}  // namespace haphazard
