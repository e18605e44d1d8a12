#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "haphazard/cells.hpp"
#include "haphazard/eval.hpp"
#include "haphazard/packet.hpp"

namespace haphazard {

enum class ImputeMethod { Ffill, RollingMean };

std::string_view impute_method_name(ImputeMethod m);
std::optional<ImputeMethod> parse_impute_method(std::string_view name);

/// Per-feature online imputation over a known feature count N.
/// Only genuinely observed values enter the state.
class Imputer {
 public:
  struct FeatureHistory {
    std::optional<double> last;
    std::vector<double> window;  // ring buffer, at most `window_size` entries
    std::size_t next = 0;        // ring write position once full
  };

  Imputer(std::size_t n_features, ImputeMethod method, std::size_t window_size = 5);

  /// Dense N-vector: present values pass through, absent ones are filled,
  /// never-observed features become 0.
  Vec impute(const Instance& inst);

  std::size_t n_features() const { return history_.size(); }
  ImputeMethod method() const { return method_; }
  std::size_t window_size() const { return window_; }
  const std::vector<FeatureHistory>& history() const { return history_; }
  std::vector<FeatureHistory>& mutable_history() { return history_; }

 private:
  ImputeMethod method_;
  std::size_t window_;
  std::vector<FeatureHistory> history_;
};

struct SingleConfig {
  std::size_t n_features = 0;
  std::size_t hidden = 32;
  ImputeMethod impute = ImputeMethod::Ffill;
  std::size_t window = 5;
  AdamWConfig optim{.lr = 0.001};
  std::size_t classes = 2;
  InitScheme cell_init = InitScheme::UniformScaled;
  InitScheme head_init = InitScheme::UniformScaled;

  void validate() const;
};

/// One vanilla LSTM over the imputed N-vector; the head reads its short-term memory.
class SingleModel : public OnlineLearner {
 public:
  struct State {
    CellParams cell;
    AdamWState cell_optim;
    Vec h, c;
    Vec head;
    AdamWState head_optim;
    std::uint64_t t = 0;
  };

  SingleModel(SingleConfig config, std::uint64_t seed);

  const SingleConfig& config() const { return config_; }
  const State& state() const { return state_; }
  State& mutable_state() { return state_; }
  Imputer& imputer() { return imputer_; }
  const Imputer& imputer() const { return imputer_; }
  HeadShape head_shape() const { return head_shape_; }

  struct Forward {
    CellOutput cell;
    HeadCache head;
    Vec probs;
  };
  Forward forward(std::span<const double> dense) const;

  /// Loss gradients of one step with (h, c) from the previous instance held constant.
  struct Gradients {
    double loss = 0.0;
    Vec probs;
    Vec cell;
    Vec head;
  };
  Gradients gradients(const Forward& fwd, int label) const;

  StepResult train_dense(std::span<const double> dense, int label, std::uint64_t index);
  Prediction learn_one(const Instance& inst) override;

  std::size_t parameter_count() const { return state_.cell.values.size() + state_.head.size(); }

 private:
  SingleConfig config_;
  HeadShape head_shape_;
  Imputer imputer_;
  State state_;
};

}  // namespace haphazard
