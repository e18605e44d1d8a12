#include "haphazard/baselines.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace haphazard {

std::string_view impute_method_name(ImputeMethod m) {
  return m == ImputeMethod::Ffill ? "ffill" : "rolling_mean";
}

std::optional<ImputeMethod> parse_impute_method(std::string_view name) {
  for (auto m : {ImputeMethod::Ffill, ImputeMethod::RollingMean}) {
    if (impute_method_name(m) == name) return m;
  }
  return std::nullopt;
}

Imputer::Imputer(std::size_t n_features, ImputeMethod method, std::size_t window_size)
    : method_(method), window_(window_size), history_(n_features) {
  if (window_ == 0) throw ConfigError("impute_window: must be positive");
}

Vec Imputer::impute(const Instance& inst) {
  Vec out(history_.size(), 0.0);
  std::vector<bool> present(history_.size(), false);
  for (const auto& fv : inst.features) {
    if (fv.id == 0 || fv.id > history_.size()) {
      throw ConfigError("feature " + std::to_string(fv.id) + " outside 1.." +
                        std::to_string(history_.size()));
    }
    const std::size_t j = fv.id - 1;
    present[j] = true;
    out[j] = fv.value;
    auto& h = history_[j];
    h.last = fv.value;
    if (h.window.size() < window_) {
      h.window.push_back(fv.value);
    } else {
      h.window[h.next] = fv.value;
      h.next = (h.next + 1) % window_;
    }
  }
  for (std::size_t j = 0; j < history_.size(); ++j) {
    if (present[j]) continue;
    const auto& h = history_[j];
    if (!h.last) continue;
    if (method_ == ImputeMethod::Ffill) {
      out[j] = *h.last;
    } else {
      out[j] = std::accumulate(h.window.begin(), h.window.end(), 0.0) /
               static_cast<double>(h.window.size());
    }
  }
  return out;
}

void SingleConfig::validate() const {
  if (n_features == 0) throw ConfigError("n_features: the single baseline needs a known N");
  if (hidden == 0) throw ConfigError("hidden: must be positive");
  if (classes < 2) throw ConfigError("classes: need at least 2");
  if (!(optim.lr > 0.0)) throw ConfigError("lr: must be positive");
  if (window == 0) throw ConfigError("impute_window: must be positive");
}

SingleModel::SingleModel(SingleConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      head_shape_{config_.hidden, config_.hidden, config_.classes},
      imputer_((config_.validate(), config_.n_features), config_.impute, config_.window) {
  const CellLayout layout(CellKind::VanillaLstm, config_.hidden, config_.n_features);
  Rng rng(mix_seed(seed, 0x73696e67));  // "sing"
  state_.cell = make_cell_params(layout, rng, config_.cell_init);
  state_.cell_optim = AdamWState(layout.total());
  state_.h.assign(config_.hidden, 0.0);
  state_.c.assign(config_.hidden, 0.0);
  state_.head = make_head_params(head_shape_, rng, config_.head_init);
  state_.head_optim = AdamWState(head_shape_.count());
}

SingleModel::Forward SingleModel::forward(std::span<const double> dense) const {
  Forward f;
  f.cell = cell_step(state_.cell, CellInput{dense, 0.0, state_.h, state_.c});
  head_forward(head_shape_, state_.head, f.cell.h, f.head);
  f.probs = softmax(f.head.logits);
  return f;
}

SingleModel::Gradients SingleModel::gradients(const Forward& fwd, int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= config_.classes) {
    throw ConfigError("label " + std::to_string(label) + " out of range");
  }
  Gradients g;
  auto xent = softmax_xent(fwd.head.logits, static_cast<std::size_t>(label));
  g.loss = xent.loss;
  g.probs = std::move(xent.probs);
  g.head.assign(head_shape_.count(), 0.0);
  Vec dh(config_.hidden, 0.0);
  head_backward(head_shape_, state_.head, fwd.head, xent.grad_logits, g.head, dh);
  const Vec dc(config_.hidden, 0.0);
  g.cell = cell_backward(state_.cell, fwd.cell, dh, dc).params;
  return g;
}

StepResult SingleModel::train_dense(std::span<const double> dense, int label,
                                    std::uint64_t index) {
  const Forward fwd = forward(dense);
  Gradients g = gradients(fwd, label);
  if (!std::isfinite(g.loss)) throw TrainingError("non-finite loss", index);
  if (!all_finite(g.head) || !all_finite(g.cell)) {
    throw TrainingError("non-finite gradient", index);
  }
  adamw_step(state_.head, g.head, state_.head_optim, config_.optim, index);
  adamw_step(state_.cell.values, g.cell, state_.cell_optim, config_.optim, index);
  state_.h = fwd.cell.h;
  state_.c = fwd.cell.c;
  state_.t = index + 1;
  StepResult r;
  r.loss = g.loss;
  r.probs = std::move(g.probs);
  return r;
}

Prediction SingleModel::learn_one(const Instance& inst) {
  const Vec dense = imputer_.impute(inst);
  StepResult r = train_dense(dense, inst.label, inst.index);
  return Prediction{std::move(r.probs), r.loss, inst.empty()};
}

}  // namespace haphazard
