#include "haphazard/packet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace haphazard {

namespace {

constexpr std::uint64_t kHeadSalt = 0x68656164;  // "head"
constexpr std::uint64_t kSlotSalt = 0x736c6f74;  // "slot"

template <class E, std::size_t N>
std::optional<E> parse_by_name(std::string_view name, const E (&all)[N],
                               std::string_view (*namer)(E)) {
  for (E e : all) {
    if (namer(e) == name) return e;
  }
  return std::nullopt;
}

}  // namespace

std::string_view aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::Mean: return "mean";
    case Aggregator::Sum: return "sum";
    case Aggregator::Min: return "min";
    case Aggregator::Max: return "max";
  }
  return "unknown";
}

std::optional<Aggregator> parse_aggregator(std::string_view name) {
  static constexpr Aggregator all[] = {Aggregator::Mean, Aggregator::Sum, Aggregator::Min,
                                       Aggregator::Max};
  return parse_by_name(name, all, aggregator_name);
}

std::string_view feat_space_name(FeatSpace f) {
  return f == FeatSpace::Current ? "current" : "universal";
}

std::optional<FeatSpace> parse_feat_space(std::string_view name) {
  static constexpr FeatSpace all[] = {FeatSpace::Current, FeatSpace::Universal};
  return parse_by_name(name, all, feat_space_name);
}

std::string_view concat_mode_name(ConcatMode m) {
  switch (m) {
    case ConcatMode::Both: return "both";
    case ConcatMode::OnlyLtm: return "only_ltm";
    case ConcatMode::OnlyStm: return "only_stm";
  }
  return "unknown";
}

std::optional<ConcatMode> parse_concat_mode(std::string_view name) {
  static constexpr ConcatMode all[] = {ConcatMode::Both, ConcatMode::OnlyLtm, ConcatMode::OnlyStm};
  return parse_by_name(name, all, concat_mode_name);
}

std::string_view exec_policy_name(ExecPolicy p) {
  return p == ExecPolicy::Serial ? "serial" : "parallel";
}

std::optional<ExecPolicy> parse_exec_policy(std::string_view name) {
  static constexpr ExecPolicy all[] = {ExecPolicy::Serial, ExecPolicy::Parallel};
  return parse_by_name(name, all, exec_policy_name);
}

Vec aggregate(std::span<const std::span<const double>> inputs, Aggregator op,
              std::vector<std::uint32_t>* winners) {
  if (inputs.empty()) throw std::invalid_argument("aggregate: empty input set");
  const std::size_t n = inputs[0].size();
  for (const auto& v : inputs) {
    if (v.size() != n) throw std::invalid_argument("aggregate: length mismatch");
  }
  Vec out(inputs[0].begin(), inputs[0].end());
  if (winners) winners->assign(n, 0);
  switch (op) {
    case Aggregator::Mean:
    case Aggregator::Sum:
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        for (std::size_t e = 0; e < n; ++e) out[e] += inputs[k][e];
      }
      if (op == Aggregator::Mean && inputs.size() > 1) {
        const double m = static_cast<double>(inputs.size());
        for (double& v : out) v /= m;
      }
      break;
    case Aggregator::Min:
    case Aggregator::Max:
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        for (std::size_t e = 0; e < n; ++e) {
          const double v = inputs[k][e];
          // strict comparison keeps the earliest input on ties
          if (op == Aggregator::Max ? v > out[e] : v < out[e]) {
            out[e] = v;
            if (winners) (*winners)[e] = static_cast<std::uint32_t>(k);
          }
        }
      }
      break;
  }
  return out;
}

Vec make_head_params(const HeadShape& shape, Rng& rng, InitScheme scheme) {
  Vec p(shape.count(), 0.0);
  if (scheme == InitScheme::Zeros) return p;
  fill_uniform({p.data() + shape.w1(), shape.hidden * shape.in},
               1.0 / std::sqrt(static_cast<double>(shape.in)), rng);
  fill_uniform({p.data() + shape.w2(), shape.classes * shape.hidden},
               1.0 / std::sqrt(static_cast<double>(shape.hidden)), rng);
  return p;
}

void head_forward(const HeadShape& shape, std::span<const double> params,
                  std::span<const double> input, HeadCache& cache) {
  cache.input.assign(input.begin(), input.end());
  cache.pre.assign(params.begin() + shape.b1(), params.begin() + shape.b1() + shape.hidden);
  gemv_acc(params.subspan(shape.w1(), shape.hidden * shape.in), shape.hidden, shape.in, input,
           cache.pre);
  cache.act.resize(shape.hidden);
  for (std::size_t j = 0; j < shape.hidden; ++j) cache.act[j] = std::max(0.0, cache.pre[j]);
  cache.logits.assign(params.begin() + shape.b2(), params.begin() + shape.b2() + shape.classes);
  gemv_acc(params.subspan(shape.w2(), shape.classes * shape.hidden), shape.classes, shape.hidden,
           cache.act, cache.logits);
}

void head_backward(const HeadShape& shape, std::span<const double> params, const HeadCache& cache,
                   std::span<const double> dlogits, std::span<double> dparams,
                   std::span<double> dinput) {
  for (std::size_t k = 0; k < shape.classes; ++k) dparams[shape.b2() + k] += dlogits[k];
  outer_acc(dlogits, cache.act, dparams.subspan(shape.w2(), shape.classes * shape.hidden));
  Vec dpre(shape.hidden, 0.0);
  gemv_t_acc(params.subspan(shape.w2(), shape.classes * shape.hidden), shape.classes, shape.hidden,
             dlogits, dpre);
  for (std::size_t j = 0; j < shape.hidden; ++j) {
    if (cache.pre[j] <= 0.0) dpre[j] = 0.0;
    dparams[shape.b1() + j] += dpre[j];
  }
  outer_acc(dpre, cache.input, dparams.subspan(shape.w1(), shape.hidden * shape.in));
  if (!dinput.empty()) {
    std::fill(dinput.begin(), dinput.end(), 0.0);
    gemv_t_acc(params.subspan(shape.w1(), shape.hidden * shape.in), shape.hidden, shape.in, dpre,
               dinput);
  }
}

void PacketConfig::validate() const {
  if (hidden == 0) throw ConfigError("hidden: must be positive");
  if (classes < 2) throw ConfigError("classes: need at least 2");
  if (!(optim.lr > 0.0) || !std::isfinite(optim.lr)) throw ConfigError("lr: must be positive");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw ConfigError("betas: must lie in [0, 1)");
  }
  if (!(optim.eps > 0.0)) throw ConfigError("eps: must be positive");
  if (!(optim.weight_decay >= 0.0)) throw ConfigError("weight_decay: must be nonnegative");
  if (drop && (drop->max_slots == 0 || drop->min_seen == 0)) {
    throw ConfigError("drop: l_f and i_l must be positive");
  }
  if (!has_long_term_memory(cell) && concat == ConcatMode::OnlyLtm) {
    throw ConfigError("concat: only_ltm needs a cell with long-term memory");
  }
}

ConcatMode PacketConfig::effective_concat() const {
  return has_long_term_memory(cell) ? concat : ConcatMode::OnlyStm;
}

HeadShape PacketConfig::head_shape() const {
  const std::size_t in = effective_concat() == ConcatMode::Both ? 2 * hidden : hidden;
  return HeadShape{in, hidden, classes};
}

std::size_t packet_param_count(const PacketConfig& config, std::size_t slots) {
  return slots * cell_param_count(config.cell, config.hidden) + config.head_shape().count();
}

double softmax_kl(std::span<const double> p, std::span<const double> q) {
  auto log_softmax = [](std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double x : v) z += std::exp(x - mx);
    const double lz = mx + std::log(z);
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lz;
    return out;
  };
  const Vec lp = log_softmax(p), lq = log_softmax(q);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return kl;
}

PacketModel::PacketModel(PacketConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  layout_ = CellLayout(config_.cell, config_.hidden, 1);
  head_shape_ = config_.head_shape();
  reinitialize(seed, 0);
}

void PacketModel::reinitialize(std::uint64_t seed, std::uint64_t start_index) {
  PacketState fresh;
  fresh.seed = seed;
  fresh.t = start_index;
  fresh.c.assign(config_.hidden, 0.0);
  fresh.h.assign(config_.hidden, 0.0);
  Rng rng(mix_seed(seed, kHeadSalt));
  fresh.head = make_head_params(head_shape_, rng, config_.head_init);
  fresh.head_optim = AdamWState(head_shape_.count());
  state_ = std::move(fresh);
}

void PacketModel::set_state(PacketState state) {
  const std::size_t s = config_.hidden;
  if (state.c.size() != s || state.h.size() != s) throw ConfigError("state: memory size mismatch");
  if (state.head.size() != head_shape_.count() || state.head_optim.m.size() != state.head.size() ||
      state.head_optim.v.size() != state.head.size()) {
    throw ConfigError("state: head size mismatch");
  }
  for (auto& [id, slot] : state.slots) {
    if (slot.id != id) throw ConfigError("state: slot id mismatch");
    if (slot.params.values.size() != layout_.total() || slot.h.size() != s ||
        slot.optim.m.size() != layout_.total() || slot.optim.v.size() != layout_.total()) {
      throw ConfigError("state: slot " + std::to_string(id) + " shape mismatch");
    }
    slot.params.layout = layout_;
  }
  state_ = std::move(state);
}

const FeatureSlot* PacketModel::find_slot(FeatureId id) const {
  auto it = state_.slots.find(id);
  return it == state_.slots.end() ? nullptr : &it->second;
}

FeatureSlot* PacketModel::find_slot(FeatureId id) {
  auto it = state_.slots.find(id);
  return it == state_.slots.end() ? nullptr : &it->second;
}

FeatureSlot& PacketModel::ensure_slot(FeatureId id) {
  if (auto* slot = find_slot(id)) return *slot;
  Rng rng(mix_seed(mix_seed(state_.seed, kSlotSalt), state_.slot_creations++));
  FeatureSlot slot;
  slot.id = id;
  slot.params = make_cell_params(layout_, rng, config_.cell_init);
  slot.optim = AdamWState(layout_.total());
  slot.h.assign(config_.hidden, 0.0);
  return state_.slots.emplace(id, std::move(slot)).first->second;
}

DropResult PacketModel::drop_slots(std::span<const FeatureId> protect) {
  DropResult res;
  if (!config_.drop) return res;
  const auto& policy = *config_.drop;
  while (state_.slots.size() > policy.max_slots) {
    const FeatureSlot* victim = nullptr;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [id, slot] : state_.slots) {
      if (std::find(protect.begin(), protect.end(), id) != protect.end()) continue;
      if (slot.seen_count < policy.min_seen) continue;
      const double kl = softmax_kl(slot.h, state_.c);
      if (victim == nullptr || kl < best) {
        victim = &slot;
        best = kl;
      }
    }
    if (victim == nullptr) {
      res.over_capacity = true;
      ++state_.capacity_overflows;
      break;
    }
    res.dropped.push_back(victim->id);
    state_.slots.erase(victim->id);
  }
  return res;
}

std::vector<FeatureValue> PacketModel::sorted_features(const Instance& inst) const {
  std::vector<FeatureValue> f = inst.features;
  std::sort(f.begin(), f.end(),
            [](const FeatureValue& a, const FeatureValue& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < f.size(); ++i) {
    if (f[i].id == f[i - 1].id) {
      throw ConfigError("instance " + std::to_string(inst.index) + ": duplicate feature " +
                        std::to_string(f[i].id));
    }
  }
  return f;
}

ForwardResult PacketModel::forward(const Instance& inst) {
  const std::size_t s = config_.hidden;
  const auto feats = sorted_features(inst);
  ForwardResult fwd;
  fwd.empty = feats.empty();

  bool created = false;
  std::vector<FeatureId> present;
  present.reserve(feats.size());
  for (const auto& fv : feats) {
    created |= find_slot(fv.id) == nullptr;
    ensure_slot(fv.id);
    present.push_back(fv.id);
  }
  if (created && config_.drop) fwd.dropped = drop_slots(present).dropped;

  if (fwd.empty) {
    fwd.c_new = state_.c;
    fwd.h_pred = state_.h;
  } else {
    std::vector<const FeatureSlot*> slots;
    slots.reserve(feats.size());
    fwd.active.resize(feats.size());
    for (std::size_t k = 0; k < feats.size(); ++k) {
      const FeatureSlot* slot = find_slot(feats[k].id);
      slots.push_back(slot);
      auto& a = fwd.active[k];
      a.id = feats[k].id;
      a.x = feats[k].value;
      if (slot->last_seen) {
        if (*slot->last_seen > inst.index) {
          throw ConfigError("instance " + std::to_string(inst.index) + " precedes feature " +
                            std::to_string(a.id) + "'s last appearance");
        }
        a.delta = static_cast<double>(inst.index - *slot->last_seen);
      }
    }
    for_each_index(config_.exec, fwd.active.size(), [&](std::size_t k) {
      auto& a = fwd.active[k];
      a.out = cell_step(slots[k]->params, CellInput{{&a.x, 1}, a.delta, slots[k]->h, state_.c});
    });

    std::vector<std::span<const double>> inputs;
    inputs.reserve(state_.slots.size());
    if (has_long_term_memory(config_.cell)) {
      for (const auto& a : fwd.active) inputs.emplace_back(a.out.c);
      fwd.c_new = aggregate(inputs, config_.agg, &fwd.c_winners);
    } else {
      fwd.c_new.assign(s, 0.0);
    }

    inputs.clear();
    if (config_.feat_space == FeatSpace::Current) {
      for (std::size_t k = 0; k < fwd.active.size(); ++k) {
        inputs.emplace_back(fwd.active[k].out.h);
        fwd.h_sources.push_back(static_cast<std::int32_t>(k));
      }
    } else {
      std::size_t k = 0;
      for (const auto& [id, slot] : state_.slots) {
        if (k < fwd.active.size() && fwd.active[k].id == id) {
          inputs.emplace_back(fwd.active[k].out.h);
          fwd.h_sources.push_back(static_cast<std::int32_t>(k));
          ++k;
        } else {
          inputs.emplace_back(slot.h);
          fwd.h_sources.push_back(-1);
        }
      }
    }
    fwd.h_pred = aggregate(inputs, config_.agg, &fwd.h_winners);
  }

  Vec head_in;
  switch (config_.effective_concat()) {
    case ConcatMode::Both:
      head_in = fwd.c_new;
      head_in.insert(head_in.end(), fwd.h_pred.begin(), fwd.h_pred.end());
      break;
    case ConcatMode::OnlyLtm: head_in = fwd.c_new; break;
    case ConcatMode::OnlyStm: head_in = fwd.h_pred; break;
  }
  head_forward(head_shape_, state_.head, head_in, fwd.head);
  fwd.probs = softmax(fwd.head.logits);
  return fwd;
}

PacketGradients PacketModel::gradients(const ForwardResult& fwd, int label) const {
  if (label < 0 || static_cast<std::size_t>(label) >= config_.classes) {
    throw ConfigError("label " + std::to_string(label) + " out of range");
  }
  const std::size_t s = config_.hidden;
  PacketGradients g;
  auto xent = softmax_xent(fwd.head.logits, static_cast<std::size_t>(label));
  g.loss = xent.loss;
  g.probs = std::move(xent.probs);
  g.head.assign(head_shape_.count(), 0.0);
  Vec dinput(head_shape_.in, 0.0);
  head_backward(head_shape_, state_.head, fwd.head, xent.grad_logits, g.head, dinput);
  if (fwd.empty) return g;

  Vec dc(s, 0.0), dh(s, 0.0);
  switch (config_.effective_concat()) {
    case ConcatMode::Both:
      std::copy(dinput.begin(), dinput.begin() + s, dc.begin());
      std::copy(dinput.begin() + s, dinput.end(), dh.begin());
      break;
    case ConcatMode::OnlyLtm: dc = dinput; break;
    case ConcatMode::OnlyStm: dh = dinput; break;
  }

  const std::size_t n = fwd.active.size();
  const std::size_t m = fwd.h_sources.size();
  const bool ltm = has_long_term_memory(config_.cell);
  const bool pick = config_.agg == Aggregator::Min || config_.agg == Aggregator::Max;
  const double c_scale = config_.agg == Aggregator::Mean ? 1.0 / static_cast<double>(n) : 1.0;
  const double h_scale = config_.agg == Aggregator::Mean ? 1.0 / static_cast<double>(m) : 1.0;

  // position in h_sources of each active cell
  std::vector<std::uint32_t> h_pos(n, 0);
  for (std::size_t j = 0; j < m; ++j) {
    if (fwd.h_sources[j] >= 0) h_pos[static_cast<std::size_t>(fwd.h_sources[j])] = j;
  }

  g.cells.resize(n);
  for_each_index(config_.exec, n, [&](std::size_t k) {
    Vec dck(s, 0.0), dhk(s, 0.0);
    for (std::size_t e = 0; e < s; ++e) {
      if (ltm) {
        if (!pick) {
          dck[e] = dc[e] * c_scale;
        } else if (fwd.c_winners[e] == k) {
          dck[e] = dc[e];
        }
      }
      if (!pick) {
        dhk[e] = dh[e] * h_scale;
      } else if (fwd.h_winners[e] == h_pos[k]) {
        dhk[e] = dh[e];
      }
    }
    const FeatureSlot* slot = find_slot(fwd.active[k].id);
    CellGrads cg;
    cell_backward(slot->params, fwd.active[k].out, dhk, dck, cg);
    g.cells[k] = std::move(cg.params);
  });
  return g;
}

StepResult PacketModel::train_step(const Instance& inst) {
  const ForwardResult fwd = forward(inst);
  PacketGradients g = gradients(fwd, inst.label);
  if (!std::isfinite(g.loss)) throw TrainingError("non-finite loss", inst.index);
  if (!all_finite(g.head)) throw TrainingError("non-finite head gradient", inst.index);
  for (std::size_t k = 0; k < fwd.active.size(); ++k) {
    if (!all_finite(g.cells[k])) {
      throw TrainingError("non-finite cell gradient", inst.index, fwd.active[k].id);
    }
  }

  adamw_step(state_.head, g.head, state_.head_optim, config_.optim, inst.index);
  std::vector<FeatureSlot*> slots;
  slots.reserve(fwd.active.size());
  for (const auto& a : fwd.active) slots.push_back(find_slot(a.id));
  for_each_index(config_.exec, slots.size(), [&](std::size_t k) {
    adamw_step(slots[k]->params.values, g.cells[k], slots[k]->optim, config_.optim);
  });

  for (std::size_t k = 0; k < fwd.active.size(); ++k) {
    slots[k]->h = fwd.active[k].out.h;
    slots[k]->last_seen = inst.index;
    slots[k]->seen_count += 1;
  }
  state_.c = fwd.c_new;
  state_.h = fwd.h_pred;
  state_.t = inst.index + 1;

  StepResult res;
  res.loss = g.loss;
  res.probs = std::move(g.probs);
  res.empty = fwd.empty;
  res.dropped = fwd.dropped;
  return res;
}

Prediction PacketModel::learn_one(const Instance& inst) {
  StepResult r = train_step(inst);
  return Prediction{std::move(r.probs), r.loss, r.empty};
}

std::size_t PacketModel::parameter_count() const {
  return packet_param_count(config_, state_.slots.size());
}

}  // namespace haphazard
