#include "haphazard/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace haphazard {

namespace {

void compare(GradCheckResult& res, const char* what, std::size_t index, double analytic,
             double numeric, const GradCheckTolerance& tol) {
  res.coordinates += 1;
  res.worst_abs_error = std::max(res.worst_abs_error, std::abs(analytic - numeric));
  if (grad_close(analytic, numeric, tol.rel, tol.abs_floor)) return;
  if (res.failures++ == 0) {
    std::ostringstream os;
    os << what << "[" << index << "] analytic=" << analytic << " numeric=" << numeric;
    res.first_failure = os.str();
  }
}

}  // namespace

GradCheckResult check_cell_gradients(CellKind kind, std::size_t draws, std::uint64_t seed,
                                     std::size_t hidden, std::size_t input_width,
                                     const GradCheckTolerance& tol) {
  GradCheckResult res;
  res.label = std::string(cell_kind_name(kind));
  res.draws = draws;

  const CellLayout layout(kind, hidden, input_width);
  const bool ltm = has_long_term_memory(kind);
  const std::size_t s = hidden, d = input_width, P = layout.total();
  Rng rng(seed);

  for (std::size_t draw = 0; draw < draws; ++draw) {
    CellParams params(layout);
    fill_uniform(params.values, 0.8, rng);
    Vec x(d), h_prev(s), c_in(ltm ? s : 0), a(s), b(ltm ? s : 0);
    fill_uniform(x, 2.0, rng);
    fill_uniform(h_prev, 1.0, rng);
    fill_uniform(c_in, 2.0, rng);
    fill_uniform(a, 1.0, rng);
    fill_uniform(b, 1.0, rng);
    const double delta = rng.uniform(0.5, 12.0);

    // Keep the decay pre-activation away from the max(0, .) kink.
    if (kind == CellKind::DecayLstm) {
      auto w = params.block(Block::DG);
      auto bias = params.block(Block::BG);
      for (std::size_t k = 0; k < s; ++k) {
        if (std::abs(w[k] * delta + bias[k]) < 1e-2) bias[k] += 0.1;
      }
    }

    const CellOutput out = cell_step(params, CellInput{x, delta, h_prev, c_in});
    const CellGrads g = cell_backward(params, out, a, b);

    // theta = [params | x | delta | h_prev | c_in]
    Vec theta;
    theta.reserve(P + d + 1 + s + c_in.size());
    theta.insert(theta.end(), params.values.begin(), params.values.end());
    theta.insert(theta.end(), x.begin(), x.end());
    theta.push_back(delta);
    theta.insert(theta.end(), h_prev.begin(), h_prev.end());
    theta.insert(theta.end(), c_in.begin(), c_in.end());

    CellParams probe(layout);
    auto loss = [&](std::span<const double> t) {
      std::copy(t.begin(), t.begin() + P, probe.values.begin());
      const double dl = t[P + d];
      auto o = cell_step(probe, CellInput{t.subspan(P, d), dl, t.subspan(P + d + 1, s),
                                          t.subspan(P + d + 1 + s, c_in.size())});
      double acc = 0.0;
      for (std::size_t k = 0; k < s; ++k) acc += a[k] * o.h[k];
      for (std::size_t k = 0; k < b.size(); ++k) acc += b[k] * o.c[k];
      return acc;
    };
    const Vec num = finite_diff_grad(loss, theta, tol.eps);

    for (std::size_t k = 0; k < P; ++k) compare(res, "param", k, g.params[k], num[k], tol);
    for (std::size_t k = 0; k < d; ++k) compare(res, "dx", k, g.dx[k], num[P + k], tol);
    compare(res, "ddelta", 0, g.ddelta, num[P + d], tol);
    for (std::size_t k = 0; k < s; ++k)
      compare(res, "dh_prev", k, g.dh_prev[k], num[P + d + 1 + k], tol);
    for (std::size_t k = 0; k < c_in.size(); ++k)
      compare(res, "dc_in", k, g.dc_in[k], num[P + d + 1 + s + k], tol);
  }
  return res;
}

GradCheckResult check_packet_gradients(CellKind kind, Aggregator agg, FeatSpace space,
                                       std::size_t draws, std::uint64_t seed, std::size_t hidden,
                                       const GradCheckTolerance& tol) {
  GradCheckResult res;
  res.label = std::string(cell_kind_name(kind)) + "/" + std::string(aggregator_name(agg)) + "/" +
              std::string(feat_space_name(space));
  res.draws = draws;
  PacketConfig cfg;
  cfg.cell = kind;
  cfg.hidden = hidden;
  cfg.agg = agg;
  cfg.feat_space = space;
  cfg.exec = ExecPolicy::Serial;
  Rng rng(seed);

  for (std::size_t draw = 0; draw < draws; ++draw) {
    PacketModel m(cfg, rng.next_u64());
    const std::uint64_t warm = 4 + rng.below(12);
    Instance inst;
    for (std::uint64_t t = 0; t <= warm; ++t) {
      inst = Instance{};
      inst.index = t;
      inst.label = rng.bernoulli(0.5) ? 1 : 0;
      for (FeatureId id = 1; id <= 5; ++id) {
        if (rng.bernoulli(0.6)) inst.features.push_back({id, rng.uniform(-2.0, 2.0)});
      }
      if (t < warm) m.train_step(inst);
    }
    if (inst.features.empty()) inst.features.push_back({1, 0.5});

    const auto fwd = m.forward(inst);
    const auto g = m.gradients(fwd, inst.label);
    auto probe = [&](std::span<double> params, const Vec& analytic, const char* what) {
      const Vec base(params.begin(), params.end());
      auto f = [&](std::span<const double> v) {
        std::copy(v.begin(), v.end(), params.begin());
        const auto out = m.forward(inst);
        return softmax_xent(out.head.logits, static_cast<std::size_t>(inst.label)).loss;
      };
      const Vec num = finite_diff_grad(f, base, tol.eps);
      std::copy(base.begin(), base.end(), params.begin());
      for (std::size_t k = 0; k < base.size(); ++k) compare(res, what, k, analytic[k], num[k], tol);
    };
    probe(m.head_params(), g.head, "head");
    for (std::size_t k = 0; k < fwd.active.size(); ++k) {
      probe(m.find_slot(fwd.active[k].id)->params.values, g.cells[k], "cell");
    }
  }
  return res;
}

}  // namespace haphazard
