#include "haphazard/cells.hpp"

#include <algorithm>
#include <cmath>

namespace haphazard {

std::string_view cell_kind_name(CellKind kind) {
  switch (kind) {
    case CellKind::TimeLstm3: return "timelstm3";
    case CellKind::TimeLstm2: return "timelstm2";
    case CellKind::TimeLstm1: return "timelstm1";
    case CellKind::DecayLstm: return "decaylstm";
    case CellKind::VanillaLstm: return "vanillalstm";
    case CellKind::Gru: return "gru";
    case CellKind::VanillaRnn: return "vanillarnn";
  }
  return "unknown";
}

std::optional<CellKind> parse_cell_kind(std::string_view name) {
  for (CellKind k : kAllCellKinds) {
    if (cell_kind_name(k) == name) return k;
  }
  return std::nullopt;
}

bool has_long_term_memory(CellKind kind) {
  return kind != CellKind::Gru && kind != CellKind::VanillaRnn;
}

bool uses_delta(CellKind kind) {
  return kind == CellKind::TimeLstm3 || kind == CellKind::TimeLstm2 ||
         kind == CellKind::TimeLstm1 || kind == CellKind::DecayLstm;
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

void CellLayout::add(Block b, std::size_t rows, std::size_t cols, bool bias) {
  auto& span = blocks_[static_cast<std::size_t>(b)];
  span.offset = total_;
  span.rows = rows;
  span.cols = cols;
  span.present = true;
  span.is_bias = bias;
  total_ += rows * cols;
}

CellLayout::CellLayout(CellKind kind, std::size_t hidden, std::size_t input_width)
    : kind_(kind), hidden_(hidden), input_width_(input_width) {
  if (hidden == 0 || input_width == 0) {
    throw ConfigError("cell layout: hidden size and input width must be positive");
  }
  const std::size_t s = hidden, d = input_width;

  // x-to-gate (s x d), memory-to-gate (s x s), peephole / time projection (s), bias (s)
  auto input_gate = [&] {
    add(Block::XI, s, d);
    add(Block::HI, s, s);
    add(Block::CI, s, 1);
    add(Block::BI, s, 1, true);
  };
  auto forget_gate = [&](bool peephole) {
    add(Block::XF, s, d);
    add(Block::HF, s, s);
    if (peephole) add(Block::CF, s, 1);
    add(Block::BF, s, 1, true);
  };
  auto time_gate = [&](Block x, Block dt, Block b) {
    add(x, s, d);
    add(dt, s, 1);
    add(b, s, 1, true);
  };
  auto candidate = [&](Block x, Block h, Block b) {
    add(x, s, d);
    add(h, s, s);
    add(b, s, 1, true);
  };
  auto output_gate = [&](bool time_aware) {
    add(Block::XO, s, d);
    if (time_aware) add(Block::DO, s, 1);
    add(Block::HO, s, s);
    if (time_aware) add(Block::CO, s, 1);
    add(Block::BO, s, 1, true);
  };

  switch (kind) {
    case CellKind::TimeLstm3:
      input_gate();
      time_gate(Block::XT1, Block::DT1, Block::BT1);
      time_gate(Block::XT2, Block::DT2, Block::BT2);
      candidate(Block::XCT, Block::HCT, Block::BCT);
      candidate(Block::XC, Block::HC, Block::BC);
      output_gate(true);
      break;
    case CellKind::TimeLstm2:
      input_gate();
      forget_gate(true);
      time_gate(Block::XT1, Block::DT1, Block::BT1);
      time_gate(Block::XT2, Block::DT2, Block::BT2);
      candidate(Block::XCT, Block::HCT, Block::BCT);
      candidate(Block::XC, Block::HC, Block::BC);
      output_gate(true);
      break;
    case CellKind::TimeLstm1:
      input_gate();
      forget_gate(true);
      time_gate(Block::XT1, Block::DT1, Block::BT1);
      candidate(Block::XCT, Block::HCT, Block::BCT);
      output_gate(true);
      break;
    case CellKind::DecayLstm:
    case CellKind::VanillaLstm:
      if (kind == CellKind::DecayLstm) {
        add(Block::DG, s, 1);
        add(Block::BG, s, 1, true);
      }
      add(Block::XI, s, d);
      add(Block::HI, s, s);
      add(Block::BI, s, 1, true);
      forget_gate(false);
      candidate(Block::XCT, Block::HCT, Block::BCT);
      output_gate(false);
      break;
    case CellKind::Gru:
      candidate(Block::XU, Block::HU, Block::BU);
      candidate(Block::XR, Block::HR, Block::BR);
      candidate(Block::XH, Block::HH, Block::BH);
      break;
    case CellKind::VanillaRnn:
      candidate(Block::XH, Block::HH, Block::BH);
      break;
  }
}

std::size_t cell_param_count(CellKind kind, std::size_t hidden, std::size_t input_width) {
  return CellLayout(kind, hidden, input_width).total();
}

CellParams make_cell_params(const CellLayout& layout, Rng& rng, InitScheme scheme) {
  CellParams p(layout);
  if (scheme == InitScheme::Zeros) return p;
  const double bound =
      1.0 / std::sqrt(static_cast<double>(layout.hidden() + layout.input_width()));
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    const auto& span = layout[static_cast<Block>(b)];
    if (!span.present || span.is_bias) continue;
    fill_uniform(std::span<double>(p.values.data() + span.offset, span.size()), bound, rng);
  }
  return p;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Gate helpers
// ---------------------------------------------------------------------------

namespace {

constexpr Block kNone = Block::Count;

/// pre = W_x x + W_h hin + peep (.) pv + delta * W_d + b, for whichever blocks are set.
struct Gate {
  Block x = kNone;
  Block h = kNone;
  Block peep = kNone;
  Block delta = kNone;
  Block bias = kNone;
};

bool has(Block b) { return b != kNone; }

std::span<const double> blk(const CellParams& p, Block b) { return p.block(b); }

std::span<double> gblk(const CellLayout& l, Vec& grads, Block b) {
  const auto& s = l[b];
  return {grads.data() + s.offset, s.size()};
}

void gate_pre(const CellParams& p, const Gate& g, std::span<const double> x,
              std::span<const double> hin, std::span<const double> pv, double delta,
              std::span<double> pre) {
  const std::size_t s = p.layout.hidden();
  const std::size_t d = p.layout.input_width();
  if (has(g.bias)) {
    auto b = blk(p, g.bias);
    std::copy(b.begin(), b.end(), pre.begin());
  } else {
    std::fill(pre.begin(), pre.end(), 0.0);
  }
  if (has(g.x)) gemv_acc(blk(p, g.x), s, d, x, pre);
  if (has(g.h)) gemv_acc(blk(p, g.h), s, s, hin, pre);
  if (has(g.peep)) {
    auto w = blk(p, g.peep);
    for (std::size_t k = 0; k < s; ++k) pre[k] += w[k] * pv[k];
  }
  if (has(g.delta)) {
    auto w = blk(p, g.delta);
    for (std::size_t k = 0; k < s; ++k) pre[k] += delta * w[k];
  }
}

/// Accumulates gradients of one affine gate given dL/d(pre).
void gate_back(const CellParams& p, const Gate& g, std::span<const double> da,
               std::span<const double> x, std::span<const double> hin,
               std::span<const double> pv, double delta, CellGrads& G, std::span<double> dhin,
               std::span<double> dpv) {
  const auto& L = p.layout;
  const std::size_t s = L.hidden();
  const std::size_t d = L.input_width();
  if (has(g.bias)) {
    auto gb = gblk(L, G.params, g.bias);
    for (std::size_t k = 0; k < s; ++k) gb[k] += da[k];
  }
  if (has(g.x)) {
    outer_acc(da, x, gblk(L, G.params, g.x));
    gemv_t_acc(blk(p, g.x), s, d, da, G.dx);
  }
  if (has(g.h)) {
    outer_acc(da, hin, gblk(L, G.params, g.h));
    gemv_t_acc(blk(p, g.h), s, s, da, dhin);
  }
  if (has(g.peep)) {
    auto w = blk(p, g.peep);
    auto gw = gblk(L, G.params, g.peep);
    for (std::size_t k = 0; k < s; ++k) {
      gw[k] += da[k] * pv[k];
      dpv[k] += da[k] * w[k];
    }
  }
  if (has(g.delta)) {
    auto w = blk(p, g.delta);
    auto gw = gblk(L, G.params, g.delta);
    double acc = 0.0;
    for (std::size_t k = 0; k < s; ++k) {
      gw[k] += da[k] * delta;
      acc += da[k] * w[k];
    }
    G.ddelta += acc;
  }
}

void sigmoid_inplace(std::span<double> v) {
  for (double& x : v) x = sigmoid(x);
}
void tanh_inplace(std::span<double> v) {
  for (double& x : v) x = std::tanh(x);
}

// T = sigmoid(W_xT x + sigmoid(delta * W_T) + b_T)
void time_gate_fwd(const CellParams& p, Block xb, Block db, Block bb,
                   std::span<const double> x, double delta, Vec& sd, Vec& t) {
  const std::size_t s = p.layout.hidden();
  sd.assign(s, 0.0);
  auto w = blk(p, db);
  for (std::size_t k = 0; k < s; ++k) sd[k] = sigmoid(delta * w[k]);
  t.resize(s);
  gate_pre(p, Gate{xb, kNone, kNone, kNone, bb}, x, {}, {}, 0.0, t);
  for (std::size_t k = 0; k < s; ++k) t[k] = sigmoid(t[k] + sd[k]);
}

void time_gate_back(const CellParams& p, Block xb, Block db, Block bb,
                    std::span<const double> dt, const CellOutput& c, const Vec& sd,
                    const Vec& t, CellGrads& G, Vec& scratch) {
  const std::size_t s = p.layout.hidden();
  scratch.resize(s);
  for (std::size_t k = 0; k < s; ++k) scratch[k] = dt[k] * t[k] * (1.0 - t[k]);
  gate_back(p, Gate{xb, kNone, kNone, kNone, bb}, scratch, c.x, {}, {}, 0.0, G, {}, {});
  auto w = blk(p, db);
  auto gw = gblk(p.layout, G.params, db);
  double acc = 0.0;
  for (std::size_t k = 0; k < s; ++k) {
    const double dz = scratch[k] * sd[k] * (1.0 - sd[k]);
    gw[k] += dz * c.delta;
    acc += dz * w[k];
  }
  G.ddelta += acc;
}

// -- forward per kind --------------------------------------------------------

void fwd_time_lstm(const CellParams& p, CellOutput& o) {
  const CellKind kind = p.layout.kind();
  const std::size_t s = p.layout.hidden();
  const bool two_gates = kind != CellKind::TimeLstm1;
  const bool forget = kind != CellKind::TimeLstm3;

  o.i.resize(s);
  gate_pre(p, Gate{Block::XI, Block::HI, Block::CI, kNone, Block::BI}, o.x, o.h_prev, o.c_in, 0,
           o.i);
  sigmoid_inplace(o.i);
  if (forget) {
    o.f.resize(s);
    gate_pre(p, Gate{Block::XF, Block::HF, Block::CF, kNone, Block::BF}, o.x, o.h_prev, o.c_in,
             0, o.f);
    sigmoid_inplace(o.f);
  }
  time_gate_fwd(p, Block::XT1, Block::DT1, Block::BT1, o.x, o.delta, o.sd1, o.t1);
  if (two_gates) time_gate_fwd(p, Block::XT2, Block::DT2, Block::BT2, o.x, o.delta, o.sd2, o.t2);

  o.g1.resize(s);
  gate_pre(p, Gate{Block::XCT, Block::HCT, kNone, kNone, Block::BCT}, o.x, o.h_prev, {}, 0, o.g1);
  tanh_inplace(o.g1);
  if (two_gates) {
    o.g2.resize(s);
    gate_pre(p, Gate{Block::XC, Block::HC, kNone, kNone, Block::BC}, o.x, o.h_prev, {}, 0, o.g2);
    tanh_inplace(o.g2);
  }

  o.ct.resize(s);
  o.c.resize(s);
  for (std::size_t k = 0; k < s; ++k) {
    const double keep_ct = forget ? o.f[k] : 1.0 - o.i[k] * o.t1[k];
    o.ct[k] = keep_ct * o.c_in[k] + o.i[k] * o.t1[k] * o.g1[k];
    if (two_gates) {
      const double keep_c = forget ? o.f[k] : 1.0 - o.i[k];
      o.c[k] = keep_c * o.c_in[k] + o.i[k] * o.t2[k] * o.g2[k];
    } else {
      o.c[k] = o.ct[k];
    }
  }

  o.o.resize(s);
  gate_pre(p, Gate{Block::XO, Block::HO, Block::CO, Block::DO, Block::BO}, o.x, o.h_prev, o.ct,
           o.delta, o.o);
  sigmoid_inplace(o.o);
  o.tanh_ct.resize(s);
  o.h.resize(s);
  for (std::size_t k = 0; k < s; ++k) {
    o.tanh_ct[k] = std::tanh(o.ct[k]);
    o.h[k] = o.o[k] * o.tanh_ct[k];
  }
}

void fwd_plain_lstm(const CellParams& p, CellOutput& o) {
  const std::size_t s = p.layout.hidden();
  if (p.layout.kind() == CellKind::DecayLstm) {
    o.zg.resize(s);
    o.gamma.resize(s);
    o.hd.resize(s);
    auto w = blk(p, Block::DG);
    auto b = blk(p, Block::BG);
    for (std::size_t k = 0; k < s; ++k) {
      o.zg[k] = w[k] * o.delta + b[k];
      o.gamma[k] = std::exp(-std::max(0.0, o.zg[k]));
      o.hd[k] = o.gamma[k] * o.h_prev[k];
    }
  } else {
    o.hd = o.h_prev;
  }
  o.i.resize(s);
  o.f.resize(s);
  o.g1.resize(s);
  o.o.resize(s);
  gate_pre(p, Gate{Block::XI, Block::HI, kNone, kNone, Block::BI}, o.x, o.hd, {}, 0, o.i);
  gate_pre(p, Gate{Block::XF, Block::HF, kNone, kNone, Block::BF}, o.x, o.hd, {}, 0, o.f);
  gate_pre(p, Gate{Block::XCT, Block::HCT, kNone, kNone, Block::BCT}, o.x, o.hd, {}, 0, o.g1);
  gate_pre(p, Gate{Block::XO, Block::HO, kNone, kNone, Block::BO}, o.x, o.hd, {}, 0, o.o);
  sigmoid_inplace(o.i);
  sigmoid_inplace(o.f);
  tanh_inplace(o.g1);
  sigmoid_inplace(o.o);
  o.c.resize(s);
  o.tanh_ct.resize(s);
  o.h.resize(s);
  for (std::size_t k = 0; k < s; ++k) {
    o.c[k] = o.f[k] * o.c_in[k] + o.i[k] * o.g1[k];
    o.tanh_ct[k] = std::tanh(o.c[k]);
    o.h[k] = o.o[k] * o.tanh_ct[k];
  }
}

void fwd_gru(const CellParams& p, CellOutput& o) {
  const std::size_t s = p.layout.hidden();
  o.u.resize(s);
  o.r.resize(s);
  gate_pre(p, Gate{Block::XU, Block::HU, kNone, kNone, Block::BU}, o.x, o.h_prev, {}, 0, o.u);
  gate_pre(p, Gate{Block::XR, Block::HR, kNone, kNone, Block::BR}, o.x, o.h_prev, {}, 0, o.r);
  sigmoid_inplace(o.u);
  sigmoid_inplace(o.r);
  o.q.assign(s, 0.0);
  gemv_acc(blk(p, Block::HH), s, s, o.h_prev, o.q);
  o.hc.resize(s);
  gate_pre(p, Gate{Block::XH, kNone, kNone, kNone, Block::BH}, o.x, {}, {}, 0, o.hc);
  o.h.resize(s);
  for (std::size_t k = 0; k < s; ++k) {
    o.hc[k] = std::tanh(o.hc[k] + o.r[k] * o.q[k]);
    o.h[k] = o.u[k] * o.h_prev[k] + (1.0 - o.u[k]) * o.hc[k];
  }
}

void fwd_rnn(const CellParams& p, CellOutput& o) {
  o.h.resize(p.layout.hidden());
  gate_pre(p, Gate{Block::XH, Block::HH, kNone, kNone, Block::BH}, o.x, o.h_prev, {}, 0, o.h);
  tanh_inplace(o.h);
}

// -- backward per kind -------------------------------------------------------

void back_time_lstm(const CellParams& p, const CellOutput& o, std::span<const double> dH,
                    std::span<const double> dC, CellGrads& G) {
  const CellKind kind = p.layout.kind();
  const std::size_t s = p.layout.hidden();
  const bool two_gates = kind != CellKind::TimeLstm1;
  const bool forget = kind != CellKind::TimeLstm3;

  Vec dct(s), dao(s), di(s, 0.0), dt1(s), dt2(s), dg(s), df(s), scratch;
  for (std::size_t k = 0; k < s; ++k) {
    dct[k] = dH[k] * o.o[k] * (1.0 - o.tanh_ct[k] * o.tanh_ct[k]);
    const double d_o = dH[k] * o.tanh_ct[k];
    dao[k] = d_o * o.o[k] * (1.0 - o.o[k]);
  }
  gate_back(p, Gate{Block::XO, Block::HO, Block::CO, Block::DO, Block::BO}, dao, o.x, o.h_prev,
            o.ct, o.delta, G, G.dh_prev, dct);
  // TimeLSTM1 returns c = c~, so its upstream dc lands on c~.
  if (!two_gates) {
    for (std::size_t k = 0; k < s; ++k) dct[k] += dC[k];
  }

  // c~ = keep * c_in + i * T1 * g1
  for (std::size_t k = 0; k < s; ++k) {
    const double it = o.i[k] * o.t1[k];
    if (forget) {
      df[k] = dct[k] * o.c_in[k];
      G.dc_in[k] += dct[k] * o.f[k];
      di[k] += dct[k] * o.t1[k] * o.g1[k];
    } else {
      G.dc_in[k] += dct[k] * (1.0 - it);
      di[k] += dct[k] * o.t1[k] * (o.g1[k] - o.c_in[k]);
    }
    dt1[k] = dct[k] * o.i[k] * (forget ? o.g1[k] : o.g1[k] - o.c_in[k]);
    dg[k] = dct[k] * it * (1.0 - o.g1[k] * o.g1[k]);
  }
  gate_back(p, Gate{Block::XCT, Block::HCT, kNone, kNone, Block::BCT}, dg, o.x, o.h_prev, {}, 0,
            G, G.dh_prev, {});

  if (two_gates) {
    // c = keep * c_in + i * T2 * g2
    for (std::size_t k = 0; k < s; ++k) {
      if (forget) {
        df[k] += dC[k] * o.c_in[k];
        G.dc_in[k] += dC[k] * o.f[k];
        di[k] += dC[k] * o.t2[k] * o.g2[k];
      } else {
        G.dc_in[k] += dC[k] * (1.0 - o.i[k]);
        di[k] += dC[k] * (o.t2[k] * o.g2[k] - o.c_in[k]);
      }
      dt2[k] = dC[k] * o.i[k] * o.g2[k];
      dg[k] = dC[k] * o.i[k] * o.t2[k] * (1.0 - o.g2[k] * o.g2[k]);
    }
    gate_back(p, Gate{Block::XC, Block::HC, kNone, kNone, Block::BC}, dg, o.x, o.h_prev, {}, 0,
              G, G.dh_prev, {});
    time_gate_back(p, Block::XT2, Block::DT2, Block::BT2, dt2, o, o.sd2, o.t2, G, scratch);
  }
  time_gate_back(p, Block::XT1, Block::DT1, Block::BT1, dt1, o, o.sd1, o.t1, G, scratch);

  if (forget) {
    for (std::size_t k = 0; k < s; ++k) df[k] *= o.f[k] * (1.0 - o.f[k]);
    gate_back(p, Gate{Block::XF, Block::HF, Block::CF, kNone, Block::BF}, df, o.x, o.h_prev,
              o.c_in, 0, G, G.dh_prev, G.dc_in);
  }
  for (std::size_t k = 0; k < s; ++k) di[k] *= o.i[k] * (1.0 - o.i[k]);
  gate_back(p, Gate{Block::XI, Block::HI, Block::CI, kNone, Block::BI}, di, o.x, o.h_prev,
            o.c_in, 0, G, G.dh_prev, G.dc_in);
}

void back_plain_lstm(const CellParams& p, const CellOutput& o, std::span<const double> dH,
                     std::span<const double> dC, CellGrads& G) {
  const std::size_t s = p.layout.hidden();
  const bool decay = p.layout.kind() == CellKind::DecayLstm;
  Vec dc(s), dai(s), daf(s), dag(s), dao(s), dhd(s, 0.0);
  for (std::size_t k = 0; k < s; ++k) {
    dc[k] = dC[k] + dH[k] * o.o[k] * (1.0 - o.tanh_ct[k] * o.tanh_ct[k]);
    dao[k] = dH[k] * o.tanh_ct[k] * o.o[k] * (1.0 - o.o[k]);
    dai[k] = dc[k] * o.g1[k] * o.i[k] * (1.0 - o.i[k]);
    daf[k] = dc[k] * o.c_in[k] * o.f[k] * (1.0 - o.f[k]);
    dag[k] = dc[k] * o.i[k] * (1.0 - o.g1[k] * o.g1[k]);
    G.dc_in[k] += dc[k] * o.f[k];
  }
  gate_back(p, Gate{Block::XO, Block::HO, kNone, kNone, Block::BO}, dao, o.x, o.hd, {}, 0, G,
            dhd, {});
  gate_back(p, Gate{Block::XCT, Block::HCT, kNone, kNone, Block::BCT}, dag, o.x, o.hd, {}, 0, G,
            dhd, {});
  gate_back(p, Gate{Block::XF, Block::HF, kNone, kNone, Block::BF}, daf, o.x, o.hd, {}, 0, G, dhd,
            {});
  gate_back(p, Gate{Block::XI, Block::HI, kNone, kNone, Block::BI}, dai, o.x, o.hd, {}, 0, G, dhd,
            {});
  if (!decay) {
    for (std::size_t k = 0; k < s; ++k) G.dh_prev[k] += dhd[k];
    return;
  }
  auto w = blk(p, Block::DG);
  auto gw = gblk(p.layout, G.params, Block::DG);
  auto gb = gblk(p.layout, G.params, Block::BG);
  double acc = 0.0;
  for (std::size_t k = 0; k < s; ++k) {
    G.dh_prev[k] += dhd[k] * o.gamma[k];
    // gamma = exp(-max(0, z)); flat (zero gradient) for z <= 0
    const double dz = o.zg[k] > 0.0 ? -dhd[k] * o.h_prev[k] * o.gamma[k] : 0.0;
    gw[k] += dz * o.delta;
    gb[k] += dz;
    acc += dz * w[k];
  }
  G.ddelta += acc;
}

void back_gru(const CellParams& p, const CellOutput& o, std::span<const double> dH,
              CellGrads& G) {
  const std::size_t s = p.layout.hidden();
  Vec dau(s), dar(s), dah(s), dq(s);
  for (std::size_t k = 0; k < s; ++k) {
    G.dh_prev[k] += dH[k] * o.u[k];
    dau[k] = dH[k] * (o.h_prev[k] - o.hc[k]) * o.u[k] * (1.0 - o.u[k]);
    dah[k] = dH[k] * (1.0 - o.u[k]) * (1.0 - o.hc[k] * o.hc[k]);
    dq[k] = dah[k] * o.r[k];
    dar[k] = dah[k] * o.q[k] * o.r[k] * (1.0 - o.r[k]);
  }
  gate_back(p, Gate{Block::XH, kNone, kNone, kNone, Block::BH}, dah, o.x, {}, {}, 0, G, {}, {});
  outer_acc(dq, o.h_prev, gblk(p.layout, G.params, Block::HH));
  gemv_t_acc(blk(p, Block::HH), s, s, dq, G.dh_prev);
  gate_back(p, Gate{Block::XU, Block::HU, kNone, kNone, Block::BU}, dau, o.x, o.h_prev, {}, 0, G,
            G.dh_prev, {});
  gate_back(p, Gate{Block::XR, Block::HR, kNone, kNone, Block::BR}, dar, o.x, o.h_prev, {}, 0, G,
            G.dh_prev, {});
}

void back_rnn(const CellParams& p, const CellOutput& o, std::span<const double> dH,
              CellGrads& G) {
  const std::size_t s = p.layout.hidden();
  Vec da(s);
  for (std::size_t k = 0; k < s; ++k) da[k] = dH[k] * (1.0 - o.h[k] * o.h[k]);
  gate_back(p, Gate{Block::XH, Block::HH, kNone, kNone, Block::BH}, da, o.x, o.h_prev, {}, 0, G,
            G.dh_prev, {});
}

}  // namespace

// ---------------------------------------------------------------------------

CellOutput cell_step(const CellParams& p, const CellInput& in) {
  const auto& L = p.layout;
  const std::size_t s = L.hidden();
  if (in.x.size() != L.input_width() || in.h_prev.size() != s ||
      (has_long_term_memory(L.kind()) && in.c_in.size() != s)) {
    throw ConfigError("cell_step: input shapes do not match the cell layout");
  }
  if (!(in.delta >= 0.0)) throw ConfigError("cell_step: delta must be nonnegative");

  CellOutput o;
  o.kind = L.kind();
  o.x.assign(in.x.begin(), in.x.end());
  o.delta = in.delta;
  o.h_prev.assign(in.h_prev.begin(), in.h_prev.end());
  if (has_long_term_memory(L.kind())) o.c_in.assign(in.c_in.begin(), in.c_in.end());

  switch (L.kind()) {
    case CellKind::TimeLstm3:
    case CellKind::TimeLstm2:
    case CellKind::TimeLstm1: fwd_time_lstm(p, o); break;
    case CellKind::DecayLstm:
    case CellKind::VanillaLstm: fwd_plain_lstm(p, o); break;
    case CellKind::Gru: fwd_gru(p, o); break;
    case CellKind::VanillaRnn: fwd_rnn(p, o); break;
  }
  return o;
}

void cell_backward(const CellParams& p, const CellOutput& cache, std::span<const double> dh,
                   std::span<const double> dc, CellGrads& out) {
  const auto& L = p.layout;
  const std::size_t s = L.hidden();
  const bool ltm = has_long_term_memory(L.kind());
  if (cache.kind != L.kind() || cache.h.size() != s || cache.x.size() != L.input_width() ||
      dh.size() != s || (ltm && dc.size() != s)) {
    throw std::logic_error("cell_backward: cache does not match the cell parameters");
  }
  out.params.assign(L.total(), 0.0);
  out.dx.assign(L.input_width(), 0.0);
  out.ddelta = 0.0;
  out.dh_prev.assign(s, 0.0);
  out.dc_in.assign(ltm ? s : 0, 0.0);

  switch (L.kind()) {
    case CellKind::TimeLstm3:
    case CellKind::TimeLstm2:
    case CellKind::TimeLstm1: back_time_lstm(p, cache, dh, dc, out); break;
    case CellKind::DecayLstm:
    case CellKind::VanillaLstm: back_plain_lstm(p, cache, dh, dc, out); break;
    case CellKind::Gru: back_gru(p, cache, dh, out); break;
    case CellKind::VanillaRnn: back_rnn(p, cache, dh, out); break;
  }
}

CellGrads cell_backward(const CellParams& p, const CellOutput& cache, std::span<const double> dh,
                        std::span<const double> dc) {
  CellGrads g;
  cell_backward(p, cache, dh, dc, g);
  return g;
}

}  // namespace haphazard
