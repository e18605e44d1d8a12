#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "haphazard/numerics.hpp"

namespace haphazard {

enum class CellKind : std::uint8_t {
  TimeLstm3,
  TimeLstm2,
  TimeLstm1,
  DecayLstm,
  VanillaLstm,
  Gru,
  VanillaRnn,
};

inline constexpr std::array<CellKind, 7> kAllCellKinds = {
    CellKind::TimeLstm3, CellKind::TimeLstm2,   CellKind::TimeLstm1, CellKind::DecayLstm,
    CellKind::VanillaLstm, CellKind::Gru, CellKind::VanillaRnn,
};

std::string_view cell_kind_name(CellKind kind);
std::optional<CellKind> parse_cell_kind(std::string_view name);

/// GRU and vanilla RNN carry no long-term memory.
bool has_long_term_memory(CellKind kind);
bool uses_delta(CellKind kind);

/// Named parameter blocks. Not every kind uses every block.
enum class Block : std::uint8_t {
  // input gate
  XI, HI, CI, BI,
  // forget gate
  XF, HF, CF, BF,
  // time gates
  XT1, DT1, BT1,
  XT2, DT2, BT2,
  // cell-state candidate (c~ path) and long-term memory candidate (c path)
  XCT, HCT, BCT,
  XC, HC, BC,
  // output gate
  XO, DO, HO, CO, BO,
  // decay
  DG, BG,
  // gru / rnn
  XU, HU, BU,
  XR, HR, BR,
  XH, HH, BH,
  Count
};

inline constexpr std::size_t kBlockCount = static_cast<std::size_t>(Block::Count);

struct BlockSpan {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool present = false;
  bool is_bias = false;
  std::size_t size() const { return rows * cols; }
};

/// Offsets of every block inside a cell's flat parameter buffer.
class CellLayout {
 public:
  CellLayout() = default;
  CellLayout(CellKind kind, std::size_t hidden, std::size_t input_width = 1);

  CellKind kind() const { return kind_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t input_width() const { return input_width_; }
  std::size_t total() const { return total_; }
  const BlockSpan& operator[](Block b) const { return blocks_[static_cast<std::size_t>(b)]; }
  bool has(Block b) const { return (*this)[b].present; }

 private:
  void add(Block b, std::size_t rows, std::size_t cols, bool bias = false);

  CellKind kind_ = CellKind::TimeLstm3;
  std::size_t hidden_ = 0;
  std::size_t input_width_ = 0;
  std::size_t total_ = 0;
  std::array<BlockSpan, kBlockCount> blocks_{};
};

/// Learnable scalars of one cell (4s^2 + 17s for TimeLSTM3 with scalar input).
std::size_t cell_param_count(CellKind kind, std::size_t hidden, std::size_t input_width = 1);

struct CellParams {
  CellLayout layout;
  Vec values;

  CellParams() = default;
  explicit CellParams(const CellLayout& l) : layout(l), values(l.total(), 0.0) {}

  std::span<double> block(Block b) {
    const auto& s = layout[b];
    return {values.data() + s.offset, s.size()};
  }
  std::span<const double> block(Block b) const {
    const auto& s = layout[b];
    return {values.data() + s.offset, s.size()};
  }
};

/// Weights ~ U(-1/sqrt(s+d), 1/sqrt(s+d)); biases zero. Zeros scheme gives all-zero params.
CellParams make_cell_params(const CellLayout& layout, Rng& rng, InitScheme scheme);

struct CellInput {
  std::span<const double> x;       // length d (1 inside a packet)
  double delta = 0.0;              // instances since the feature was last seen
  std::span<const double> h_prev;  // short-term memory from the feature's previous appearance
  std::span<const double> c_in;    // common long-term memory; ignored by GRU / RNN
};

/// Forward result plus every intermediate the backward pass needs.
struct CellOutput {
  CellKind kind = CellKind::TimeLstm3;
  Vec h;
  Vec c;  // empty for GRU / RNN

  // cached inputs
  Vec x;
  double delta = 0.0;
  Vec h_prev;
  Vec c_in;

  // gates and intermediates; unused ones stay empty
  Vec i, f, t1, t2, o;
  Vec sd1, sd2;      // sigmoid(delta * W_T)
  Vec g1, g2;        // tanh candidates for c~ and c
  Vec ct;            // c~
  Vec tanh_ct;       // tanh(c~) or tanh(c)
  Vec gamma, zg;     // decay factor and its pre-activation
  Vec hd;            // decayed short-term memory
  Vec u, r, q, hc;   // gru: gates, W_hh h_prev, candidate
};

CellOutput cell_step(const CellParams& p, const CellInput& in);

struct CellGrads {
  Vec params;
  Vec dx;
  double ddelta = 0.0;
  Vec dh_prev;
  Vec dc_in;
};

/// Exact reverse of one cell_step. dc is ignored for kinds without long-term memory.
/// Overwrites `out` (buffers are reused when already sized).
void cell_backward(const CellParams& p, const CellOutput& cache, std::span<const double> dh,
                   std::span<const double> dc, CellGrads& out);

CellGrads cell_backward(const CellParams& p, const CellOutput& cache, std::span<const double> dh,
                        std::span<const double> dc);

bool all_finite(std::span<const double> v);

}  // namespace haphazard
