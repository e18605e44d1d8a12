#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "haphazard/cells.hpp"
#include "haphazard/packet.hpp"

namespace haphazard {

/// Outcome of comparing analytic gradients with central finite differences.
struct GradCheckResult {
  std::string label;
  std::size_t draws = 0;
  std::size_t coordinates = 0;  // total coordinates compared
  std::size_t failures = 0;
  double worst_abs_error = 0.0;
  std::string first_failure;

  bool ok() const { return failures == 0 && coordinates > 0; }
};

struct GradCheckTolerance {
  double rel = 1e-4;
  double abs_floor = 1e-7;
  double eps = 1e-5;
};

/// Random (params, input) draws for one cell kind. The scalar probed is
/// a.h + b.c with random upstream weights, so dh = a and dc = b.
/// Every parameter, x, delta, h_prev and c_in is compared.
GradCheckResult check_cell_gradients(CellKind kind, std::size_t draws, std::uint64_t seed,
                                     std::size_t hidden = 4, std::size_t input_width = 1,
                                     const GradCheckTolerance& tol = {});

/// Whole-packet check: after a short random warm-up, the cross-entropy gradient
/// of one prequential step w.r.t. the head and every active cell is compared
/// with finite differences through forward + loss. One draw = one warm-up stream.
GradCheckResult check_packet_gradients(CellKind kind, Aggregator agg, FeatSpace space,
                                       std::size_t draws, std::uint64_t seed,
                                       std::size_t hidden = 4, const GradCheckTolerance& tol = {});

}  // namespace haphazard
