#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace haphazard {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Invalid configuration or shape mismatch detected before any compute.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `line` is 1-based, 0 when not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Numerical failure during online training (non-finite loss, output or gradient).
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::optional<std::uint64_t> instance = {},
                std::optional<std::uint32_t> feature = {});
  std::optional<std::uint64_t> instance() const noexcept { return instance_; }
  std::optional<std::uint32_t> feature() const noexcept { return feature_; }

 private:
  std::optional<std::uint64_t> instance_;
  std::optional<std::uint32_t> feature_;
};

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// SplitMix64 generator. The whole state is one 64-bit counter, so draw
/// sequences are identical on every platform and trivially checkpointed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t state() const noexcept { return state_; }
  void set_state(std::uint64_t s) noexcept { state_ = s; }

 private:
  std::uint64_t state_;
};

/// Stable seed derivation for independent sub-streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// ---------------------------------------------------------------------------
// Dense linear algebra
// ---------------------------------------------------------------------------

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;  // row-major

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0);

  static Mat identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// y = m * v. Throws ConfigError on dimension mismatch.
Vec matvec(const Mat& m, std::span<const double> v);

// Raw row-major kernels over spans; callers guarantee shapes.
void gemv_acc(std::span<const double> m, std::size_t rows, std::size_t cols,
              std::span<const double> v, std::span<double> out);
void gemv_t_acc(std::span<const double> m, std::size_t rows, std::size_t cols,
                std::span<const double> v, std::span<double> out);
void outer_acc(std::span<const double> a, std::span<const double> b, std::span<double> out);

// ---------------------------------------------------------------------------
// Activations and loss
// ---------------------------------------------------------------------------

enum class Activation { Sigmoid, Tanh, Relu };

double sigmoid(double x);
Vec activate(std::span<const double> v, Activation kind);

Vec softmax(std::span<const double> logits);

struct XentResult {
  double loss = 0.0;
  Vec probs;
  Vec grad_logits;
};

/// Max-shifted softmax followed by -ln p[label].
XentResult softmax_xent(std::span<const double> logits, std::size_t label);

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  Vec m;
  Vec v;
  std::uint64_t step = 0;

  AdamWState() = default;
  explicit AdamWState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Decoupled weight decay, then the bias-corrected Adam update.
/// Throws TrainingError (tagged with `instance`) on a non-finite gradient
/// before touching param or state.
void adamw_step(std::span<double> param, std::span<const double> grad, AdamWState& state,
                const AdamWConfig& cfg, std::optional<std::uint64_t> instance = {});

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

enum class InitScheme { UniformScaled, Zeros };

/// uniform_scaled draws U(-1/sqrt(cols), 1/sqrt(cols)).
Mat init_params(Rng& rng, std::size_t rows, std::size_t cols, InitScheme scheme);

void fill_uniform(std::span<double> out, double bound, Rng& rng);

// ---------------------------------------------------------------------------
// Gradient oracle
// ---------------------------------------------------------------------------

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences, one coordinate at a time.
Vec finite_diff_grad(const ScalarFn& f, std::span<const double> params, double eps = 1e-5);

/// |a - b| <= max(abs_floor, rel * max(|a|, |b|)).
bool grad_close(double a, double b, double rel = 1e-4, double abs_floor = 1e-7);

}  // namespace haphazard
