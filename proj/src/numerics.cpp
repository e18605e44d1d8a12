#include "haphazard/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace haphazard {

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

TrainingError::TrainingError(const std::string& what, std::optional<std::uint64_t> instance,
                             std::optional<std::uint32_t> feature)
    : std::runtime_error([&] {
        std::string msg = what;
        if (instance) msg += " (instance " + std::to_string(*instance) + ")";
        if (feature) msg += " (feature " + std::to_string(*feature) + ")";
        return msg;
      }()),
      instance_(instance),
      feature_(feature) {}

// ---------------------------------------------------------------------------

std::uint64_t Rng::next_u64() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  Rng r(seed ^ (salt * 0xD1B54A32D192ED03ULL));
  r.next_u64();
  return r.next_u64();
}

// ---------------------------------------------------------------------------

Mat::Mat(std::size_t r, std::size_t c, double fill) : rows(r), cols(c), data(r * c, fill) {}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vec matvec(const Mat& m, std::span<const double> v) {
  if (m.cols != v.size()) {
    throw ConfigError("matvec: matrix has " + std::to_string(m.cols) + " columns, vector has " +
                      std::to_string(v.size()) + " elements");
  }
  Vec out(m.rows, 0.0);
  gemv_acc(m.data, m.rows, m.cols, v, out);
  return out;
}

void gemv_acc(std::span<const double> m, std::size_t rows, std::size_t cols,
              std::span<const double> v, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * v[c];
    out[r] += acc;
  }
}

void gemv_t_acc(std::span<const double> m, std::size_t rows, std::size_t cols,
                std::span<const double> v, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = m.data() + r * cols;
    const double vr = v[r];
    if (vr == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * vr;
  }
}

void outer_acc(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  const std::size_t cols = b.size();
  for (std::size_t r = 0; r < a.size(); ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* row = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += ar * b[c];
  }
}

// ---------------------------------------------------------------------------

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec activate(std::span<const double> v, Activation kind) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    switch (kind) {
      case Activation::Sigmoid: out[i] = sigmoid(v[i]); break;
      case Activation::Tanh: out[i] = std::tanh(v[i]); break;
      case Activation::Relu: out[i] = v[i] > 0.0 ? v[i] : 0.0; break;
    }
  }
  return out;
}

Vec softmax(std::span<const double> logits) {
  Vec p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

XentResult softmax_xent(std::span<const double> logits, std::size_t label) {
  XentResult r;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = std::log(z);
  r.probs.resize(logits.size());
  r.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.probs[i] = std::exp(logits[i] - mx - log_z);
    r.grad_logits[i] = r.probs[i] - (i == label ? 1.0 : 0.0);
  }
  r.loss = -(logits[label] - mx - log_z);
  return r;
}

// ---------------------------------------------------------------------------

void adamw_step(std::span<double> param, std::span<const double> grad, AdamWState& state,
                const AdamWConfig& cfg, std::optional<std::uint64_t> instance) {
  if (param.size() != grad.size() || state.m.size() != param.size() ||
      state.v.size() != param.size()) {
    throw ConfigError("adamw_step: shape mismatch between parameter, gradient and state");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw TrainingError("non-finite gradient", instance);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double step_size = cfg.lr / bc1;
  const double bc2_sqrt = std::sqrt(bc2);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  const double b1 = cfg.beta1, b2 = cfg.beta2;

  double* p = param.data();
  double* m = state.m.data();
  double* v = state.v.data();
  const double* g = grad.data();
  const std::size_t n = param.size();
  for (std::size_t i = 0; i < n; ++i) {
    p[i] *= decay;
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    p[i] -= step_size * m[i] / (std::sqrt(v[i]) / bc2_sqrt + cfg.eps);
  }
}

// ---------------------------------------------------------------------------

void fill_uniform(std::span<double> out, double bound, Rng& rng) {
  for (double& x : out) x = rng.uniform(-bound, bound);
}

Mat init_params(Rng& rng, std::size_t rows, std::size_t cols, InitScheme scheme) {
  if (rows == 0 || cols == 0) throw ConfigError("init_params: rows and cols must be positive");
  Mat m(rows, cols);
  if (scheme == InitScheme::UniformScaled) {
    fill_uniform(m.data, 1.0 / std::sqrt(static_cast<double>(cols)), rng);
  }
  return m;
}

// ---------------------------------------------------------------------------

Vec finite_diff_grad(const ScalarFn& f, std::span<const double> params, double eps) {
  Vec theta(params.begin(), params.end());
  Vec grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + eps;
    const double up = f(theta);
    theta[i] = orig - eps;
    const double down = f(theta);
    theta[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

bool grad_close(double a, double b, double rel, double abs_floor) {
  const double diff = std::abs(a - b);
  return diff <= abs_floor || diff <= rel * std::max(std::abs(a), std::abs(b));
}

}  // namespace haphazard
