#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace fairgen::kernels {

// Dense double kernels used by the hot loops (softmax rows, gradient
// accumulation, probe affine maps, SGD updates). Each op has a scalar
// reference implementation and, on x86-64 builds, an AVX2 variant compiled
// into a separate translation unit and selected at runtime. Variants are
// interchangeable within floating-point reassociation error; the scalar
// versions are the semantic reference.
//
// All inputs must be finite. Aliasing: output spans must not overlap inputs
// except where an op is documented as in-place.

enum class Variant {
  scalar,
  avx2,
};

struct Ops {
  const char* name;
  // max over x[0..n). n == 0 returns -inf.
  double (*reduce_max)(const double* x, std::size_t n);
  // sum over x[0..n).
  double (*reduce_sum)(const double* x, std::size_t n);
  // out[i] = exp(x[i] - shift); returns sum of out. x == out allowed.
  double (*exp_shift)(const double* x, std::size_t n, double shift, double* out);
  // x[i] *= a, in place.
  void (*scale)(double* x, std::size_t n, double a);
  // y[i] += a * x[i].
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // clamp x into [lo, hi] in place; returns how many entries moved.
  std::size_t (*clamp)(double* x, std::size_t n, double lo, double hi);
};

const Ops& ops(Variant v);
bool supported(Variant v);
std::vector<Variant> compiled_variants();
const char* variant_name(Variant v);

// Active table. First use honors FAIRGEN_KERNELS=scalar|avx2|auto, then
// falls back to the best supported variant.
const Ops& active();
void select(Variant v);  // throws ConfigError if not supported on this host
void select_auto();
bool select_by_name(std::string_view name);  // false if unknown name

// ---------------------------------------------------------------------------
// Span convenience wrappers over the active table.
// ---------------------------------------------------------------------------

inline double reduce_max(std::span<const double> x) {
  return active().reduce_max(x.data(), x.size());
}

inline double reduce_sum(std::span<const double> x) {
  return active().reduce_sum(x.data(), x.size());
}

inline double exp_shift(std::span<const double> x, double shift, std::span<double> out) {
  return active().exp_shift(x.data(), x.size(), shift, out.data());
}

inline void scale(std::span<double> x, double a) {
  active().scale(x.data(), x.size(), a);
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}

inline std::size_t clamp(std::span<double> x, double lo, double hi) {
  return active().clamp(x.data(), x.size(), lo, hi);
}

// softmax(logits) into out; out may alias logits.
inline void softmax(std::span<const double> logits, std::span<double> out) {
  const double m = reduce_max(logits);
  const double s = exp_shift(logits, m, out);
  scale(out, 1.0 / s);
}

// log(sum(exp(logits))).
inline double log_sum_exp(std::span<const double> logits) {
  thread_local std::vector<double> scratch;
  scratch.resize(logits.size());
  const double m = reduce_max(logits);
  const double s = exp_shift(logits, m, scratch);
  return m + std::log(s);
}

// log softmax(logits)[index], without materializing the distribution.
inline double log_prob_at(std::span<const double> logits, std::size_t index) {
  return logits[index] - log_sum_exp(logits);
}

}  // namespace fairgen::kernels
