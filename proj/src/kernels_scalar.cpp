#include "fairgen/kernels.hpp"

#include <cmath>
#include <limits>

// Reference kernels. Plain sequential loops; every SIMD variant is tested
// against these.

namespace fairgen::kernels {
namespace {

double scalar_reduce_max(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > m) {
      m = x[i];
    }
  }
  return m;
}

double scalar_reduce_sum(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += x[i];
  }
  return s;
}

double scalar_exp_shift(const double* x, std::size_t n, double shift, double* out) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - shift);
    s += out[i];
  }
  return s;
}

void scalar_scale(double* x, std::size_t n, double a) {
  for (std::size_t i = 0; i < n; ++i) {
    x[i] *= a;
  }
}

void scalar_axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += a * x[i];
  }
}

double scalar_dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += x[i] * y[i];
  }
  return s;
}

std::size_t scalar_clamp(double* x, std::size_t n, double lo, double hi) {
  std::size_t moved = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < lo) {
      x[i] = lo;
      ++moved;
    } else if (x[i] > hi) {
      x[i] = hi;
      ++moved;
    }
  }
  return moved;
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops table{
      "scalar",          scalar_reduce_max, scalar_reduce_sum, scalar_exp_shift,
      scalar_scale,      scalar_axpy,       scalar_dot,        scalar_clamp,
  };
  return table;
}

}  // namespace fairgen::kernels
