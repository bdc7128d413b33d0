#include "fairgen/kernels.hpp"

// AVX2/FMA variants. This translation unit is compiled with -mavx2 -mfma on
// x86-64 targets only; callers must gate on runtime CPU support (kernels.cpp
// does). Reductions use 4-wide accumulators, so sums and dots may differ
// from the scalar reference by reassociation rounding.

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <bit>
#include <cmath>
#include <limits>

namespace fairgen::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  const __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  const __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_max_sd(lo, swapped));
}

// exp over 4 lanes, Cephes-style: n = round(x*log2e), polynomial rational
// approximation of e^r on the reduced range, then scale by 2^n through the
// exponent bits. Finite inputs only; x < -708 flushes to 0 and x > 708
// saturates at exp(708).
inline __m256d exp4(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d p0 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d q0 = _mm256_set1_pd(2.00000000000000000005e0);
  const __m256d q1 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q2 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q3 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d bound = _mm256_set1_pd(708.0);

  const __m256d underflow = _mm256_cmp_pd(x, _mm256_sub_pd(_mm256_setzero_pd(), bound), _CMP_LT_OQ);
  x = _mm256_min_pd(_mm256_max_pd(x, _mm256_sub_pd(_mm256_setzero_pd(), bound)), bound);

  const __m256d nd =
      _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(nd, ln2_hi, x);
  r = _mm256_fnmadd_pd(nd, ln2_lo, r);

  const __m256d z = _mm256_mul_pd(r, r);
  __m256d px = _mm256_fmadd_pd(p2, z, p1);
  px = _mm256_fmadd_pd(px, z, p0);
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_fmadd_pd(q3, z, q2);
  qx = _mm256_fmadd_pd(qx, z, q1);
  qx = _mm256_fmadd_pd(qx, z, q0);
  __m256d er = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  er = _mm256_fmadd_pd(er, _mm256_set1_pd(2.0), _mm256_set1_pd(1.0));

  const __m128i n32 = _mm256_cvtpd_epi32(nd);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  n64 = _mm256_add_epi64(n64, _mm256_set1_epi64x(1023));
  n64 = _mm256_slli_epi64(n64, 52);
  const __m256d pow2n = _mm256_castsi256_pd(n64);

  return _mm256_andnot_pd(underflow, _mm256_mul_pd(er, pow2n));
}

double avx2_reduce_max(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  if (n >= 4) {
    __m256d vm = _mm256_set1_pd(m);
    for (; i + 4 <= n; i += 4) {
      vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
    }
    m = hmax(vm);
  }
  for (; i < n; ++i) {
    if (x[i] > m) {
      m = x[i];
    }
  }
  return m;
}

double avx2_reduce_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    s += x[i];
  }
  return s;
}

double avx2_exp_shift(const double* x, std::size_t n, double shift, double* out) {
  const __m256d vshift = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp4(_mm256_sub_pd(_mm256_loadu_pd(x + i), vshift));
    _mm256_storeu_pd(out + i, e);
    acc = _mm256_add_pd(acc, e);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    out[i] = std::exp(x[i] - shift);
    s += out[i];
  }
  return s;
}

void avx2_scale(double* x, std::size_t n, double a) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  }
  for (; i < n; ++i) {
    x[i] *= a;
  }
}

void avx2_axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) {
    y[i] += a * x[i];
  }
}

double avx2_dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    s += x[i] * y[i];
  }
  return s;
}

std::size_t avx2_clamp(double* x, std::size_t n, double lo, double hi) {
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  std::size_t moved = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d orig = _mm256_loadu_pd(x + i);
    const __m256d clamped = _mm256_min_pd(_mm256_max_pd(orig, vlo), vhi);
    const int mask = _mm256_movemask_pd(_mm256_cmp_pd(orig, clamped, _CMP_NEQ_OQ));
    moved += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(mask)));
    _mm256_storeu_pd(x + i, clamped);
  }
  for (; i < n; ++i) {
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

const Ops* avx2_ops_or_null() {
  static const Ops table{
      "avx2",     avx2_reduce_max, avx2_reduce_sum, avx2_exp_shift,
      avx2_scale, avx2_axpy,       avx2_dot,        avx2_clamp,
  };
  return &table;
}

}  // namespace fairgen::kernels

#else  // no AVX2 at compile time

namespace fairgen::kernels {
const Ops* avx2_ops_or_null() { return nullptr; }
}  // namespace fairgen::kernels

#endif
