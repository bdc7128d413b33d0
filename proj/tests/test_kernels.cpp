#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "fairgen/kernels.hpp"
#include "fairgen/rng.hpp"

using namespace fairgen;
namespace k = fairgen::kernels;

namespace {

const std::vector<std::size_t> kSizes = {0, 1, 2, 3, 4, 5, 7, 8, 15, 16, 17, 64, 257, 1000};

std::vector<double> random_values(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) {
    x = lo + (hi - lo) * rng.uniform();
  }
  return v;
}

bool close_rel(double a, double b, double rel, double abs_floor = 1e-300) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), abs_floor});
}

}  // namespace

TEST_CASE("kernel variants agree with the scalar reference") {
  const k::Ops& scalar = k::ops(k::Variant::scalar);
  for (const k::Variant variant : k::compiled_variants()) {
    if (variant == k::Variant::scalar || !k::supported(variant)) {
      continue;
    }
    const k::Ops& simd = k::ops(variant);
    CAPTURE(simd.name);
    Rng rng(2024);

    for (const std::size_t n : kSizes) {
      const std::vector<double> x = random_values(rng, n, -30.0, 10.0);
      const std::vector<double> y = random_values(rng, n, -2.0, 2.0);

      if (n > 0) {
        CHECK(scalar.reduce_max(x.data(), n) == simd.reduce_max(x.data(), n));
      }

      const double sum_tol = 1e-13 * std::max(1.0, std::abs(scalar.reduce_sum(x.data(), n)));
      CHECK(std::abs(scalar.reduce_sum(x.data(), n) - simd.reduce_sum(x.data(), n)) <= sum_tol);

      std::vector<double> out_a(n), out_b(n);
      const double shift = n > 0 ? scalar.reduce_max(x.data(), n) : 0.0;
      const double s_a = scalar.exp_shift(x.data(), n, shift, out_a.data());
      const double s_b = simd.exp_shift(x.data(), n, shift, out_b.data());
      CHECK(close_rel(s_a, s_b, 1e-13));
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(close_rel(out_a[i], out_b[i], 5e-14));
      }

      std::vector<double> ya = y;
      std::vector<double> yb = y;
      scalar.axpy(0.37, x.data(), ya.data(), n);
      simd.axpy(0.37, x.data(), yb.data(), n);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(close_rel(ya[i], yb[i], 1e-13, 1e-12));
      }

      const double dot_a = scalar.dot(x.data(), y.data(), n);
      const double dot_b = simd.dot(x.data(), y.data(), n);
      double dot_mag = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        dot_mag += std::abs(x[i] * y[i]);
      }
      CHECK(std::abs(dot_a - dot_b) <= 1e-13 * dot_mag);

      std::vector<double> sa = x;
      std::vector<double> sb = x;
      scalar.scale(sa.data(), n, -1.75);
      simd.scale(sb.data(), n, -1.75);
      CHECK(sa == sb);

      std::vector<double> ca = x;
      std::vector<double> cb = x;
      const std::size_t moved_a = scalar.clamp(ca.data(), n, -5.0, 5.0);
      const std::size_t moved_b = simd.clamp(cb.data(), n, -5.0, 5.0);
      CHECK(moved_a == moved_b);
      CHECK(ca == cb);
    }
  }
}

TEST_CASE("simd exp_shift tracks std::exp closely over the softmax input range") {
  for (const k::Variant variant : k::compiled_variants()) {
    if (variant == k::Variant::scalar || !k::supported(variant)) {
      continue;
    }
    const k::Ops& simd = k::ops(variant);
    Rng rng(7);
    std::vector<double> x(4096);
    for (double& v : x) {
      v = -70.0 + 75.0 * rng.uniform();  // typical shifted-logit range
    }
    std::vector<double> out(x.size());
    simd.exp_shift(x.data(), x.size(), 0.0, out.data());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double expected = std::exp(x[i]);
      CHECK(close_rel(out[i], expected, 4e-15));
    }

    // Deep-underflow inputs flush to zero rather than producing garbage.
    std::vector<double> tiny = {-800.0, -710.0, -1000.0, -750.0};
    std::vector<double> tiny_out(tiny.size());
    simd.exp_shift(tiny.data(), tiny.size(), 0.0, tiny_out.data());
    for (const double v : tiny_out) {
      CHECK(v == 0.0);
    }
  }
}

TEST_CASE("exp_shift works in place") {
  for (const k::Variant variant : k::compiled_variants()) {
    if (!k::supported(variant)) {
      continue;
    }
    const k::Ops& ops = k::ops(variant);
    std::vector<double> x = {-1.0, 0.0, 0.5, 1.0, 2.0, -3.0, 4.0};
    std::vector<double> expected(x.size());
    double expected_sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      expected[i] = std::exp(x[i] - 1.0);
      expected_sum += expected[i];
    }
    const double sum = ops.exp_shift(x.data(), x.size(), 1.0, x.data());
    CHECK(close_rel(sum, expected_sum, 1e-13));
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(close_rel(x[i], expected[i], 4e-15));
    }
  }
}

TEST_CASE("softmax helper normalizes and preserves order") {
  const std::vector<double> logits = {std::log(2.0), 0.0, 0.0};
  std::vector<double> probs(3);
  k::softmax(logits, probs);
  CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(probs[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(std::abs(probs[0] + probs[1] + probs[2] - 1.0) < 1e-12);

  const double lse = k::log_sum_exp(logits);
  CHECK(lse == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(k::log_prob_at(logits, 0) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("kernel selection honors explicit requests") {
  k::select(k::Variant::scalar);
  CHECK(std::string(k::active().name) == "scalar");
  k::select_auto();
  CHECK(k::supported(k::Variant::scalar));
  CHECK(k::select_by_name("auto"));
  CHECK_FALSE(k::select_by_name("never-heard-of-it"));
}

TEST_CASE("clamp counts only entries that moved") {
  for (const k::Variant variant : k::compiled_variants()) {
    if (!k::supported(variant)) {
      continue;
    }
    std::vector<double> x = {-20.0, -15.0, -14.9, 0.0, 14.9, 15.0, 20.0, 100.0};
    const std::size_t moved = k::ops(variant).clamp(x.data(), x.size(), -15.0, 15.0);
    CHECK(moved == 3);
    CHECK(x[0] == -15.0);
    CHECK(x[7] == 15.0);
  }
}
