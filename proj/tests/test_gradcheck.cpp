#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcf/gradcheck.hpp"
#include "lcf/kernels.hpp"

using namespace lcf;

TEST_CASE("numeric_gradient on a quadratic") {
  const auto f = [](std::span<const double> x) {
    double s = 0;
    for (double v : x) s += v * v;
    return s;
  };
  const std::vector<double> x{1.0, 2.0};
  const auto g = numeric_gradient(f, x, 1e-5);
  CHECK(std::abs(g[0] - 2.0) < 1e-8);
  CHECK(std::abs(g[1] - 4.0) < 1e-8);
}

TEST_CASE("numeric_gradient of a constant is zero") {
  const auto g = numeric_gradient(
      [](std::span<const double>) { return 42.0; },
      std::vector<double>{1, 2, 3}, 1e-5);
  for (const double v : g) CHECK(v == 0.0);
}

TEST_CASE("numeric_gradient recovers a linear form") {
  SplitMix64 rng(5);
  std::vector<double> w(12), x(12);
  for (double& v : w) v = rng.uniform(-2, 2);
  for (double& v : x) v = rng.uniform(-2, 2);
  const auto g = numeric_gradient(
      [&](std::span<const double> q) {
        double s = 0;
        for (size_t i = 0; i < q.size(); ++i) s += w[i] * q[i];
        return s;
      },
      x, 1e-5);
  for (size_t i = 0; i < w.size(); ++i) CHECK(std::abs(g[i] - w[i]) < 1e-9);
}

TEST_CASE("numeric_gradient rejects non-finite evaluations") {
  CHECK_THROWS(numeric_gradient(
      [](std::span<const double> x) { return std::log(x[0]); },
      std::vector<double>{0.0}, 1e-5));
  CHECK_THROWS(numeric_gradient(
      [](std::span<const double>) { return 1.0; },
      std::vector<double>{1.0}, 0.0));
}

TEST_CASE("softmax Jacobian at the symmetric point") {
  PrecisionGuard guard(Precision::f64);
  const std::vector<double> x{0.0, 0.0, 0.0};
  const auto p = softmax(x);
  // Jacobian diag(p) - p p^T with p = 1/3; probe each row with basis g.
  for (size_t row = 0; row < 3; ++row) {
    std::vector<double> g(3, 0.0);
    g[row] = 1.0;
    const auto analytic = softmax_vjp(p, g);
    const auto numeric = numeric_gradient(
        [&](std::span<const double> q) { return softmax(q)[row]; }, x, 1e-5);
    for (size_t i = 0; i < 3; ++i) {
      const double expect = (i == row ? 1.0 / 3 : 0.0) - 1.0 / 9;
      CHECK(std::abs(analytic[i] - expect) < 1e-15);
      CHECK(std::abs(numeric[i] - expect) < 1e-9);
    }
  }
}

TEST_CASE("softmax gradient conserves normalization") {
  PrecisionGuard guard(Precision::f64);
  SplitMix64 rng(8);
  std::vector<double> x(10);
  for (double& v : x) v = rng.uniform(-3, 3);
  const auto p = softmax(x);
  // d(sum output)/dx through the VJP with g = 1 is exactly zero.
  const auto analytic = softmax_vjp(p, std::vector<double>(10, 1.0));
  for (const double v : analytic) CHECK(v == 0.0);
  const auto numeric = numeric_gradient(
      [](std::span<const double> q) {
        double s = 0;
        for (const double v : softmax(q)) s += v;
        return s;
      },
      x, 1e-5);
  for (const double v : numeric) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("bilinear gradient at a cell center equals the neighbor quotient") {
  PrecisionGuard guard(Precision::f64);
  FeatureMap fm = FeatureMap::zeros(3, 4, 1, 2);
  SplitMix64 rng(12);
  for (double& v : fm.data) v = rng.uniform(-1, 1);
  // Exactly at cell (1, 1) center: wx = wy = 0, the analytic derivative is
  // the forward difference to the next cell, scaled to pixel units.
  std::vector<double> value(1), du(1), dv(1);
  bilinear_sample_grad(fm, 1.5 * fm.stride, 1.5 * fm.stride, value, du, dv);
  CHECK(value[0] == fm.at(1, 1, 0));
  CHECK(du[0] == doctest::Approx((fm.at(1, 2, 0) - fm.at(1, 1, 0)) / fm.stride)
                     .epsilon(1e-15));
  CHECK(dv[0] == doctest::Approx((fm.at(2, 1, 0) - fm.at(1, 1, 0)) / fm.stride)
                     .epsilon(1e-15));
}

TEST_CASE("full gradient suite passes at 1e-5") {
  const auto reports = check_gradients(2026, 1e-5, 32, 1e-5);
  REQUIRE(reports.size() == 5);
  for (const GradReport& r : reports) {
    INFO(r.op, " max_rel=", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.probes == 32);
    CHECK(r.max_rel_err < r.tolerance);
    CHECK((r.pass == (r.max_rel_err < r.tolerance)));
  }
  CHECK(all_pass(reports));
}

TEST_CASE("gradient suite is deterministic per seed") {
  const auto a = check_gradients(9, 1e-5, 8, 1e-5);
  const auto b = check_gradients(9, 1e-5, 8, 1e-5);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].max_rel_err == b[i].max_rel_err);
    CHECK(a[i].max_abs_err == b[i].max_abs_err);
  }
}
