#include "test_util.hpp"

#include "vem/temporal.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

using namespace vem::temporal;
using vem::testing::randn;

namespace {

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x); }

double reference_kernel(double dt, double cutoff, int a) {
  const double x = 2.0 * cutoff * dt;
  return std::abs(x) < a ? sinc(x) * sinc(x / a) : 0.0;
}

FeatureTimeSeries regular(double rate_hz, double duration, Eigen::Index width, std::mt19937_64* rng = nullptr) {
  FeatureTimeSeries f;
  const auto n = static_cast<Eigen::Index>(duration * rate_hz);
  for (Eigen::Index i = 0; i < n; ++i) f.timestamps.push_back(static_cast<double>(i) / rate_hz);
  f.values = rng ? randn(n, width, *rng) : Eigen::MatrixXd::Ones(n, width);
  return f;
}

}  // namespace

TEST_CASE("kernel is 1 at zero and vanishes outside its support") {
  CHECK(lanczos_kernel(0.0, 0.25, 3) == 1.0);
  // Support ends at |dt| = lobes / (2 * cutoff) = 6 s.
  CHECK(lanczos_kernel(6.0, 0.25, 3) == 0.0);
  CHECK(lanczos_kernel(-6.5, 0.25, 3) == 0.0);
  CHECK(lanczos_kernel(5.9, 0.25, 3) != 0.0);
  for (int k = 1; k < 3; ++k) CHECK(lanczos_kernel(2.0 * k, 0.25, 3) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
}

TEST_CASE("kernel matches the windowed sinc") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 500; ++i) {
    const double dt = vem::testing::uniform(rng, -8.0, 8.0);
    const double fc = vem::testing::uniform(rng, 0.1, 1.0);
    const int a = vem::testing::uniform_int(rng, 1, 4);
    CHECK(lanczos_kernel(dt, fc, a) == doctest::Approx(reference_kernel(dt, fc, a)).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("resampling is linear") {
  std::mt19937_64 rng(12);
  auto f = regular(3.0, 60.0, 4, &rng);
  auto g = f;
  g.values = randn(g.values.rows(), 4, rng);
  auto h = f;
  h.values = 2.5 * f.values - 0.7 * g.values;
  const auto grid = tr_onsets(30, 2.0);
  const Eigen::MatrixXd lhs = lanczos_resample(h, grid);
  const Eigen::MatrixXd rhs = 2.5 * lanczos_resample(f, grid) - 0.7 * lanczos_resample(g, grid);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("resampling matches a brute-force sum") {
  std::mt19937_64 rng(21);
  FeatureTimeSeries f;
  double t = 0.05;
  while (t < 50.0) {
    f.timestamps.push_back(t);
    t += vem::testing::uniform(rng, 0.05, 0.6);
  }
  f.values = randn(static_cast<Eigen::Index>(f.timestamps.size()), 3, rng);
  const auto grid = tr_onsets(25, 2.0);
  const Eigen::MatrixXd out = lanczos_resample(f, grid);
  for (std::size_t r = 0; r < grid.size(); ++r) {
    Eigen::RowVectorXd ref = Eigen::RowVectorXd::Zero(3);
    for (std::size_t i = 0; i < f.timestamps.size(); ++i)
      ref += reference_kernel(f.timestamps[i] - grid[r], 0.25, 3) * f.values.row(static_cast<Eigen::Index>(i));
    CHECK((out.row(static_cast<Eigen::Index>(r)) - ref).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("DC gain equals item density per output sample") {
  // Constant items at 10 Hz against a 2 s grid, cutoff 0.25 Hz.
  const auto f = regular(10.0, 200.0, 1);
  const auto grid = tr_onsets(100, 2.0);
  const Eigen::MatrixXd out = lanczos_resample(f, grid);
  const double gain = 10.0 / (2.0 * 0.25);
  for (Eigen::Index r = 10; r < 90; ++r) CHECK(out(r, 0) == doctest::Approx(gain).epsilon(0.01));
}

TEST_CASE("items on the output grid pass through unchanged") {
  std::mt19937_64 rng(2);
  FeatureTimeSeries f;
  f.timestamps = tr_onsets(40, 2.0);
  f.values = randn(40, 5, rng);
  const Eigen::MatrixXd out = lanczos_resample(f, f.timestamps);
  CHECK((out - f.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("resampling errors") {
  FeatureTimeSeries f;
  f.timestamps = {0.0, 1.0, 1.0};
  f.values = Eigen::MatrixXd::Ones(3, 2);
  const auto grid = tr_onsets(5, 2.0);
  CHECK_THROWS_AS(lanczos_resample(f, grid), std::invalid_argument);
  f.timestamps = {0.0, 1.0};
  CHECK_THROWS_AS(lanczos_resample(f, grid), std::invalid_argument);
  f.timestamps = {0.0, 1.0, 2.0};
  const std::vector<double> single{0.0};
  CHECK_THROWS_AS(lanczos_resample(f, single), std::invalid_argument);
  LanczosParams p;
  p.lobes = 0;
  CHECK_THROWS_AS(lanczos_resample(f, grid, p), std::invalid_argument);
}

TEST_CASE("delayed design of an impulse") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(10, 1);
  x(0, 0) = 1.0;
  const auto d = make_delayed(x);
  REQUIRE(d.matrix.rows() == 10);
  REQUIRE(d.matrix.cols() == 4);
  CHECK(d.n_features() == 1);
  for (int b = 0; b < 4; ++b)
    for (int r = 0; r < 10; ++r) CHECK(d.matrix(r, b) == (r == b + 1 ? 1.0 : 0.0));
}

TEST_CASE("zero delay is the identity") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd x = randn(12, 3, rng);
  CHECK(make_delayed(x, {0}).matrix == x);
}

TEST_CASE("each delay block is a shifted copy") {
  std::mt19937_64 rng(31);
  const Eigen::MatrixXd x = randn(50, 7, rng);
  const std::vector<int> delays{1, 2, 3, 4};
  const auto d = make_delayed(x, delays);
  for (std::size_t b = 0; b < delays.size(); ++b) {
    const int k = delays[b];
    const auto block = d.matrix.middleCols(static_cast<Eigen::Index>(b) * 7, 7);
    CHECK(block.topRows(k).isZero(0.0));
    CHECK(block.bottomRows(50 - k) == x.topRows(50 - k));
  }
}

TEST_CASE("delay errors") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 2);
  CHECK_THROWS_AS(make_delayed(x, {}), std::invalid_argument);
  CHECK_THROWS_AS(make_delayed(x, {-1}), std::invalid_argument);
  CHECK_THROWS_AS(make_delayed(x, {4}), std::invalid_argument);
}
