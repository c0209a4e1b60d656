#include "test_util.hpp"

#include "vem/scaling.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

using namespace vem::scaling;
using vem::testing::randn;

TEST_CASE("percent change relative to the smallest model") {
  const std::vector<double> s{0.2, 0.23};
  const auto pc = percent_change(s);
  CHECK(pc[0] == 0.0);
  CHECK(pc[1] == doctest::Approx(15.0));
  const std::vector<double> neg{-0.1, 0.1};
  CHECK(percent_change(neg)[1] == doctest::Approx(200.0));
  CHECK_THROWS_AS(percent_change(std::vector<double>{0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(percent_change(s, 2), std::out_of_range);
}

TEST_CASE("a line in log10 size is recovered exactly") {
  const std::vector<double> sizes{1.25e8, 3.5e8, 1.3e9, 2.7e9, 6.7e9, 1.3e10, 3.3e10};
  std::vector<double> scores;
  for (double s : sizes) scores.push_back(3.0 + 4.4 * std::log10(s));
  const auto f = fit_loglinear(sizes, scores);
  CHECK(f.slope == doctest::Approx(4.4));
  CHECK(f.intercept == doctest::Approx(3.0));
  CHECK(f.pearson_r == doctest::Approx(1.0));
  CHECK_FALSE(f.degenerate);
  const auto f2 = fit_loglinear(sizes, scores, 2.0);
  CHECK(f2.slope == doctest::Approx(4.4 * std::log10(2.0)));
}

TEST_CASE("fit matches an independent least-squares solve") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = vem::testing::uniform_int(rng, 3, 12);
    std::vector<double> sizes, scores;
    double s = vem::testing::uniform(rng, 1.0, 10.0);
    for (int i = 0; i < n; ++i) {
      sizes.push_back(s);
      s *= vem::testing::uniform(rng, 1.1, 3.0);
      scores.push_back(vem::testing::uniform(rng, 0.0, 1.0));
    }
    Eigen::MatrixXd A(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      A(i, 0) = 1.0;
      A(i, 1) = std::log10(sizes[i]);
      y(i) = scores[i];
    }
    const Eigen::Vector2d beta = A.colPivHouseholderQr().solve(y);
    const auto f = fit_loglinear(sizes, scores);
    CHECK(f.slope == doctest::Approx(beta(1)).epsilon(1e-9));
    CHECK(f.intercept == doctest::Approx(beta(0)).epsilon(1e-9));
    CHECK(std::abs(f.pearson_r) <= 1.0);
  }
}

TEST_CASE("constant scores give a degenerate fit") {
  const std::vector<double> sizes{1, 10, 100}, scores{0.3, 0.3, 0.3};
  const auto f = fit_loglinear(sizes, scores);
  CHECK(f.degenerate);
  CHECK(f.slope == 0.0);
  CHECK(f.pearson_r == 0.0);
  CHECK(f.intercept == doctest::Approx(0.3));
}

TEST_CASE("size validation") {
  const std::vector<double> scores{0.1, 0.2, 0.3};
  CHECK_THROWS_AS(fit_loglinear(std::vector<double>{1, 10, 10}, scores), std::invalid_argument);
  CHECK_THROWS_AS(fit_loglinear(std::vector<double>{1, 10, 5}, scores), std::invalid_argument);
  CHECK_THROWS_AS(fit_loglinear(std::vector<double>{0, 10, 20}, scores), std::invalid_argument);
  CHECK_THROWS_AS(fit_loglinear(std::vector<double>{1, 10}, scores), std::invalid_argument);
  CHECK_THROWS_AS(fit_loglinear(std::vector<double>{1}, std::vector<double>{0.1}), std::invalid_argument);
  CHECK_THROWS_AS(fit_loglinear(std::vector<double>{1, 2, 3}, scores, 1.0), std::invalid_argument);
}

TEST_CASE("planted voxelwise slopes are recovered") {
  std::mt19937_64 rng(2);
  const std::vector<double> sizes{1, 2, 3, 5, 8, 11, 14, 20, 27};
  const Eigen::VectorXd m = randn(50, 1, rng).col(0) * 0.01;
  const Eigen::VectorXd c = randn(50, 1, rng).col(0);
  Eigen::MatrixXd scores(9, 50);
  for (int i = 0; i < 9; ++i) scores.row(i) = (c + m * std::log2(sizes[static_cast<std::size_t>(i)])).transpose();
  const Eigen::VectorXd slopes = voxelwise_slopes(sizes, scores);
  CHECK((slopes - m).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("voxelwise slopes are linear in the scores and follow the log base") {
  std::mt19937_64 rng(3);
  const std::vector<double> sizes{1, 3, 7, 15};
  const Eigen::MatrixXd a = randn(4, 10, rng), b = randn(4, 10, rng);
  const Eigen::VectorXd sa = voxelwise_slopes(sizes, a), sb = voxelwise_slopes(sizes, b);
  CHECK((voxelwise_slopes(sizes, 2.0 * a - b) - (2.0 * sa - sb)).cwiseAbs().maxCoeff() < 1e-12);
  // Adding a per-voxel constant does not change the slope.
  const Eigen::MatrixXd shifted = a.rowwise() + b.row(0);
  CHECK((voxelwise_slopes(sizes, shifted) - sa).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((voxelwise_slopes(sizes, a, 10.0) - sa * std::log2(10.0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(voxelwise_slopes(sizes, a.topRows(3)), std::invalid_argument);
}

TEST_CASE("aggregate slope is the mean of voxelwise slopes") {
  std::mt19937_64 rng(4);
  const std::vector<double> sizes{2, 4, 8, 16, 32};
  const Eigen::MatrixXd scores = randn(5, 30, rng);
  const Eigen::VectorXd mean = scores.rowwise().mean();
  const std::vector<double> agg(mean.data(), mean.data() + mean.size());
  const auto f = fit_loglinear(sizes, agg, 2.0);
  CHECK(f.slope == doctest::Approx(voxelwise_slopes(sizes, scores).mean()).epsilon(1e-12));
}

TEST_CASE("story subsets are nested and seeded") {
  const std::vector<std::size_t> sizes{1, 3, 5, 10, 20};
  const auto plan = story_subsample_plan(20, sizes, 7);
  REQUIRE(plan.size() == 5);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    CHECK(plan[i].size() == sizes[i]);
    CHECK(std::set<std::size_t>(plan[i].begin(), plan[i].end()).size() == sizes[i]);
    for (auto s : plan[i]) CHECK(s < 20);
    if (i > 0)
      for (auto s : plan[i - 1]) CHECK(std::find(plan[i].begin(), plan[i].end(), s) != plan[i].end());
  }
  CHECK(story_subsample_plan(20, sizes, 7) == plan);
  bool differs = false;
  for (std::uint64_t seed = 8; seed < 20; ++seed) differs |= story_subsample_plan(20, sizes, seed) != plan;
  CHECK(differs);
  CHECK_THROWS_AS(story_subsample_plan(4, sizes, 0), std::invalid_argument);
  CHECK_THROWS_AS(story_subsample_plan(4, std::vector<std::size_t>{0}, 0), std::invalid_argument);
}
