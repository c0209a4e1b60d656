#include "test_util.hpp"

#include "vem/error.hpp"
#include "vem/stacker.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

using namespace vem::stacker;
using vem::testing::randn;

namespace {

Eigen::MatrixXd random_psd(int k, std::mt19937_64& rng) {
  const Eigen::MatrixXd a = randn(k + 2, k, rng);
  return a.transpose() * a;
}

double objective(const Eigen::MatrixXd& R, const Eigen::VectorXd& a) { return a.dot(R * a); }

// Brute-force minimum of a' R a on a grid over the 3-simplex.
double grid_minimum_3(const Eigen::MatrixXd& R, double step) {
  double best = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(std::lround(1.0 / step));
  for (int i = 0; i <= n; ++i)
    for (int j = 0; i + j <= n; ++j) {
      const Eigen::Vector3d a(i * step, j * step, (n - i - j) * step);
      best = std::min(best, objective(R, a));
    }
  return best;
}

vem::ridge::CvConfig small_cv() {
  vem::ridge::CvConfig cv;
  cv.n_bootstraps = 2;
  cv.chunk_length_trs = 10;
  cv.alpha_grid = {0.1, 10.0, 1000.0};
  return cv;
}

}  // namespace

TEST_CASE("single space gets all the weight") {
  Eigen::MatrixXd R(1, 1);
  R << 3.0;
  const auto q = solve_simplex_qp(R);
  CHECK(q.alpha(0) == 1.0);
  CHECK(q.objective == doctest::Approx(3.0));
}

TEST_CASE("diagonal residual covariances weight inversely to variance") {
  const auto a = solve_simplex_qp(Eigen::Matrix2d::Identity()).alpha;
  CHECK(a(0) == doctest::Approx(0.5));
  CHECK(a(1) == doctest::Approx(0.5));
  const auto b = solve_simplex_qp(Eigen::Vector2d(1.0, 4.0).asDiagonal().toDenseMatrix()).alpha;
  CHECK(b(0) == doctest::Approx(0.8));
  CHECK(b(1) == doctest::Approx(0.2));
}

TEST_CASE("optimum on a vertex") {
  Eigen::Matrix2d R;
  R << 1, 2, 2, 9;
  const auto q = solve_simplex_qp(R);
  CHECK(q.alpha(0) == doctest::Approx(1.0));
  CHECK(q.alpha(1) == doctest::Approx(0.0).scale(1.0));
  CHECK(simplex_kkt_residual(R, q.alpha) < 1e-9);
}

TEST_CASE("random 3x3 problems agree with a grid search") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::MatrixXd R = random_psd(3, rng);
    const auto q = solve_simplex_qp(R);
    CHECK(q.alpha.minCoeff() >= -1e-12);
    CHECK(q.alpha.sum() == doctest::Approx(1.0).epsilon(1e-12));
    const double grid = grid_minimum_3(R, 2e-3);
    CHECK(q.objective <= grid + 1e-12);
    CHECK(q.objective >= grid - 1e-2 * R.diagonal().maxCoeff());
    CHECK(simplex_kkt_residual(R, q.alpha) < 1e-6);
  }
}

TEST_CASE("solution is invariant to scaling the covariance") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int k = vem::testing::uniform_int(rng, 2, 6);
    const Eigen::MatrixXd R = random_psd(k, rng);
    const double c = std::pow(10.0, vem::testing::uniform(rng, -4.0, 4.0));
    const auto a = solve_simplex_qp(R).alpha;
    const auto b = solve_simplex_qp(c * R).alpha;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("singular covariance still yields a simplex minimiser") {
  const Eigen::MatrixXd R = Eigen::MatrixXd::Ones(4, 4);
  const auto q = solve_simplex_qp(R);
  CHECK(q.alpha.minCoeff() >= -1e-12);
  CHECK(q.alpha.sum() == doctest::Approx(1.0));
  CHECK(q.objective == doctest::Approx(1.0));
}

TEST_CASE("QP input errors") {
  Eigen::Matrix2d R;
  R << 1, 2, 0, 1;
  CHECK_THROWS_AS(solve_simplex_qp(R), std::invalid_argument);
  CHECK_THROWS_AS(solve_simplex_qp(Eigen::MatrixXd::Ones(2, 3)), std::invalid_argument);
  R << 1, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(), 1;
  CHECK_THROWS_AS(solve_simplex_qp(R), vem::ComputeError);
}

TEST_CASE("residual covariance matches a brute-force sum") {
  std::mt19937_64 rng(3);
  HeldoutPredictions h;
  const Eigen::MatrixXd Y = randn(50, 4, rng);
  for (int s = 0; s < 3; ++s) h.per_space.push_back(randn(50, 4, rng));
  const auto R = residual_covariance(h, Y, 2);
  REQUIRE(R.per_voxel.size() == 4);
  for (int v = 0; v < 4; ++v)
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q) {
        double s = 0.0;
        for (int t = 0; t < 50; ++t) s += (Y(t, v) - h.per_space[p](t, v)) * (Y(t, v) - h.per_space[q](t, v));
        CHECK(std::abs(R.per_voxel[v](p, q) - s) <= 1e-10 * std::max(1.0, std::abs(s)));
      }
  h.per_space[1](3, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(residual_covariance(h, Y), vem::ComputeError);
}

TEST_CASE("folds keep whole stories when there are enough") {
  const std::vector<Eigen::Index> lengths{100, 100, 100, 100, 100, 100, 100};
  const auto f = make_folds(lengths, 5);
  f.validate(700);
  for (int fold = 0; fold < 5; ++fold) CHECK(!f.rows_in(fold).empty());
  for (int s = 0; s < 7; ++s)
    for (int t = 1; t < 100; ++t) CHECK(f.fold_of_row[s * 100 + t] == f.fold_of_row[s * 100]);
  CHECK(std::is_sorted(f.fold_of_row.begin(), f.fold_of_row.end()));
}

TEST_CASE("few stories fall back to contiguous chunks") {
  const std::vector<Eigen::Index> lengths{150, 103};
  const auto f = make_folds(lengths, 5, 20);
  f.validate(253);
  CHECK(std::is_sorted(f.fold_of_row.begin(), f.fold_of_row.end()));
  for (int t = 0; t < 253; t += 20)
    for (int u = t; u < std::min(253, t + 20); ++u) CHECK(f.fold_of_row[u] == f.fold_of_row[t]);
  CHECK_THROWS_AS(make_folds(std::vector<Eigen::Index>{60}, 5, 20), std::invalid_argument);
}

TEST_CASE("fold specs must partition the rows") {
  FoldSpec f{{0, 0, 1, -1, 1}, 2};
  CHECK_THROWS_AS(f.validate(5), std::invalid_argument);
  f.fold_of_row = {0, 0, 0, 0, 0};
  CHECK_THROWS_AS(f.validate(5), std::invalid_argument);
  f.fold_of_row = {0, 1, 0, 1};
  CHECK_THROWS_AS(f.validate(5), std::invalid_argument);
  f.fold_of_row = {0, 1, 0, 1, 2};
  CHECK_THROWS_AS(f.validate(5), std::invalid_argument);
}

TEST_CASE("held-out predictions equal a manual fold loop") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd X1 = randn(200, 4, rng), X2 = randn(200, 6, rng);
  const Eigen::MatrixXd Y = X1 * randn(4, 3, rng) + randn(200, 3, rng);
  const std::vector<Eigen::MatrixXd> spaces{X1, X2};
  const auto folds = make_folds(std::vector<Eigen::Index>{50, 50, 50, 50}, 4);
  const auto h = heldout_predictions(spaces, Y, folds, small_cv());
  for (int f = 0; f < 4; ++f) {
    const auto test = folds.rows_in(f), train = folds.rows_not_in(f);
    for (std::size_t s = 0; s < 2; ++s) {
      const auto m = vem::ridge::fit_ridge(Eigen::MatrixXd(spaces[s](train, Eigen::all)),
                                           Eigen::MatrixXd(Y(train, Eigen::all)), small_cv());
      const Eigen::MatrixXd ref = vem::ridge::predict(m, spaces[s](test, Eigen::all));
      CHECK((Eigen::MatrixXd(h.per_space[s](test, Eigen::all)) - ref).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("centre of mass") {
  CHECK(center_of_mass(std::vector<double>{0, 0, 0, 0, 1}) == doctest::Approx(5.0));
  CHECK(center_of_mass(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(2.5));
  CHECK(center_of_mass(std::vector<double>{0.8, 0.2, 0.0}) == doctest::Approx(1.2));
  CHECK_THROWS_AS(center_of_mass(std::vector<double>{0.5, 0.4}), std::invalid_argument);
  CHECK_THROWS_AS(center_of_mass(std::vector<double>{1.5, -0.5}), std::invalid_argument);
  CHECK_THROWS_AS(center_of_mass(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("centre of mass lies between 1 and the number of layers") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = vem::testing::uniform_int(rng, 1, 12);
    std::vector<double> a(static_cast<std::size_t>(k));
    double s = 0.0;
    for (auto& x : a) s += (x = -std::log(vem::testing::uniform(rng, 1e-12, 1.0)));
    for (auto& x : a) x /= s;
    const double c = center_of_mass(a);
    CHECK(c >= 1.0 - 1e-12);
    CHECK(c <= k + 1e-12);
  }
}

TEST_CASE("subset centre of mass renormalises") {
  const std::vector<double> alpha{0.1, 0.3, 0.6};
  const std::vector<Eigen::Index> audio{0, 1};
  CHECK(subset_center_of_mass(alpha, audio) == doctest::Approx(1.75));
  const std::vector<double> semantic_only{0.0, 0.0, 1.0};
  CHECK(subset_center_of_mass(semantic_only, audio) == 0.0);
  const std::vector<Eigen::Index> bad{3};
  CHECK_THROWS_AS(subset_center_of_mass(alpha, bad), std::out_of_range);
}

TEST_CASE("one-hot attribution reproduces that space exactly") {
  std::mt19937_64 rng(6);
  const std::vector<Eigen::MatrixXd> preds{randn(30, 3, rng), randn(30, 3, rng), randn(30, 3, rng)};
  Eigen::MatrixXd alpha = Eigen::MatrixXd::Zero(3, 3);
  alpha(0, 2) = alpha(1, 0) = alpha(2, 1) = 1.0;
  const Eigen::MatrixXd out = stacked_predict(preds, alpha);
  CHECK(out.col(0) == preds[2].col(0));
  CHECK(out.col(1) == preds[0].col(1));
  CHECK(out.col(2) == preds[1].col(2));
}

TEST_CASE("stacked prediction is the voxelwise convex combination") {
  std::mt19937_64 rng(7);
  const std::vector<Eigen::MatrixXd> preds{randn(20, 2, rng), randn(20, 2, rng)};
  Eigen::MatrixXd alpha(2, 2);
  alpha << 0.3, 0.7, 1.0, 0.0;
  const Eigen::MatrixXd out = stacked_predict(preds, alpha);
  CHECK((out.col(0) - (0.3 * preds[0].col(0) + 0.7 * preds[1].col(0))).cwiseAbs().maxCoeff() < 1e-15);
  alpha << 0.3, 0.6, 1.0, 0.0;
  CHECK_THROWS_AS(stacked_predict(preds, alpha), std::invalid_argument);
  CHECK_THROWS_AS(stacked_predict(preds, Eigen::MatrixXd::Ones(3, 2) * 0.5), std::invalid_argument);
}

TEST_CASE("gate picks the stacked model only where it is reliably better") {
  std::mt19937_64 rng(8);
  const int T = 200;
  const Eigen::MatrixXd y = randn(T, 3, rng);
  Eigen::MatrixXd stacked = y + 0.5 * randn(T, 3, rng);
  Eigen::MatrixXd baseline = y + 3.0 * randn(T, 3, rng);
  stacked.col(1) = y.col(1) + 3.0 * randn(T, 1, rng);
  baseline.col(1) = y.col(1) + 0.5 * randn(T, 1, rng);
  stacked.col(2) = baseline.col(2);
  GateConfig cfg;
  cfg.n_resamples = 300;
  const std::vector<std::string> fit{"a", "b"}, val{"c"};
  const auto g = gate_stacked(stacked, baseline, y, cfg, fit, val);
  CHECK(g.gate == std::vector<Gate>{Gate::stacked, Gate::baseline, Gate::baseline});
  CHECK(g.delta_r(0) > 0.0);
  CHECK(g.delta_r(1) < 0.0);
  CHECK(g.delta_r(2) == 0.0);
  CHECK(g.support(0) >= 0.95);
  const auto again = gate_stacked(stacked, baseline, y, cfg, fit, val);
  CHECK(again.support == g.support);
  const std::vector<std::string> leak{"b"};
  CHECK_THROWS_AS(gate_stacked(stacked, baseline, y, cfg, fit, leak), vem::ValidationError);
}

TEST_CASE("gated prediction selects per voxel") {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd s = randn(10, 3, rng), b = randn(10, 3, rng);
  const Eigen::MatrixXd out = gated_predict(s, b, {Gate::baseline, Gate::stacked, Gate::baseline});
  CHECK(out.col(0) == b.col(0));
  CHECK(out.col(1) == s.col(1));
  CHECK(out.col(2) == b.col(2));
  CHECK_THROWS_AS(gated_predict(s, b, {Gate::baseline}), std::invalid_argument);
}

TEST_CASE("default stack composition") {
  const auto c = default_stack_composition(12);
  CHECK(c.audio_layers == std::vector<int>{2, 4, 6, 8, 10, 12});
  CHECK(c.semantic_layer == 18);
  CHECK(default_stack_composition(5, 20).audio_layers == std::vector<int>{2, 4});
  CHECK_THROWS_AS(default_stack_composition(1), std::invalid_argument);
}
