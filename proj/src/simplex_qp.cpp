#include "vem/simplex_qp.hpp"

#include "vem/error.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace vem::stacker {
namespace {

// Minimiser of b' R_FF b subject to sum(b) = 1, scattered back to length k.
Eigen::VectorXd solve_on_support(const Eigen::MatrixXd& R, const std::vector<Eigen::Index>& support) {
  const auto m = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) kkt(i, j) = 2.0 * R(support[i], support[j]);
    kkt(i, m) = 1.0;
    kkt(m, i) = 1.0;
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
  rhs(m) = 1.0;
  const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(R.rows());
  for (Eigen::Index i = 0; i < m; ++i) full(support[i]) = sol(i);
  return full;
}

}  // namespace

double simplex_kkt_residual(const Eigen::MatrixXd& R, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd g = R * alpha;
  const double scale = std::max(R.cwiseAbs().maxCoeff(), 1e-300);
  double lambda = 0.0;
  int n_active = 0;
  for (Eigen::Index j = 0; j < alpha.size(); ++j)
    if (alpha(j) > 1e-10) {
      lambda += g(j);
      ++n_active;
    }
  if (n_active == 0) return 1.0;
  lambda /= n_active;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    if (alpha(j) > 1e-10)
      worst = std::max(worst, std::abs(g(j) - lambda));
    else
      worst = std::max(worst, lambda - g(j));
  }
  return worst / scale;
}

QpResult solve_simplex_qp(const Eigen::MatrixXd& R_in) {
  const Eigen::Index k = R_in.rows();
  if (k == 0) throw std::invalid_argument("simplex QP needs at least one feature space");
  if (R_in.cols() != k) throw std::invalid_argument("residual covariance must be square");
  if (!R_in.allFinite()) throw ComputeError("residual covariance has non-finite entries");
  const double rmax = R_in.cwiseAbs().maxCoeff();
  if ((R_in - R_in.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(rmax, 1.0))
    throw std::invalid_argument("residual covariance is not symmetric");

  QpResult out;
  if (k == 1) {
    out.alpha = Eigen::VectorXd::Ones(1);
    out.objective = R_in(0, 0);
    return out;
  }

  // Work on a unit-scale copy; the minimiser does not depend on scale.
  Eigen::MatrixXd R = 0.5 * (R_in + R_in.transpose());
  if (rmax > 0.0) R /= rmax;
  const double tol = 1e-13;

  Eigen::Index start = 0;
  R.diagonal().minCoeff(&start);
  std::vector<Eigen::Index> support{start};
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(k);
  alpha(start) = 1.0;

  const int max_iter = 50 * static_cast<int>(k) + 100;
  int it = 0;
  for (; it < max_iter; ++it) {
    const Eigen::VectorXd beta = solve_on_support(R, support);
    double min_beta = 0.0;
    for (auto j : support) min_beta = std::min(min_beta, beta(j));

    if (min_beta >= -tol) {
      alpha = beta.cwiseMax(0.0);
      alpha /= alpha.sum();
      const Eigen::VectorXd g = R * alpha;
      double lambda = 0.0;
      for (auto j : support) lambda += g(j);
      lambda /= static_cast<double>(support.size());
      Eigen::Index entering = -1;
      double most_negative = -tol;
      for (Eigen::Index j = 0; j < k; ++j) {
        if (std::find(support.begin(), support.end(), j) != support.end()) continue;
        if (g(j) - lambda < most_negative) {
          most_negative = g(j) - lambda;
          entering = j;
        }
      }
      if (entering < 0) break;
      support.push_back(entering);
      std::sort(support.begin(), support.end());
      continue;
    }

    // Move towards beta until the first support coordinate hits zero.
    double step = 1.0;
    for (auto j : support)
      if (beta(j) < alpha(j) && beta(j) < 0.0) step = std::min(step, alpha(j) / (alpha(j) - beta(j)));
    alpha += step * (beta - alpha);
    std::vector<Eigen::Index> kept;
    for (auto j : support) {
      if (alpha(j) > tol) {
        kept.push_back(j);
      } else {
        alpha(j) = 0.0;
      }
    }
    if (kept.empty()) {
      // Cannot happen in exact arithmetic; fall back to the best vertex.
      alpha.setZero();
      alpha(start) = 1.0;
      kept.push_back(start);
    }
    support = std::move(kept);
    alpha = alpha.cwiseMax(0.0);
    alpha /= alpha.sum();
  }

  out.alpha = alpha;
  out.objective = alpha.dot(R_in * alpha);
  out.iterations = it;
  return out;
}

}  // namespace vem::stacker
