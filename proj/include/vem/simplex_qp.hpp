#pragma once

#include <Eigen/Dense>

namespace vem::stacker {

struct QpResult {
  Eigen::VectorXd alpha;
  double objective = 0.0;
  int iterations = 0;
};

/// Minimises alpha' R alpha over the probability simplex (alpha >= 0,
/// sum alpha = 1) with a primal active-set method.
///
/// R must be symmetric positive semidefinite. Singular R is fine: each
/// equality-constrained subproblem is solved in the least-norm sense, which
/// is exact because the KKT system of a bounded convex QP is consistent.
QpResult solve_simplex_qp(const Eigen::MatrixXd& R);

/// Largest KKT violation of a candidate: spread of the gradient over the
/// support, and how far any off-support gradient component dips below the
/// common support value. Both relative to max|R|.
double simplex_kkt_residual(const Eigen::MatrixXd& R, const Eigen::VectorXd& alpha);

}  // namespace vem::stacker
