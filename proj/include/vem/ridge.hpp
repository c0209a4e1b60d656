#pragma once

#include "vem/temporal.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vem::ridge {

std::vector<double> logspace(double lo_exp10, double hi_exp10, int n);

/// Regularisation search: n_bootstraps random draws of held-out chunks of
/// chunk_length_trs consecutive TRs, holdout_fraction of the chunks each.
struct CvConfig {
  int n_bootstraps = 15;
  int chunk_length_trs = 20;
  double holdout_fraction = 0.2;
  std::vector<double> alpha_grid = logspace(1.0, 6.0, 10);
  std::uint64_t seed = 0;
  // Execution only; never changes results.
  int workers = 1;
  int voxel_block = 512;

  void validate(Eigen::Index n_rows) const;
};

struct TrainingMeta {
  std::vector<std::string> stories;
  std::size_t n_timepoints = 0;
  std::vector<int> delays_trs;
  CvConfig cv;
};

struct EncodingModel {
  Eigen::MatrixXd weights;  // (features * delays) x voxels
  std::vector<double> alpha_per_voxel;
  std::string feature_space_id;
  int layer_id = 0;
  TrainingMeta meta;
  // Mean held-out correlation for every (alpha, voxel).
  Eigen::MatrixXd cv_scores;
};

/// One side of the thin SVD X = U diag(s) V^T: U when X is wide (n <= p),
/// V when it is tall. Singular values at or below eps * s_max * max(n, p)
/// are removed. Ridge weights use the kernel form
///   wide: W = X^T U diag(1 / (s^2 + alpha)) U^T Y
///   tall: W = V diag(1 / (s^2 + alpha)) V^T X^T Y
/// so no singular value is ever divided by.
struct Spectral {
  bool wide = true;
  Eigen::MatrixXd basis;
  Eigen::VectorXd s;
  static Spectral of(const Eigen::MatrixXd& X);
  Eigen::Index rank() const { return s.size(); }
  /// U^T Y (wide) or V^T X^T Y (tall).
  Eigen::MatrixXd coordinates(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const;
  /// p x rank map from coordinates to weights: X^T U (wide) or V (tall).
  Eigen::MatrixXd weight_map(const Eigen::MatrixXd& X) const;
};

/// Ridge weights for every voxel from one decomposition of X; alphas holds
/// one value per column of Y.
Eigen::MatrixXd solve_ridge(const Eigen::MatrixXd& X, const Spectral& svd, const Eigen::MatrixXd& Y,
                            std::span<const double> alphas, int workers = 1, int voxel_block = 512);
Eigen::MatrixXd solve_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double alpha);
/// Row chunks held out by bootstrap b; sorted ascending.
std::vector<Eigen::Index> heldout_rows(Eigen::Index n_rows, const CvConfig& cv, int bootstrap);

EncodingModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const CvConfig& cv);
EncodingModel fit_ridge(const temporal::DelayedDesign& X, const Eigen::MatrixXd& Y, const CvConfig& cv);

Eigen::MatrixXd predict(const EncodingModel& model, const Eigen::MatrixXd& X);

struct VoxelScore {
  Eigen::VectorXd r;
  Eigen::VectorXd r_signed_sq;  // |r| * r
  std::vector<bool> constant;
};

/// Column-wise Pearson correlation. Constant columns score 0 and are flagged.
VoxelScore score(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual);

/// Pearson r per column without shape checks or flags; 0 for constant columns.
Eigen::VectorXd column_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

double mean_cortex_score(const VoxelScore& scores, std::span<const Eigen::Index> mask);
double mean_cortex_score(const VoxelScore& scores);

/// Layer with the highest mean score; ties go to the lower layer index.
int best_layer(const std::map<int, double>& per_layer_scores);

}  // namespace vem::ridge
