#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace vem::scaling {

struct ScalingFit {
  double slope = 0.0;  // per unit of log_base(size)
  double intercept = 0.0;
  double pearson_r = 0.0;
  bool degenerate = false;  // constant scores: slope 0, r reported as 0
};

/// 100 * (score - baseline) / |baseline|.
std::vector<double> percent_change(std::span<const double> scores, std::size_t baseline_index = 0);

/// Least-squares line of scores against log_base(sizes).
ScalingFit fit_loglinear(std::span<const double> sizes, std::span<const double> scores, double log_base = 10.0);

/// Per-voxel slope of the correlation change (relative to the smallest size)
/// against log_base(size). scores is n_sizes x n_voxels.
Eigen::VectorXd voxelwise_slopes(std::span<const double> sizes, const Eigen::MatrixXd& scores,
                                 double log_base = 2.0);

/// Nested random story subsets: subset i holds the first sizes[i] stories of
/// one seeded permutation, so smaller subsets are contained in larger ones.
std::vector<std::vector<std::size_t>> story_subsample_plan(std::size_t n_stories_total,
                                                           std::span<const std::size_t> sizes, std::uint64_t seed);

}  // namespace vem::scaling
