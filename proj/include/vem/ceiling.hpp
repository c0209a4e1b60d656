#pragma once

#include <Eigen/Dense>

#include <vector>

namespace vem::ceiling {

inline constexpr double kClampFloor = 0.25;
inline constexpr double kDisplayThreshold = 0.35;

/// Per-voxel signal/noise decomposition of repeated presentations and the
/// correlation ceiling it implies.
struct CeilingEstimate {
  Eigen::VectorXd signal_power;
  Eigen::VectorXd noise_power;
  Eigen::VectorXd cc_max;
  Eigen::VectorXd cc_max_clamped;
  std::vector<bool> no_signal;  // SP <= 0, cc_max forced to 0
  int n_repeats = 0;
};

struct Powers {
  Eigen::VectorXd signal;
  Eigen::VectorXd noise;
};

/// SP = (Var(sum_n y_n) - sum_n Var(y_n)) / (N^2 - N), NP = mean_n Var(y_n) - SP,
/// with population variances. SP can come out negative for noise voxels.
Powers signal_noise_power(const std::vector<Eigen::MatrixXd>& repeats);

/// 1 / sqrt(1 + NP / (N * SP)); 0 where SP <= 0.
double cc_max(double signal_power, double noise_power, int n_repeats);

CeilingEstimate estimate_ceiling(const std::vector<Eigen::MatrixXd>& repeats);
CeilingEstimate ceiling_from_powers(const Powers& p, int n_repeats);

/// cc_abs / max(cc_max, 0.25). Values above one are legitimate.
Eigen::VectorXd cc_norm(const Eigen::VectorXd& cc_abs, const CeilingEstimate& ceiling);

/// Voxels worth drawing: unclamped cc_max strictly above 0.35.
std::vector<bool> display_mask(const CeilingEstimate& ceiling);

Eigen::MatrixXd mean_of_repeats(const std::vector<Eigen::MatrixXd>& repeats);

}  // namespace vem::ceiling
