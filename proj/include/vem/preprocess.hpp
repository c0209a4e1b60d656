#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace vem::preprocess {

/// Volumes removed around each scan. Defaults remove 20 s at both ends of a
/// training story, a further 80 s from the start of a test story, and score
/// test predictions from 100 s after onset.
struct TrimPolicy {
  int train_trim_volumes = 10;
  int test_extra_volumes = 40;
  double eval_exclusion_seconds = 100.0;
  // When true the evaluation exclusion is measured from story onset and
  // volumes already trimmed upstream count towards it. When false it is
  // applied on top of whatever was trimmed before.
  bool exclusion_from_onset = true;

  void validate(double tr_seconds) const;
  std::size_t eval_exclusion_volumes(double tr_seconds) const;
  std::size_t test_leading() const { return static_cast<std::size_t>(train_trim_volumes + test_extra_volumes); }
  std::size_t trailing() const { return static_cast<std::size_t>(train_trim_volumes); }
};

/// Number of samples in the Savitzky-Golay window: window_seconds / tr,
/// rounded, and bumped to the next odd count.
std::size_t savgol_window_samples(double tr_seconds, double window_seconds);

/// Per-sample smoothing weights: trend[t] = sum_j weights(t)[j] * y[start(t) + j].
/// Exposed for testing; interior samples share one symmetric kernel, edge
/// samples use truncated asymmetric windows.
struct SavgolPlan {
  std::size_t n = 0;
  std::size_t half = 0;
  std::vector<std::size_t> start;
  std::vector<Eigen::VectorXd> weights;
};
SavgolPlan savgol_plan(std::size_t n_samples, std::size_t window, int order);

Eigen::MatrixXd savgol_trend(const Eigen::MatrixXd& series, double tr_seconds,
                             double window_seconds = 120.0, int order = 2, int workers = 1);

/// Subtracts a low-order Savitzky-Golay fit from every voxel (column).
Eigen::MatrixXd savgol_detrend(const Eigen::MatrixXd& series, double tr_seconds,
                               double window_seconds = 120.0, int order = 2, int workers = 1);

struct ZScored {
  Eigen::MatrixXd series;
  std::vector<bool> zero_variance;
};

/// Mean 0, population variance 1 per column. Constant columns become zeros
/// and are flagged.
ZScored zscore_voxels(const Eigen::MatrixXd& series);

Eigen::MatrixXd trim_for_training(const Eigen::MatrixXd& series, const TrimPolicy& policy,
                                  double tr_seconds);

/// Removes test_extra + train_trim volumes from the start and train_trim
/// volumes from the end.
Eigen::MatrixXd trim_for_test(const Eigen::MatrixXd& series, const TrimPolicy& policy,
                              double tr_seconds);

struct EvalPair {
  Eigen::MatrixXd pred;
  Eigen::MatrixXd actual;
  std::size_t removed = 0;
};

/// Drops the long-context artifact window from a test story's predicted and
/// measured responses. `already_removed` is the number of volumes trimmed
/// from the start of this story before the rows handed in here.
EvalPair trim_for_evaluation(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual,
                             const TrimPolicy& policy, double tr_seconds,
                             std::size_t already_removed = 0);

}  // namespace vem::preprocess
