#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace vem::temporal {

/// Stimulus features sampled at irregular item times (words, audio windows).
struct FeatureTimeSeries {
  std::vector<double> timestamps;  // seconds, strictly increasing
  Eigen::MatrixXd values;          // items x features

  void validate() const;
};

struct LanczosParams {
  int lobes = 3;
  // Zero selects the Nyquist rate of the output grid, 1 / (2 * TR).
  double cutoff_hz = 0.0;
};

/// Windowed-sinc kernel sinc(x) * sinc(x / lobes) with x = 2 * cutoff * dt,
/// zero for |x| >= lobes.
double lanczos_kernel(double dt, double cutoff_hz, int lobes);

/// Output row t is sum_items kernel(t_item - t) * value_item. Weights are not
/// normalised, so the DC gain equals the item density per output sample.
Eigen::MatrixXd lanczos_resample(const FeatureTimeSeries& fts, std::span<const double> tr_times,
                                 const LanczosParams& params = {});

/// TR onset times k * tr for k in [0, n_trs).
std::vector<double> tr_onsets(std::size_t n_trs, double tr_seconds);

struct DelayedDesign {
  Eigen::MatrixXd matrix;  // n_trs x (n_features * n_delays)
  std::vector<int> delays_trs;

  Eigen::Index n_features() const {
    return delays_trs.empty() ? 0 : matrix.cols() / static_cast<Eigen::Index>(delays_trs.size());
  }
};

inline const std::vector<int> kDefaultDelays{1, 2, 3, 4};

/// Finite-impulse-response expansion: block d is the design shifted down by
/// delays_trs[d] rows with zeros above.
DelayedDesign make_delayed(const Eigen::MatrixXd& design, const std::vector<int>& delays_trs = kDefaultDelays);

}  // namespace vem::temporal
