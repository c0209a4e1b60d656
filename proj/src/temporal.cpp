#include "vem/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace vem::temporal {

void FeatureTimeSeries::validate() const {
  if (timestamps.empty() || values.rows() == 0) throw std::invalid_argument("empty feature series");
  if (static_cast<Eigen::Index>(timestamps.size()) != values.rows())
    throw std::invalid_argument(std::to_string(timestamps.size()) + " timestamps for " +
                                std::to_string(values.rows()) + " feature items");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1]))
      throw std::invalid_argument("feature timestamps not strictly increasing at item " + std::to_string(i));
  if (!values.allFinite()) throw std::invalid_argument("non-finite feature values");
}

namespace {

// sin(pi x), exactly zero at integers.
double sin_pi(double x) {
  double r = x - 2.0 * std::round(0.5 * x);  // [-1, 1]
  if (r > 0.5) r = 1.0 - r;
  else if (r < -0.5) r = -1.0 - r;
  return std::sin(std::numbers::pi * r);
}

}  // namespace

double lanczos_kernel(double dt, double cutoff_hz, int lobes) {
  const double x = 2.0 * cutoff_hz * dt;
  if (x == 0.0) return 1.0;
  if (std::abs(x) >= lobes) return 0.0;
  const double px = std::numbers::pi * x;
  return lobes * sin_pi(x) * sin_pi(x / lobes) / (px * px);
}

std::vector<double> tr_onsets(std::size_t n_trs, double tr_seconds) {
  std::vector<double> t(n_trs);
  for (std::size_t k = 0; k < n_trs; ++k) t[k] = static_cast<double>(k) * tr_seconds;
  return t;
}

Eigen::MatrixXd lanczos_resample(const FeatureTimeSeries& fts, std::span<const double> tr_times,
                                 const LanczosParams& params) {
  fts.validate();
  if (tr_times.empty()) throw std::invalid_argument("no output times");
  for (std::size_t i = 1; i < tr_times.size(); ++i)
    if (!(tr_times[i] > tr_times[i - 1]))
      throw std::invalid_argument("output times not strictly increasing at " + std::to_string(i));
  if (params.lobes < 1) throw std::invalid_argument("lobes must be >= 1");

  double cutoff = params.cutoff_hz;
  if (cutoff <= 0.0) {
    if (tr_times.size() < 2) throw std::invalid_argument("cutoff must be given for a single output time");
    const double tr = (tr_times.back() - tr_times.front()) / static_cast<double>(tr_times.size() - 1);
    cutoff = 1.0 / (2.0 * tr);
  }
  const double support = params.lobes / (2.0 * cutoff);

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tr_times.size()), fts.values.cols());
  const auto& ts = fts.timestamps;
  for (std::size_t r = 0; r < tr_times.size(); ++r) {
    const double t = tr_times[r];
    auto lo = std::upper_bound(ts.begin(), ts.end(), t - support);
    auto hi = std::lower_bound(ts.begin(), ts.end(), t + support);
    for (auto it = lo; it != hi; ++it) {
      const double w = lanczos_kernel(*it - t, cutoff, params.lobes);
      if (w != 0.0) out.row(static_cast<Eigen::Index>(r)) += w * fts.values.row(it - ts.begin());
    }
  }
  return out;
}

DelayedDesign make_delayed(const Eigen::MatrixXd& design, const std::vector<int>& delays_trs) {
  if (delays_trs.empty()) throw std::invalid_argument("at least one delay is required");
  const Eigen::Index n = design.rows();
  const Eigen::Index f = design.cols();
  for (int d : delays_trs) {
    if (d < 0) throw std::invalid_argument("delays must be non-negative");
    if (d >= n)
      throw std::invalid_argument("delay of " + std::to_string(d) + " TRs is not shorter than the " +
                                  std::to_string(n) + "-TR design");
  }
  DelayedDesign out{Eigen::MatrixXd::Zero(n, f * static_cast<Eigen::Index>(delays_trs.size())), delays_trs};
  for (std::size_t b = 0; b < delays_trs.size(); ++b) {
    const Eigen::Index d = delays_trs[b];
    out.matrix.block(d, static_cast<Eigen::Index>(b) * f, n - d, f) = design.topRows(n - d);
  }
  return out;
}

}  // namespace vem::temporal
