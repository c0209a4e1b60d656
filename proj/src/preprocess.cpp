#include "vem/preprocess.hpp"

#include "vem/error.hpp"
#include "vem/parallel.hpp"

#include <cmath>
#include <string>

namespace vem::preprocess {
namespace {

// Weights of the order-`order` least-squares polynomial evaluated at `at`,
// fitted to samples first..last (inclusive).
Eigen::VectorXd local_fit_weights(std::size_t first, std::size_t last, std::size_t at,
                                  std::size_t scale, int order) {
  const auto m = static_cast<Eigen::Index>(last - first + 1);
  Eigen::MatrixXd vander(m, order + 1);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double u = (static_cast<double>(first + j) - static_cast<double>(at)) /
                     static_cast<double>(std::max<std::size_t>(scale, 1));
    double p = 1.0;
    for (int k = 0; k <= order; ++k, p *= u) vander(j, k) = p;
  }
  const Eigen::MatrixXd gram = vander.transpose() * vander;
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(order + 1);
  e0(0) = 1.0;
  return vander * gram.ldlt().solve(e0);
}

}  // namespace

void TrimPolicy::validate(double tr_seconds) const {
  if (!(tr_seconds > 0.0)) throw std::invalid_argument("tr_seconds must be positive");
  if (train_trim_volumes < 0 || test_extra_volumes < 0 || eval_exclusion_seconds < 0.0)
    throw std::invalid_argument("trim policy values must be non-negative");
  const double vols = eval_exclusion_seconds / tr_seconds;
  if (std::abs(vols - std::round(vols)) > 1e-9)
    throw std::invalid_argument("eval_exclusion_seconds (" + std::to_string(eval_exclusion_seconds) +
                                ") is not a whole number of volumes at TR " + std::to_string(tr_seconds));
}

std::size_t TrimPolicy::eval_exclusion_volumes(double tr_seconds) const {
  validate(tr_seconds);
  return static_cast<std::size_t>(std::llround(eval_exclusion_seconds / tr_seconds));
}

std::size_t savgol_window_samples(double tr_seconds, double window_seconds) {
  if (!(tr_seconds > 0.0)) throw std::invalid_argument("tr_seconds must be positive");
  if (!(window_seconds > 0.0)) throw std::invalid_argument("window_seconds must be positive");
  auto n = static_cast<std::size_t>(std::llround(window_seconds / tr_seconds));
  if (n % 2 == 0) ++n;
  return n;
}

SavgolPlan savgol_plan(std::size_t n_samples, std::size_t window, int order) {
  if (window % 2 == 0) throw std::invalid_argument("Savitzky-Golay window must be odd");
  if (order < 0 || static_cast<std::size_t>(order) >= window)
    throw std::invalid_argument("polynomial order must be below the window length");
  if (n_samples <= window)
    throw std::invalid_argument("series of " + std::to_string(n_samples) +
                                " samples is not longer than the " + std::to_string(window) +
                                "-sample detrending window");
  SavgolPlan plan;
  plan.n = n_samples;
  plan.half = window / 2;
  const std::size_t h = plan.half;
  plan.start.resize(n_samples);
  plan.weights.resize(n_samples);
  const Eigen::VectorXd interior = local_fit_weights(0, 2 * h, h, h, order);
  for (std::size_t t = 0; t < n_samples; ++t) {
    const std::size_t first = t >= h ? t - h : 0;
    const std::size_t last = std::min(n_samples - 1, t + h);
    plan.start[t] = first;
    plan.weights[t] = (t >= h && t + h < n_samples) ? interior : local_fit_weights(first, last, t, h, order);
  }
  return plan;
}

Eigen::MatrixXd savgol_trend(const Eigen::MatrixXd& series, double tr_seconds, double window_seconds,
                             int order, int workers) {
  const std::size_t window = savgol_window_samples(tr_seconds, window_seconds);
  const auto plan = savgol_plan(static_cast<std::size_t>(series.rows()), window, order);
  Eigen::MatrixXd trend(series.rows(), series.cols());
  parallel_for(static_cast<std::size_t>(series.cols()), workers, [&](std::size_t c) {
    const auto col = series.col(static_cast<Eigen::Index>(c));
    for (std::size_t t = 0; t < plan.n; ++t) {
      const auto& w = plan.weights[t];
      trend(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) =
          w.dot(col.segment(static_cast<Eigen::Index>(plan.start[t]), w.size()));
    }
  });
  return trend;
}

Eigen::MatrixXd savgol_detrend(const Eigen::MatrixXd& series, double tr_seconds, double window_seconds,
                               int order, int workers) {
  return series - savgol_trend(series, tr_seconds, window_seconds, order, workers);
}

ZScored zscore_voxels(const Eigen::MatrixXd& series) {
  if (series.rows() == 0) throw std::invalid_argument("cannot z-score an empty series");
  ZScored out{Eigen::MatrixXd(series.rows(), series.cols()), std::vector<bool>(series.cols(), false)};
  const double n = static_cast<double>(series.rows());
  for (Eigen::Index c = 0; c < series.cols(); ++c) {
    const auto col = series.col(c);
    const double mean = col.mean();
    const Eigen::VectorXd centered = col.array() - mean;
    const double var = centered.squaredNorm() / n;
    // Relative floor so that float noise on a constant column still counts as constant.
    const double scale = std::max(1.0, col.cwiseAbs().maxCoeff());
    if (!(var > 1e-24 * scale * scale)) {
      out.series.col(c).setZero();
      out.zero_variance[c] = true;
      continue;
    }
    out.series.col(c) = centered / std::sqrt(var);
  }
  return out;
}

Eigen::MatrixXd trim_for_training(const Eigen::MatrixXd& series, const TrimPolicy& policy, double tr_seconds) {
  policy.validate(tr_seconds);
  const auto k = static_cast<Eigen::Index>(policy.train_trim_volumes);
  if (series.rows() <= 2 * k)
    throw std::invalid_argument("series of " + std::to_string(series.rows()) +
                                " volumes is too short to trim " + std::to_string(k) + " from each end");
  return series.middleRows(k, series.rows() - 2 * k);
}

Eigen::MatrixXd trim_for_test(const Eigen::MatrixXd& series, const TrimPolicy& policy, double tr_seconds) {
  policy.validate(tr_seconds);
  const auto lead = static_cast<Eigen::Index>(policy.test_leading());
  const auto tail = static_cast<Eigen::Index>(policy.trailing());
  if (series.rows() <= lead + tail)
    throw std::invalid_argument("test series of " + std::to_string(series.rows()) +
                                " volumes is too short for " + std::to_string(lead + tail) + " trimmed volumes");
  return series.middleRows(lead, series.rows() - lead - tail);
}

EvalPair trim_for_evaluation(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual, const TrimPolicy& policy,
                             double tr_seconds, std::size_t already_removed) {
  if (pred.rows() != actual.rows() || pred.cols() != actual.cols())
    throw std::invalid_argument("prediction is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                                " but responses are " + std::to_string(actual.rows()) + "x" +
                                std::to_string(actual.cols()));
  const std::size_t exclusion = policy.eval_exclusion_volumes(tr_seconds);
  std::size_t remove = exclusion;
  if (policy.exclusion_from_onset) remove = exclusion > already_removed ? exclusion - already_removed : 0;
  const auto k = static_cast<Eigen::Index>(remove);
  if (k > 0 && pred.rows() <= k)
    throw std::invalid_argument("series of " + std::to_string(pred.rows()) +
                                " volumes is shorter than the evaluation exclusion of " + std::to_string(k));
  return {pred.bottomRows(pred.rows() - k), actual.bottomRows(actual.rows() - k), remove};
}

}  // namespace vem::preprocess
