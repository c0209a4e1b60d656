#include "vem/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace vem::scaling {
namespace {

std::vector<double> log_sizes(std::span<const double> sizes, double log_base) {
  if (!(log_base > 0.0) || log_base == 1.0) throw std::invalid_argument("log base must be positive and not 1");
  if (sizes.size() < 2) throw std::invalid_argument("need at least 2 sizes");
  std::vector<double> x(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0)) throw std::invalid_argument("sizes must be positive");
    if (i > 0 && sizes[i] == sizes[i - 1]) throw std::invalid_argument("duplicate size " + std::to_string(sizes[i]));
    if (i > 0 && sizes[i] < sizes[i - 1]) throw std::invalid_argument("sizes must be strictly increasing");
    if (log_base == 10.0)
      x[i] = std::log10(sizes[i]);
    else if (log_base == 2.0)
      x[i] = std::log2(sizes[i]);
    else
      x[i] = std::log(sizes[i]) / std::log(log_base);
  }
  return x;
}

}  // namespace

std::vector<double> percent_change(std::span<const double> scores, std::size_t baseline_index) {
  if (baseline_index >= scores.size()) throw std::out_of_range("baseline index out of range");
  const double base = scores[baseline_index];
  if (base == 0.0) throw std::invalid_argument("baseline score is zero");
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = 100.0 * (scores[i] - base) / std::abs(base);
  return out;
}

ScalingFit fit_loglinear(std::span<const double> sizes, std::span<const double> scores, double log_base) {
  if (sizes.size() != scores.size()) throw std::invalid_argument("sizes and scores differ in length");
  const auto x = log_sizes(sizes, log_base);
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (scores[i] - my) * (scores[i] - my);
    sxy += (x[i] - mx) * (scores[i] - my);
  }
  ScalingFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy <= 1e-300 || std::all_of(scores.begin(), scores.end(), [&](double s) { return s == scores[0]; })) {
    fit.slope = 0.0;
    fit.intercept = my;
    fit.degenerate = true;
    return fit;
  }
  fit.pearson_r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return fit;
}

Eigen::VectorXd voxelwise_slopes(std::span<const double> sizes, const Eigen::MatrixXd& scores, double log_base) {
  if (static_cast<Eigen::Index>(sizes.size()) != scores.rows())
    throw std::invalid_argument("need one score row per size");
  const auto x = log_sizes(sizes, log_base);
  const Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd xc = xv.array() - xv.mean();
  const double sxx = xc.squaredNorm();
  const Eigen::MatrixXd delta = scores.rowwise() - scores.row(0);
  const Eigen::MatrixXd centered = delta.rowwise() - delta.colwise().mean();
  return (xc.transpose() * centered).transpose() / sxx;
}

std::vector<std::vector<std::size_t>> story_subsample_plan(std::size_t n_stories_total,
                                                           std::span<const std::size_t> sizes, std::uint64_t seed) {
  for (auto s : sizes) {
    if (s == 0) throw std::invalid_argument("subset sizes must be positive");
    if (s > n_stories_total)
      throw std::invalid_argument("requested " + std::to_string(s) + " stories but only " +
                                  std::to_string(n_stories_total) + " exist");
  }
  std::vector<std::size_t> order(n_stories_total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t i = n_stories_total; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  std::vector<std::vector<std::size_t>> plan;
  for (auto s : sizes) {
    std::vector<std::size_t> subset(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s));
    std::sort(subset.begin(), subset.end());
    plan.push_back(std::move(subset));
  }
  return plan;
}

}  // namespace vem::scaling
