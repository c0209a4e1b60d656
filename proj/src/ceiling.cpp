#include "vem/ceiling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vem::ceiling {
namespace {

Eigen::VectorXd population_variance(const Eigen::MatrixXd& m) {
  const Eigen::RowVectorXd mean = m.colwise().mean();
  return ((m.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(m.rows())).transpose();
}

}  // namespace

Powers signal_noise_power(const std::vector<Eigen::MatrixXd>& repeats) {
  const auto n = static_cast<double>(repeats.size());
  if (repeats.size() < 2) throw std::invalid_argument("need at least 2 repeats, got " + std::to_string(repeats.size()));
  const auto& first = repeats.front();
  if (first.rows() < 2) throw std::invalid_argument("repeats need at least 2 timepoints");
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(first.rows(), first.cols());
  Eigen::VectorXd var_sum = Eigen::VectorXd::Zero(first.cols());
  for (std::size_t i = 0; i < repeats.size(); ++i) {
    const auto& r = repeats[i];
    if (r.rows() != first.rows() || r.cols() != first.cols())
      throw std::invalid_argument("repeat " + std::to_string(i) + " is " + std::to_string(r.rows()) + "x" +
                                  std::to_string(r.cols()) + ", expected " + std::to_string(first.rows()) + "x" +
                                  std::to_string(first.cols()));
    sum += r;
    var_sum += population_variance(r);
  }
  Powers p;
  p.signal = (population_variance(sum) - var_sum) / (n * n - n);
  p.noise = var_sum / n - p.signal;
  return p;
}

double cc_max(double signal_power, double noise_power, int n_repeats) {
  if (n_repeats < 1) throw std::invalid_argument("number of repeats must be >= 1");
  if (!(signal_power > 0.0)) return 0.0;
  const double ratio = std::max(0.0, noise_power) / signal_power;
  return 1.0 / std::sqrt(1.0 + ratio / n_repeats);
}

CeilingEstimate ceiling_from_powers(const Powers& p, int n_repeats) {
  CeilingEstimate c;
  c.signal_power = p.signal;
  c.noise_power = p.noise;
  c.n_repeats = n_repeats;
  const auto nv = p.signal.size();
  c.cc_max.resize(nv);
  c.cc_max_clamped.resize(nv);
  c.no_signal.resize(static_cast<std::size_t>(nv));
  for (Eigen::Index v = 0; v < nv; ++v) {
    c.cc_max(v) = cc_max(p.signal(v), p.noise(v), n_repeats);
    c.no_signal[static_cast<std::size_t>(v)] = !(p.signal(v) > 0.0);
    c.cc_max_clamped(v) = std::max(c.cc_max(v), kClampFloor);
  }
  return c;
}

CeilingEstimate estimate_ceiling(const std::vector<Eigen::MatrixXd>& repeats) {
  return ceiling_from_powers(signal_noise_power(repeats), static_cast<int>(repeats.size()));
}

Eigen::VectorXd cc_norm(const Eigen::VectorXd& cc_abs, const CeilingEstimate& ceiling) {
  if (cc_abs.size() != ceiling.cc_max_clamped.size())
    throw std::invalid_argument("scores and ceiling cover different voxel counts");
  return cc_abs.array() / ceiling.cc_max_clamped.array();
}

std::vector<bool> display_mask(const CeilingEstimate& ceiling) {
  std::vector<bool> mask(static_cast<std::size_t>(ceiling.cc_max.size()));
  for (Eigen::Index v = 0; v < ceiling.cc_max.size(); ++v)
    mask[static_cast<std::size_t>(v)] = !ceiling.no_signal[static_cast<std::size_t>(v)] &&
                                        ceiling.cc_max(v) > kDisplayThreshold;
  return mask;
}

Eigen::MatrixXd mean_of_repeats(const std::vector<Eigen::MatrixXd>& repeats) {
  if (repeats.empty()) throw std::invalid_argument("no repeats");
  Eigen::MatrixXd sum = repeats.front();
  for (std::size_t i = 1; i < repeats.size(); ++i) {
    if (repeats[i].rows() != sum.rows() || repeats[i].cols() != sum.cols())
      throw std::invalid_argument("repeats differ in shape");
    sum += repeats[i];
  }
  return sum / static_cast<double>(repeats.size());
}

}  // namespace vem::ceiling
