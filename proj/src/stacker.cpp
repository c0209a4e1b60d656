#include "vem/stacker.hpp"

#include "vem/error.hpp"
#include "vem/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace vem::stacker {
namespace {

void check_simplex(std::span<const double> alpha) {
  if (alpha.empty()) throw std::invalid_argument("empty attribution vector");
  double sum = 0.0;
  for (double a : alpha) {
    if (!(a >= -1e-10)) throw std::invalid_argument("attribution weights must be non-negative");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-8) throw std::invalid_argument("attribution weights must sum to 1");
}

double corr_from(double n, double sx, double sy, double sxx, double syy, double sxy) {
  const double cxx = sxx - sx * sx / n;
  const double cyy = syy - sy * sy / n;
  if (cxx <= 0.0 || cyy <= 0.0) return 0.0;
  return (sxy - sx * sy / n) / std::sqrt(cxx * cyy);
}

}  // namespace

void FoldSpec::validate(Eigen::Index n_rows) const {
  if (n_folds < 2) throw std::invalid_argument("need at least two folds");
  if (static_cast<Eigen::Index>(fold_of_row.size()) != n_rows)
    throw std::invalid_argument("fold spec covers " + std::to_string(fold_of_row.size()) + " rows, data has " +
                                std::to_string(n_rows) + ": not a partition");
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_folds), 0);
  for (std::size_t t = 0; t < fold_of_row.size(); ++t) {
    const int f = fold_of_row[t];
    if (f < 0 || f >= n_folds)
      throw std::invalid_argument("row " + std::to_string(t) + " is assigned to no fold: not a partition");
    ++counts[static_cast<std::size_t>(f)];
  }
  for (int f = 0; f < n_folds; ++f)
    if (counts[static_cast<std::size_t>(f)] == 0)
      throw std::invalid_argument("fold " + std::to_string(f) + " is empty");
}

std::vector<Eigen::Index> FoldSpec::rows_in(int fold) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t t = 0; t < fold_of_row.size(); ++t)
    if (fold_of_row[t] == fold) rows.push_back(static_cast<Eigen::Index>(t));
  return rows;
}

std::vector<Eigen::Index> FoldSpec::rows_not_in(int fold) const {
  std::vector<Eigen::Index> rows;
  for (std::size_t t = 0; t < fold_of_row.size(); ++t)
    if (fold_of_row[t] != fold) rows.push_back(static_cast<Eigen::Index>(t));
  return rows;
}

FoldSpec make_folds(std::span<const Eigen::Index> story_lengths, int n_folds, int chunk_trs) {
  if (n_folds < 2) throw std::invalid_argument("need at least two folds");
  if (chunk_trs < 1) throw std::invalid_argument("chunk length must be positive");
  const Eigen::Index total = std::accumulate(story_lengths.begin(), story_lengths.end(), Eigen::Index{0});
  FoldSpec spec;
  spec.n_folds = n_folds;
  spec.fold_of_row.reserve(static_cast<std::size_t>(total));

  const auto n_stories = static_cast<int>(story_lengths.size());
  if (n_stories >= n_folds) {
    int f = 0;
    Eigen::Index acc = 0;
    for (int i = 0; i < n_stories; ++i) {
      spec.fold_of_row.insert(spec.fold_of_row.end(), static_cast<std::size_t>(story_lengths[i]), f);
      acc += story_lengths[i];
      const int stories_left = n_stories - i - 1;
      const int folds_left = n_folds - f - 1;
      if (folds_left > 0 && (acc * n_folds >= (f + 1) * total || stories_left == folds_left)) ++f;
    }
    return spec;
  }

  const Eigen::Index n_chunks = (total + chunk_trs - 1) / chunk_trs;
  if (n_chunks < n_folds)
    throw std::invalid_argument(std::to_string(total) + " TRs make fewer than " + std::to_string(n_folds) +
                                " chunks of " + std::to_string(chunk_trs));
  for (Eigen::Index t = 0; t < total; ++t) {
    const Eigen::Index c = t / chunk_trs;
    spec.fold_of_row.push_back(static_cast<int>(c * n_folds / n_chunks));
  }
  return spec;
}

HeldoutPredictions heldout_predictions(std::span<const Eigen::MatrixXd> spaces, const Eigen::MatrixXd& Y,
                                       const FoldSpec& folds, const ridge::CvConfig& cv) {
  if (spaces.empty()) throw std::invalid_argument("no feature spaces to stack");
  for (const auto& X : spaces)
    if (X.rows() != Y.rows()) throw std::invalid_argument("feature space and responses disagree on TR count");
  folds.validate(Y.rows());

  HeldoutPredictions out;
  out.folds = folds;
  out.per_space.assign(spaces.size(), Eigen::MatrixXd::Zero(Y.rows(), Y.cols()));
  for (int f = 0; f < folds.n_folds; ++f) {
    const auto test = folds.rows_in(f);
    const auto train = folds.rows_not_in(f);
    const Eigen::MatrixXd y_train = Y(train, Eigen::all);
    for (std::size_t s = 0; s < spaces.size(); ++s) {
      const Eigen::MatrixXd x_train = spaces[s](train, Eigen::all);
      const auto model = ridge::fit_ridge(x_train, y_train, cv);
      out.per_space[s](test, Eigen::all) =
          ridge::predict(model, spaces[s](test, Eigen::all));
    }
  }
  return out;
}

ResidualCovariance residual_covariance(const HeldoutPredictions& preds, const Eigen::MatrixXd& Y, int workers) {
  const auto k = static_cast<Eigen::Index>(preds.per_space.size());
  if (k == 0) throw std::invalid_argument("no held-out predictions");
  for (const auto& p : preds.per_space)
    if (p.rows() != Y.rows() || p.cols() != Y.cols())
      throw std::invalid_argument("held-out predictions and responses differ in shape");

  ResidualCovariance out;
  out.per_voxel.resize(static_cast<std::size_t>(Y.cols()));
  parallel_for(static_cast<std::size_t>(Y.cols()), workers, [&](std::size_t v) {
    const auto c = static_cast<Eigen::Index>(v);
    Eigen::MatrixXd resid(Y.rows(), k);
    for (Eigen::Index s = 0; s < k; ++s) resid.col(s) = Y.col(c) - preds.per_space[static_cast<std::size_t>(s)].col(c);
    if (!resid.allFinite()) throw ComputeError("NaN residuals for voxel " + std::to_string(v));
    Eigen::MatrixXd R(k, k);
    for (Eigen::Index p = 0; p < k; ++p)
      for (Eigen::Index q = p; q < k; ++q) R(p, q) = R(q, p) = resid.col(p).dot(resid.col(q));
    out.per_voxel[v] = std::move(R);
  });
  return out;
}

Eigen::MatrixXd solve_stack_weights(const ResidualCovariance& R, int workers) {
  if (R.per_voxel.empty()) return {};
  const Eigen::Index k = R.per_voxel.front().rows();
  Eigen::MatrixXd alpha(static_cast<Eigen::Index>(R.per_voxel.size()), k);
  parallel_for(R.per_voxel.size(), workers, [&](std::size_t v) {
    alpha.row(static_cast<Eigen::Index>(v)) = solve_simplex_qp(R.per_voxel[v]).alpha.transpose();
  });
  return alpha;
}

double center_of_mass(std::span<const double> alpha) {
  check_simplex(alpha);
  double c = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) c += static_cast<double>(i + 1) * alpha[i];
  return c;
}

double subset_center_of_mass(std::span<const double> alpha, std::span<const Eigen::Index> subset) {
  check_simplex(alpha);
  if (subset.empty()) throw std::invalid_argument("empty layer subset");
  double mass = 0.0;
  for (auto j : subset) {
    if (j < 0 || static_cast<std::size_t>(j) >= alpha.size()) throw std::out_of_range("layer index out of range");
    mass += std::max(0.0, alpha[static_cast<std::size_t>(j)]);
  }
  if (mass <= 0.0) return 0.0;
  double c = 0.0;
  for (std::size_t i = 0; i < subset.size(); ++i)
    c += static_cast<double>(i + 1) * std::max(0.0, alpha[static_cast<std::size_t>(subset[i])]) / mass;
  return c;
}

Eigen::MatrixXd stacked_predict(std::span<const Eigen::MatrixXd> per_space_pred, const Eigen::MatrixXd& alpha) {
  const auto k = static_cast<Eigen::Index>(per_space_pred.size());
  if (k == 0 || alpha.cols() != k) throw std::invalid_argument("need one attribution column per feature space");
  const auto& first = per_space_pred.front();
  if (alpha.rows() != first.cols()) throw std::invalid_argument("need one attribution row per voxel");
  for (const auto& p : per_space_pred)
    if (p.rows() != first.rows() || p.cols() != first.cols())
      throw std::invalid_argument("per-space predictions differ in shape");
  for (Eigen::Index v = 0; v < alpha.rows(); ++v) {
    const Eigen::VectorXd row = alpha.row(v).transpose();
    check_simplex({row.data(), static_cast<std::size_t>(row.size())});
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(first.rows(), first.cols());
  for (Eigen::Index v = 0; v < alpha.rows(); ++v) {
    bool started = false;
    for (Eigen::Index s = 0; s < k; ++s) {
      const double a = alpha(v, s);
      if (a == 0.0) continue;
      const auto src = per_space_pred[static_cast<std::size_t>(s)].col(v);
      if (!started) {
        out.col(v) = a == 1.0 ? Eigen::VectorXd(src) : Eigen::VectorXd(a * src);
        started = true;
      } else {
        out.col(v) += a * src;
      }
    }
  }
  return out;
}

Eigen::MatrixXd stacked_predict(std::span<const ridge::EncodingModel> models, const Eigen::MatrixXd& alpha,
                                std::span<const Eigen::MatrixXd> designs) {
  if (models.size() != designs.size()) throw std::invalid_argument("one design per model is required");
  std::vector<Eigen::MatrixXd> preds;
  preds.reserve(models.size());
  for (std::size_t s = 0; s < models.size(); ++s) preds.push_back(ridge::predict(models[s], designs[s]));
  return stacked_predict(preds, alpha);
}

GateResult gate_stacked(const Eigen::MatrixXd& stacked_pred, const Eigen::MatrixXd& baseline_pred,
                        const Eigen::MatrixXd& validation_y, const GateConfig& cfg,
                        std::span<const std::string> fit_stories, std::span<const std::string> validation_stories) {
  const std::set<std::string> fitted(fit_stories.begin(), fit_stories.end());
  for (const auto& s : validation_stories)
    if (fitted.contains(s))
      throw ValidationError("validation story '" + s + "' was also used to fit the stacked model");
  if (stacked_pred.rows() != validation_y.rows() || stacked_pred.cols() != validation_y.cols() ||
      baseline_pred.rows() != validation_y.rows() || baseline_pred.cols() != validation_y.cols())
    throw std::invalid_argument("validation predictions and responses differ in shape");
  if (validation_y.rows() < 3) throw std::invalid_argument("validation segment needs at least 3 TRs");
  if (cfg.block_trs < 1 || cfg.n_resamples < 1) throw std::invalid_argument("invalid bootstrap configuration");

  const Eigen::Index T = validation_y.rows();
  const Eigen::Index nv = validation_y.cols();
  const Eigen::Index L = cfg.block_trs;
  const Eigen::Index n_blocks = (T + L - 1) / L;

  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x9a7eu};
  std::mt19937_64 rng(seq);
  std::vector<Eigen::Index> draws(static_cast<std::size_t>(cfg.n_resamples * n_blocks));
  for (auto& d : draws) d = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n_blocks));

  GateResult out;
  out.gate.assign(static_cast<std::size_t>(nv), Gate::baseline);
  out.delta_r = Eigen::VectorXd::Zero(nv);
  out.support = Eigen::VectorXd::Zero(nv);

  parallel_for(static_cast<std::size_t>(nv), cfg.workers, [&](std::size_t vi) {
    const auto v = static_cast<Eigen::Index>(vi);
    std::vector<std::array<double, 9>> blocks(static_cast<std::size_t>(n_blocks));
    for (auto& b : blocks) b.fill(0.0);
    for (Eigen::Index t = 0; t < T; ++t) {
      const double s = stacked_pred(t, v), b = baseline_pred(t, v), y = validation_y(t, v);
      auto& a = blocks[static_cast<std::size_t>(t / L)];
      a[0] += 1.0;
      a[1] += s;
      a[2] += b;
      a[3] += y;
      a[4] += s * s;
      a[5] += b * b;
      a[6] += y * y;
      a[7] += s * y;
      a[8] += b * y;
    }
    auto delta = [](const std::array<double, 9>& a) {
      return corr_from(a[0], a[1], a[3], a[4], a[6], a[7]) - corr_from(a[0], a[2], a[3], a[5], a[6], a[8]);
    };
    std::array<double, 9> total{};
    for (const auto& b : blocks)
      for (int i = 0; i < 9; ++i) total[static_cast<std::size_t>(i)] += b[static_cast<std::size_t>(i)];
    const double observed = delta(total);
    out.delta_r(v) = observed;

    int positive = 0;
    for (int r = 0; r < cfg.n_resamples; ++r) {
      std::array<double, 9> acc{};
      for (Eigen::Index j = 0; j < n_blocks; ++j) {
        const auto& b = blocks[static_cast<std::size_t>(draws[static_cast<std::size_t>(r * n_blocks + j)])];
        for (int i = 0; i < 9; ++i) acc[static_cast<std::size_t>(i)] += b[static_cast<std::size_t>(i)];
      }
      if (delta(acc) > 0.0) ++positive;
    }
    out.support(v) = static_cast<double>(positive) / cfg.n_resamples;
    if (observed > 0.0 && out.support(v) >= cfg.confidence) out.gate[vi] = Gate::stacked;
  });
  return out;
}

StackComposition default_stack_composition(int n_audio_layers, int semantic_layer) {
  if (n_audio_layers < 2) throw std::invalid_argument("audio model needs at least two non-embedding layers");
  StackComposition c;
  for (int l = 2; l <= n_audio_layers; l += 2) c.audio_layers.push_back(l);
  c.semantic_layer = semantic_layer;
  return c;
}

Eigen::MatrixXd gated_predict(const Eigen::MatrixXd& stacked_pred, const Eigen::MatrixXd& baseline_pred,
                              const std::vector<Gate>& gate) {
  if (stacked_pred.rows() != baseline_pred.rows() || stacked_pred.cols() != baseline_pred.cols() ||
      static_cast<Eigen::Index>(gate.size()) != stacked_pred.cols())
    throw std::invalid_argument("gate and predictions differ in shape");
  Eigen::MatrixXd out = baseline_pred;
  for (std::size_t v = 0; v < gate.size(); ++v)
    if (gate[v] == Gate::stacked) out.col(static_cast<Eigen::Index>(v)) = stacked_pred.col(static_cast<Eigen::Index>(v));
  return out;
}

}  // namespace vem::stacker
