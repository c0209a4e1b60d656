#include "vem/ridge.hpp"

#include "vem/error.hpp"
#include "vem/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace vem::ridge {
namespace {

Eigen::Index block_count(Eigen::Index n, Eigen::Index block) { return (n + block - 1) / block; }

// Kernel-form factors 1 / (s^2 + alpha) for each requested alpha, one column each.
Eigen::MatrixXd filter_factors(const Eigen::VectorXd& s, std::span<const double> alphas) {
  Eigen::MatrixXd d(s.size(), static_cast<Eigen::Index>(alphas.size()));
  const Eigen::ArrayXd s2 = s.array().square();
  for (std::size_t j = 0; j < alphas.size(); ++j) d.col(static_cast<Eigen::Index>(j)) = (s2 + alphas[j]).inverse();
  return d;
}

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw ComputeError(std::string("NaN or infinite values in ") + what);
}

}  // namespace

std::vector<double> logspace(double lo_exp10, double hi_exp10, int n) {
  if (n < 1) throw std::invalid_argument("logspace needs at least one point");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double e = n == 1 ? lo_exp10 : lo_exp10 + (hi_exp10 - lo_exp10) * i / (n - 1);
    out[static_cast<std::size_t>(i)] = std::pow(10.0, e);
  }
  return out;
}

void CvConfig::validate(Eigen::Index n_rows) const {
  if (alpha_grid.empty()) throw std::invalid_argument("alpha grid is empty");
  for (double a : alpha_grid)
    if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("alpha grid values must be finite and >= 0");
  if (n_bootstraps < 1) throw std::invalid_argument("need at least one bootstrap");
  if (chunk_length_trs < 1) throw std::invalid_argument("chunk length must be positive");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw std::invalid_argument("holdout fraction must lie in (0, 1)");
  if (voxel_block < 1) throw std::invalid_argument("voxel block must be positive");
  if (block_count(n_rows, chunk_length_trs) < 2)
    throw std::invalid_argument(std::to_string(n_rows) + " timepoints make fewer than two " +
                                std::to_string(chunk_length_trs) + "-TR chunks");
}

Spectral Spectral::of(const Eigen::MatrixXd& X) {
  Spectral out;
  out.wide = X.rows() <= X.cols();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, out.wide ? Eigen::ComputeThinU : Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return out;
  const double tol =
      std::numeric_limits<double>::epsilon() * s(0) * static_cast<double>(std::max(X.rows(), X.cols()));
  Eigen::Index r = 0;
  while (r < s.size() && s(r) > tol) ++r;
  out.basis = (out.wide ? svd.matrixU() : svd.matrixV()).leftCols(r);
  out.s = s.head(r);
  return out;
}

Eigen::MatrixXd Spectral::coordinates(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
  if (wide) return basis.transpose() * Y;
  const Eigen::MatrixXd xty = X.transpose() * Y;
  return basis.transpose() * xty;
}

Eigen::MatrixXd Spectral::weight_map(const Eigen::MatrixXd& X) const {
  return wide ? Eigen::MatrixXd(X.transpose() * basis) : basis;
}

Eigen::MatrixXd solve_ridge(const Eigen::MatrixXd& X, const Spectral& svd, const Eigen::MatrixXd& Y,
                            std::span<const double> alphas, int workers, int voxel_block) {
  if (static_cast<Eigen::Index>(alphas.size()) != Y.cols())
    throw std::invalid_argument("one alpha per voxel is required");
  if (X.rows() != Y.rows()) throw std::invalid_argument("design and responses disagree on timepoints");
  if (svd.rank() == 0) return Eigen::MatrixXd::Zero(X.cols(), Y.cols());
  const Eigen::MatrixXd map = svd.weight_map(X);
  Eigen::MatrixXd W(X.cols(), Y.cols());
  const Eigen::Index block = voxel_block;
  parallel_for(static_cast<std::size_t>(block_count(Y.cols(), block)), workers, [&](std::size_t task) {
    const Eigen::Index v0 = static_cast<Eigen::Index>(task) * block;
    const Eigen::Index w = std::min(block, Y.cols() - v0);
    const Eigen::MatrixXd d = filter_factors(svd.s, alphas.subspan(static_cast<std::size_t>(v0), static_cast<std::size_t>(w)));
    const Eigen::MatrixXd coords = svd.coordinates(X, Y.middleCols(v0, w));
    W.middleCols(v0, w).noalias() = map * (coords.array() * d.array()).matrix();
  });
  return W;
}

Eigen::MatrixXd solve_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double alpha) {
  const auto svd = Spectral::of(X);
  const std::vector<double> alphas(static_cast<std::size_t>(Y.cols()), alpha);
  return solve_ridge(X, svd, Y, alphas);
}

std::vector<Eigen::Index> heldout_rows(Eigen::Index n_rows, const CvConfig& cv, int bootstrap) {
  const Eigen::Index len = cv.chunk_length_trs;
  const Eigen::Index n_chunks = block_count(n_rows, len);
  const auto n_hold = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::llround(cv.holdout_fraction * static_cast<double>(n_chunks))), 1, n_chunks - 1);

  std::seed_seq seq{static_cast<std::uint32_t>(cv.seed), static_cast<std::uint32_t>(cv.seed >> 32),
                    static_cast<std::uint32_t>(bootstrap)};
  std::mt19937_64 rng(seq);
  std::vector<Eigen::Index> chunks(static_cast<std::size_t>(n_chunks));
  std::iota(chunks.begin(), chunks.end(), Eigen::Index{0});
  // Partial Fisher-Yates with explicit index arithmetic so the draw does not
  // depend on the standard library's distribution implementations.
  for (Eigen::Index i = 0; i < n_hold; ++i) {
    const auto span = static_cast<std::uint64_t>(n_chunks - i);
    const auto j = i + static_cast<Eigen::Index>(rng() % span);
    std::swap(chunks[static_cast<std::size_t>(i)], chunks[static_cast<std::size_t>(j)]);
  }
  chunks.resize(static_cast<std::size_t>(n_hold));
  std::sort(chunks.begin(), chunks.end());

  std::vector<Eigen::Index> rows;
  for (Eigen::Index c : chunks)
    for (Eigen::Index t = c * len; t < std::min(n_rows, (c + 1) * len); ++t) rows.push_back(t);
  return rows;
}

Eigen::VectorXd column_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::VectorXd r(a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const Eigen::VectorXd x = a.col(c).array() - a.col(c).mean();
    const Eigen::VectorXd y = b.col(c).array() - b.col(c).mean();
    const double sxx = x.squaredNorm();
    const double syy = y.squaredNorm();
    if (sxx <= 0.0 || syy <= 0.0) {
      r(c) = 0.0;
      continue;
    }
    r(c) = std::clamp(x.dot(y) / std::sqrt(sxx * syy), -1.0, 1.0);
  }
  return r;
}

EncodingModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const CvConfig& cv) {
  if (X.rows() != Y.rows())
    throw std::invalid_argument("design has " + std::to_string(X.rows()) + " rows but responses have " +
                                std::to_string(Y.rows()));
  require_finite(X, "design");
  require_finite(Y, "responses");
  if (X.size() == 0 || X.cwiseAbs().maxCoeff() == 0.0) throw ComputeError("degenerate all-zero design");
  cv.validate(X.rows());

  std::vector<double> grid = cv.alpha_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const auto n_alpha = static_cast<Eigen::Index>(grid.size());
  const Eigen::Index nv = Y.cols();
  const Eigen::Index block = cv.voxel_block;
  const auto n_blocks = static_cast<std::size_t>(block_count(nv, block));
  const int workers = std::max(1, cv.workers);

  std::vector<Eigen::MatrixXd> corr(static_cast<std::size_t>(cv.n_bootstraps));

  struct Split {
    std::vector<Eigen::Index> train, test;
    Eigen::MatrixXd x_train;
    Spectral svd;
    Eigen::MatrixXd test_proj;  // X_test times the weight map
    Eigen::MatrixXd d;          // filter factors, rank x n_alpha
  };

  // Decompositions are held for at most `workers` bootstraps at a time.
  for (int b0 = 0; b0 < cv.n_bootstraps; b0 += workers) {
    const int batch = std::min(workers, cv.n_bootstraps - b0);
    std::vector<Split> splits(static_cast<std::size_t>(batch));
    parallel_for(static_cast<std::size_t>(batch), workers, [&](std::size_t i) {
      Split& sp = splits[i];
      sp.test = heldout_rows(X.rows(), cv, b0 + static_cast<int>(i));
      std::vector<bool> held(static_cast<std::size_t>(X.rows()), false);
      for (auto t : sp.test) held[static_cast<std::size_t>(t)] = true;
      for (Eigen::Index t = 0; t < X.rows(); ++t)
        if (!held[static_cast<std::size_t>(t)]) sp.train.push_back(t);
      sp.x_train = X(sp.train, Eigen::all);
      sp.svd = Spectral::of(sp.x_train);
      sp.test_proj = X(sp.test, Eigen::all) * sp.svd.weight_map(sp.x_train);
      sp.d = filter_factors(sp.svd.s, grid);
      corr[static_cast<std::size_t>(b0) + i] = Eigen::MatrixXd::Zero(n_alpha, nv);
    });

    parallel_for(static_cast<std::size_t>(batch) * n_blocks, workers, [&](std::size_t task) {
      const std::size_t i = task / n_blocks;
      const Eigen::Index v0 = static_cast<Eigen::Index>(task % n_blocks) * block;
      const Eigen::Index w = std::min(block, nv - v0);
      const Split& sp = splits[i];
      Eigen::MatrixXd& out = corr[static_cast<std::size_t>(b0) + i];
      if (sp.svd.rank() == 0) return;
      const Eigen::MatrixXd uty = sp.svd.coordinates(sp.x_train, Y(sp.train, Eigen::seqN(v0, w)));
      const Eigen::MatrixXd y_test = Y(sp.test, Eigen::seqN(v0, w));
      for (Eigen::Index a = 0; a < n_alpha; ++a) {
        const Eigen::MatrixXd pred = sp.test_proj * (sp.d.col(a).asDiagonal() * uty);
        out.block(a, v0, 1, w) = column_correlation(pred, y_test).transpose();
      }
    });
  }

  Eigen::MatrixXd mean_corr = Eigen::MatrixXd::Zero(n_alpha, nv);
  for (const auto& c : corr) mean_corr += c;
  mean_corr /= static_cast<double>(cv.n_bootstraps);

  EncodingModel model;
  model.alpha_per_voxel.resize(static_cast<std::size_t>(nv));
  for (Eigen::Index v = 0; v < nv; ++v) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < n_alpha; ++a)
      if (mean_corr(a, v) > mean_corr(best, v)) best = a;
    model.alpha_per_voxel[static_cast<std::size_t>(v)] = grid[static_cast<std::size_t>(best)];
  }

  const auto svd = Spectral::of(X);
  model.weights = solve_ridge(X, svd, Y, model.alpha_per_voxel, workers, cv.voxel_block);
  model.cv_scores = std::move(mean_corr);
  model.meta.n_timepoints = static_cast<std::size_t>(X.rows());
  model.meta.cv = cv;
  model.meta.cv.alpha_grid = grid;
  return model;
}

EncodingModel fit_ridge(const temporal::DelayedDesign& X, const Eigen::MatrixXd& Y, const CvConfig& cv) {
  auto model = fit_ridge(X.matrix, Y, cv);
  model.meta.delays_trs = X.delays_trs;
  return model;
}

Eigen::MatrixXd predict(const EncodingModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.weights.rows())
    throw std::invalid_argument("design has " + std::to_string(X.cols()) + " columns but the model expects " +
                                std::to_string(model.weights.rows()));
  return X * model.weights;
}

VoxelScore score(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& actual) {
  if (pred.rows() != actual.rows() || pred.cols() != actual.cols())
    throw std::invalid_argument("prediction and response shapes differ");
  if (pred.rows() < 3) throw std::invalid_argument("scoring needs at least 3 timepoints");
  VoxelScore s;
  s.r = column_correlation(pred, actual);
  s.r_signed_sq = s.r.array().abs() * s.r.array();
  s.constant.resize(static_cast<std::size_t>(pred.cols()));
  for (Eigen::Index c = 0; c < pred.cols(); ++c) {
    const bool flat = pred.col(c).maxCoeff() == pred.col(c).minCoeff() ||
                      actual.col(c).maxCoeff() == actual.col(c).minCoeff();
    s.constant[static_cast<std::size_t>(c)] = flat;
  }
  return s;
}

double mean_cortex_score(const VoxelScore& scores, std::span<const Eigen::Index> mask) {
  if (mask.empty()) throw std::invalid_argument("cortex mask is empty");
  double sum = 0.0;
  for (auto v : mask) {
    if (v < 0 || v >= scores.r.size()) throw std::out_of_range("mask voxel " + std::to_string(v) + " out of range");
    sum += scores.r(v);
  }
  return sum / static_cast<double>(mask.size());
}

double mean_cortex_score(const VoxelScore& scores) {
  if (scores.r.size() == 0) throw std::invalid_argument("cortex mask is empty");
  return scores.r.mean();
}

int best_layer(const std::map<int, double>& per_layer_scores) {
  if (per_layer_scores.empty()) throw std::invalid_argument("no layer scores");
  auto best = per_layer_scores.begin();
  for (auto it = per_layer_scores.begin(); it != per_layer_scores.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

}  // namespace vem::ridge
