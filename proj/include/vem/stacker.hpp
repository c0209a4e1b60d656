#pragma once

#include "vem/ridge.hpp"
#include "vem/simplex_qp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vem::stacker {

/// Assignment of every training TR to one of n_folds folds.
struct FoldSpec {
  std::vector<int> fold_of_row;
  int n_folds = 0;

  /// Throws unless every row belongs to exactly one fold in [0, n_folds)
  /// and no fold is empty.
  void validate(Eigen::Index n_rows) const;
  std::vector<Eigen::Index> rows_in(int fold) const;
  std::vector<Eigen::Index> rows_not_in(int fold) const;
};

/// Whole stories per fold when there are at least n_folds stories (greedy
/// contiguous grouping balanced by TR count), otherwise contiguous runs of
/// chunk_trs-long chunks.
FoldSpec make_folds(std::span<const Eigen::Index> story_lengths, int n_folds = 5, int chunk_trs = 20);

struct HeldoutPredictions {
  std::vector<Eigen::MatrixXd> per_space;  // each n_rows x n_voxels
  FoldSpec folds;
};

/// Out-of-fold predictions for every space: for each fold a ridge model is
/// fitted on the remaining folds and predicts the held-out rows.
HeldoutPredictions heldout_predictions(std::span<const Eigen::MatrixXd> spaces, const Eigen::MatrixXd& Y,
                                       const FoldSpec& folds, const ridge::CvConfig& cv);

/// R[p, q] = sum_t (y - f_p)(y - f_q) per voxel, uncentred.
struct ResidualCovariance {
  std::vector<Eigen::MatrixXd> per_voxel;
};

ResidualCovariance residual_covariance(const HeldoutPredictions& preds, const Eigen::MatrixXd& Y, int workers = 1);

/// Simplex weights for every voxel: rows are voxels, columns spaces.
Eigen::MatrixXd solve_stack_weights(const ResidualCovariance& R, int workers = 1);

/// sum_i i * alpha_i with layers numbered 1..m.
double center_of_mass(std::span<const double> alpha);

/// Centre of mass over a subset of the spaces (the audio layers, in stack
/// order) after renormalising their weights to sum to one. Returns 0 when
/// the subset carries no weight.
double subset_center_of_mass(std::span<const double> alpha, std::span<const Eigen::Index> subset);

/// Voxelwise convex combination of per-space predictions.
Eigen::MatrixXd stacked_predict(std::span<const Eigen::MatrixXd> per_space_pred, const Eigen::MatrixXd& alpha);
Eigen::MatrixXd stacked_predict(std::span<const ridge::EncodingModel> models, const Eigen::MatrixXd& alpha,
                                std::span<const Eigen::MatrixXd> designs);

enum class Gate : std::uint8_t { baseline = 0, stacked = 1 };

/// Stacked beats baseline when its validation correlation is higher and the
/// improvement stays positive in at least `confidence` of the block
/// bootstrap resamples.
struct GateConfig {
  int block_trs = 20;
  int n_resamples = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct GateResult {
  std::vector<Gate> gate;
  Eigen::VectorXd delta_r;
  Eigen::VectorXd support;  // fraction of resamples with a positive improvement
};

GateResult gate_stacked(const Eigen::MatrixXd& stacked_pred, const Eigen::MatrixXd& baseline_pred,
                        const Eigen::MatrixXd& validation_y, const GateConfig& cfg,
                        std::span<const std::string> fit_stories, std::span<const std::string> validation_stories);

struct StackAttribution {
  Eigen::MatrixXd alpha;           // voxels x spaces
  Eigen::VectorXd center_of_mass;  // over the audio subset
  std::vector<Gate> gate;
};

/// Every even-numbered non-embedding audio layer plus one semantic layer.
struct StackComposition {
  std::vector<int> audio_layers;
  int semantic_layer = 18;
};
StackComposition default_stack_composition(int n_audio_layers, int semantic_layer = 18);

/// Applies the gate: stacked prediction where the gate says so, baseline elsewhere.
Eigen::MatrixXd gated_predict(const Eigen::MatrixXd& stacked_pred, const Eigen::MatrixXd& baseline_pred,
                              const std::vector<Gate>& gate);

}  // namespace vem::stacker
