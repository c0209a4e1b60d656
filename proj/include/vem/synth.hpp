#pragma once

#include "vem/manifest.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vem::synth {

struct SpaceSpec {
  std::string name;
  int n_features = 10;
  double weight_scale = 1.0;  // norm of every driven voxel's weight vector
  int layer = 0;
};

/// Linear-Gaussian ground truth: Gaussian features on the TR grid, FIR-delayed,
/// times planted weights, plus independent Gaussian noise per voxel and per
/// repeat.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::string subject_id = "synthetic";
  double tr_seconds = 2.0;
  int n_train_trs = 1200;
  int n_test_trs = 300;
  int story_trs = 300;  // stories are cut from the train/test ranges at this length
  int n_voxels = 100;
  std::vector<SpaceSpec> spaces{SpaceSpec{"semantic", 10, 1.0, 0}};
  std::vector<int> driver;         // per voxel, index into spaces; empty means space 0
  std::vector<double> noise_sd{1.0};  // per voxel, or a single value for all
  int n_repeats = 10;
  std::vector<int> delays_trs{1, 2, 3, 4};

  void validate() const;
  int driver_of(int voxel) const;
  double noise_of(int voxel) const;
};

struct GroundTruth {
  std::map<std::string, Eigen::MatrixXd> weights;  // (features * delays) x voxels per space
  std::vector<int> driver;
  Eigen::VectorXd snr;     // signal variance / noise variance, inf for noiseless voxels
  Eigen::VectorXd cc_max;  // ceiling implied by snr and n_repeats
};

struct StoryData {
  StoryEntry entry;
  std::map<std::string, Eigen::MatrixXd> features;  // n_trs x n_features per space
  std::vector<double> timestamps;
  Eigen::MatrixXd signal;    // noiseless response
  Eigen::MatrixXd response;  // train: one noisy draw; test: mean of repeats
  std::vector<Eigen::MatrixXd> repeats;
};

struct SynthDataset {
  SynthSpec spec;
  std::vector<StoryData> stories;
  GroundTruth truth;
};

SynthDataset generate(const SynthSpec& spec);

/// Writes manifest.json, tensors and ground_truth.json under dir and returns
/// the manifest path.
std::filesystem::path write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

/// Analytic ceiling for SNR and N repeats.
double analytic_cc_max(double snr, int n_repeats);

}  // namespace vem::synth
