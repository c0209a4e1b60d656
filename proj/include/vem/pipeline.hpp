#pragma once

#include "vem/manifest.hpp"
#include "vem/ridge.hpp"
#include "vem/temporal.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace vem::pipeline {

/// Features of one story resampled onto its TR onsets, n_trs x features.
Eigen::MatrixXd story_features(const DatasetManifest& m, const std::string& space, const std::string& story,
                               const temporal::LanczosParams& lanczos = {});

/// Delayed design for the response rows that survive the story's trims.
Eigen::MatrixXd story_design(const DatasetManifest& m, const std::string& space, const std::string& story,
                             const std::vector<int>& delays, const temporal::LanczosParams& lanczos = {});

/// Story designs stacked vertically in the order given.
Eigen::MatrixXd design_for(const DatasetManifest& m, const std::string& space, const std::vector<std::string>& stories,
                           const std::vector<int>& delays, const temporal::LanczosParams& lanczos = {});

Eigen::MatrixXd responses_for(const DatasetManifest& m, const std::vector<std::string>& stories);

std::vector<Eigen::Index> response_lengths(const DatasetManifest& m, const std::vector<std::string>& stories);

/// weights.vxt, alphas.vxt, cv_scores.vxt and model.json in dir.
void save_model(const ridge::EncodingModel& model, const std::filesystem::path& dir);
ridge::EncodingModel load_model(const std::filesystem::path& dir);

}  // namespace vem::pipeline
