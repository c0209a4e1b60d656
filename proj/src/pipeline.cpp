#include "vem/pipeline.hpp"

#include "vem/error.hpp"
#include "vem/tensor.hpp"

#include <json.hpp>

#include <fstream>

namespace vem::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const FeatureSource& source_of(const DatasetManifest& m, const std::string& space, const std::string& story) {
  const auto sp = m.feature_spaces.find(space);
  if (sp == m.feature_spaces.end()) throw ValidationError("unknown feature space '" + space + "'");
  const auto src = sp->second.stories.find(story);
  if (src == sp->second.stories.end())
    throw ValidationError("feature space '" + space + "' has no features for story '" + story + "'");
  return src->second;
}

}  // namespace

Eigen::MatrixXd story_features(const DatasetManifest& m, const std::string& space, const std::string& story,
                               const temporal::LanczosParams& lanczos) {
  const auto& src = source_of(m, space, story);
  temporal::FeatureTimeSeries fts;
  const Tensor times = read_tensor(src.timestamps);
  fts.timestamps = times.values;
  fts.values = read_matrix(src.values);
  const auto onsets = temporal::tr_onsets(m.story(story).n_trs, m.tr_seconds);
  return temporal::lanczos_resample(fts, onsets, lanczos);
}

Eigen::MatrixXd story_design(const DatasetManifest& m, const std::string& space, const std::string& story,
                             const std::vector<int>& delays, const temporal::LanczosParams& lanczos) {
  const auto& entry = m.story(story);
  auto design = temporal::make_delayed(story_features(m, space, story, lanczos), delays);
  return design.matrix.middleRows(static_cast<Eigen::Index>(entry.trim_leading),
                                  static_cast<Eigen::Index>(entry.response_rows()));
}

Eigen::MatrixXd design_for(const DatasetManifest& m, const std::string& space, const std::vector<std::string>& stories,
                           const std::vector<int>& delays, const temporal::LanczosParams& lanczos) {
  if (stories.empty()) throw ValidationError("no stories selected");
  std::vector<Eigen::MatrixXd> parts;
  Eigen::Index rows = 0;
  for (const auto& s : stories) {
    parts.push_back(story_design(m, space, s, delays, lanczos));
    rows += parts.back().rows();
  }
  Eigen::MatrixXd X(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    X.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return X;
}

Eigen::MatrixXd responses_for(const DatasetManifest& m, const std::vector<std::string>& stories) {
  if (stories.empty()) throw ValidationError("no stories selected");
  const auto lengths = response_lengths(m, stories);
  Eigen::Index rows = 0;
  for (auto n : lengths) rows += n;
  Eigen::MatrixXd Y(rows, static_cast<Eigen::Index>(m.n_voxels));
  Eigen::Index at = 0;
  for (const auto& s : stories) {
    const auto r = read_matrix(m.responses.at(s));
    Y.middleRows(at, r.rows()) = r;
    at += r.rows();
  }
  return Y;
}

std::vector<Eigen::Index> response_lengths(const DatasetManifest& m, const std::vector<std::string>& stories) {
  std::vector<Eigen::Index> out;
  for (const auto& s : stories) out.push_back(static_cast<Eigen::Index>(m.story(s).response_rows()));
  return out;
}

void save_model(const ridge::EncodingModel& model, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_matrix(model.weights, dir / "weights.vxt");
  write_tensor(Tensor::from_vector(model.alpha_per_voxel), dir / "alphas.vxt");
  write_matrix(model.cv_scores, dir / "cv_scores.vxt");
  const auto& cv = model.meta.cv;
  json j{{"feature_space_id", model.feature_space_id},
         {"layer_id", model.layer_id},
         {"stories", model.meta.stories},
         {"n_timepoints", model.meta.n_timepoints},
         {"delays_trs", model.meta.delays_trs},
         {"cv",
          {{"n_bootstraps", cv.n_bootstraps},
           {"chunk_length_trs", cv.chunk_length_trs},
           {"holdout_fraction", cv.holdout_fraction},
           {"alpha_grid", cv.alpha_grid},
           {"seed", cv.seed}}}};
  std::ofstream out(dir / "model.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "model.json").string());
  out << j.dump(2) << '\n';
}

ridge::EncodingModel load_model(const fs::path& dir) {
  const fs::path doc = dir / "model.json";
  std::ifstream in(doc);
  if (!in) throw IoError("cannot open model " + doc.string());
  ridge::EncodingModel model;
  try {
    const json j = json::parse(in);
    model.feature_space_id = j.at("feature_space_id").get<std::string>();
    model.layer_id = j.at("layer_id").get<int>();
    model.meta.stories = j.at("stories").get<std::vector<std::string>>();
    model.meta.n_timepoints = j.at("n_timepoints").get<std::size_t>();
    model.meta.delays_trs = j.at("delays_trs").get<std::vector<int>>();
    const auto& cv = j.at("cv");
    model.meta.cv.n_bootstraps = cv.at("n_bootstraps").get<int>();
    model.meta.cv.chunk_length_trs = cv.at("chunk_length_trs").get<int>();
    model.meta.cv.holdout_fraction = cv.at("holdout_fraction").get<double>();
    model.meta.cv.alpha_grid = cv.at("alpha_grid").get<std::vector<double>>();
    model.meta.cv.seed = cv.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError("model " + doc.string() + ": " + e.what());
  }
  model.weights = read_matrix(dir / "weights.vxt");
  model.alpha_per_voxel = read_tensor(dir / "alphas.vxt").values;
  model.cv_scores = read_matrix(dir / "cv_scores.vxt");
  if (static_cast<Eigen::Index>(model.alpha_per_voxel.size()) != model.weights.cols())
    throw FormatError("model " + dir.string() + ": alphas do not match the weight columns");
  return model;
}

}  // namespace vem::pipeline
