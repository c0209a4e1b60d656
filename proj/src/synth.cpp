#include "vem/synth.hpp"

#include "vem/error.hpp"
#include "vem/temporal.hpp"
#include "vem/tensor.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

namespace vem::synth {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<int> split_lengths(int total, int story_trs) {
  const int n = std::max(1, total / story_trs);
  std::vector<int> lengths(static_cast<std::size_t>(n), story_trs);
  lengths.back() += total - n * story_trs;
  return lengths;
}

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  // Fill row by row so the draw order follows the row-major file layout.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

std::string numbered(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02d", prefix, i);
  return buf;
}

}  // namespace

void SynthSpec::validate() const {
  if (!(tr_seconds > 0.0)) throw std::invalid_argument("tr_seconds must be positive");
  if (n_train_trs < 1 || n_test_trs < 1 || story_trs < 1 || n_voxels < 1)
    throw std::invalid_argument("synthetic counts must be positive");
  if (spaces.empty()) throw std::invalid_argument("at least one feature space is required");
  for (const auto& s : spaces)
    if (s.n_features < 1 || s.name.empty()) throw std::invalid_argument("invalid feature space spec");
  if (!driver.empty() && static_cast<int>(driver.size()) != n_voxels)
    throw std::invalid_argument("driver assignment must cover every voxel");
  for (int d : driver)
    if (d < 0 || d >= static_cast<int>(spaces.size())) throw std::invalid_argument("driver index out of range");
  if (noise_sd.empty() || (noise_sd.size() != 1 && static_cast<int>(noise_sd.size()) != n_voxels))
    throw std::invalid_argument("noise_sd needs one value or one per voxel");
  for (double s : noise_sd)
    if (!(s >= 0.0)) throw std::invalid_argument("noise_sd must be non-negative");
  if (n_repeats < 2) throw std::invalid_argument("at least 2 test repeats are required");
  if (delays_trs.empty()) throw std::invalid_argument("at least one delay is required");
}

int SynthSpec::driver_of(int voxel) const { return driver.empty() ? 0 : driver[static_cast<std::size_t>(voxel)]; }

double SynthSpec::noise_of(int voxel) const {
  return noise_sd.size() == 1 ? noise_sd.front() : noise_sd[static_cast<std::size_t>(voxel)];
}

double analytic_cc_max(double snr, int n_repeats) {
  if (!(snr > 0.0)) return 0.0;
  if (std::isinf(snr)) return 1.0;
  return 1.0 / std::sqrt(1.0 + 1.0 / (n_repeats * snr));
}

SynthDataset generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthDataset data;
  data.spec = spec;
  const int nv = spec.n_voxels;
  const auto n_delays = static_cast<Eigen::Index>(spec.delays_trs.size());

  auto add_stories = [&](int total, StoryRole role, const char* prefix) {
    const auto lengths = split_lengths(total, spec.story_trs);
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      StoryData s;
      s.entry.name = numbered(prefix, static_cast<int>(i));
      s.entry.n_trs = static_cast<std::size_t>(lengths[i]);
      s.entry.duration_seconds = lengths[i] * spec.tr_seconds;
      s.entry.role = role;
      s.timestamps = temporal::tr_onsets(s.entry.n_trs, spec.tr_seconds);
      data.stories.push_back(std::move(s));
    }
  };
  add_stories(spec.n_train_trs, StoryRole::train, "train");
  add_stories(spec.n_test_trs, StoryRole::test, "test");

  for (auto& s : data.stories)
    for (const auto& sp : spec.spaces)
      s.features[sp.name] = gaussian(static_cast<Eigen::Index>(s.entry.n_trs), sp.n_features, rng);

  data.truth.driver.resize(static_cast<std::size_t>(nv));
  for (int v = 0; v < nv; ++v) data.truth.driver[static_cast<std::size_t>(v)] = spec.driver_of(v);
  for (std::size_t k = 0; k < spec.spaces.size(); ++k) {
    const auto& sp = spec.spaces[k];
    Eigen::MatrixXd W = gaussian(sp.n_features * n_delays, nv, rng);
    for (int v = 0; v < nv; ++v) {
      if (spec.driver_of(v) != static_cast<int>(k)) {
        W.col(v).setZero();
      } else {
        W.col(v) *= sp.weight_scale / W.col(v).norm();
      }
    }
    data.truth.weights[sp.name] = std::move(W);
  }

  data.truth.snr.resize(nv);
  data.truth.cc_max.resize(nv);
  for (int v = 0; v < nv; ++v) {
    const double scale = spec.spaces[static_cast<std::size_t>(spec.driver_of(v))].weight_scale;
    const double noise = spec.noise_of(v);
    const double snr = noise > 0.0 ? scale * scale / (noise * noise) : std::numeric_limits<double>::infinity();
    data.truth.snr(v) = snr;
    data.truth.cc_max(v) = analytic_cc_max(snr, spec.n_repeats);
  }

  Eigen::VectorXd noise_scale(nv);
  for (int v = 0; v < nv; ++v) noise_scale(v) = spec.noise_of(v);

  for (auto& s : data.stories) {
    const auto n = static_cast<Eigen::Index>(s.entry.n_trs);
    s.signal = Eigen::MatrixXd::Zero(n, nv);
    for (const auto& sp : spec.spaces) {
      const auto design = temporal::make_delayed(s.features.at(sp.name), spec.delays_trs);
      s.signal.noalias() += design.matrix * data.truth.weights.at(sp.name);
    }
    if (s.entry.role == StoryRole::train) {
      s.response = s.signal + gaussian(n, nv, rng) * noise_scale.asDiagonal();
    } else {
      for (int r = 0; r < spec.n_repeats; ++r)
        s.repeats.push_back(s.signal + gaussian(n, nv, rng) * noise_scale.asDiagonal());
      Eigen::MatrixXd sum = s.repeats.front();
      for (std::size_t r = 1; r < s.repeats.size(); ++r) sum += s.repeats[r];
      s.response = sum / static_cast<double>(s.repeats.size());
    }
  }
  return data;
}

fs::path write_dataset(const SynthDataset& data, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  fs::create_directories(dir / "responses", ec);
  fs::create_directories(dir / "repeats", ec);
  fs::create_directories(dir / "truth", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.subject_id = data.spec.subject_id;
  m.tr_seconds = data.spec.tr_seconds;
  for (const auto& sp : data.spec.spaces) m.feature_spaces[sp.name].layer = sp.layer;

  for (const auto& s : data.stories) {
    m.stories.push_back(s.entry);
    const fs::path times = dir / "features" / (s.entry.name + "_times.vxt");
    write_tensor(Tensor::from_vector(s.timestamps), times);
    for (const auto& sp : data.spec.spaces) {
      const fs::path values = dir / "features" / (sp.name + "_" + s.entry.name + ".vxt");
      write_matrix(s.features.at(sp.name), values);
      m.feature_spaces[sp.name].stories[s.entry.name] = {values, times};
    }
    const fs::path resp = dir / "responses" / (s.entry.name + ".vxt");
    write_matrix(s.response, resp);
    m.responses[s.entry.name] = resp;
    for (std::size_t r = 0; r < s.repeats.size(); ++r) {
      const fs::path rp = dir / "repeats" / (numbered((s.entry.name + "_rep").c_str(), static_cast<int>(r)) + ".vxt");
      write_matrix(s.repeats[r], rp);
      m.test_repeats[s.entry.name].push_back(rp);
    }
  }
  const fs::path manifest = dir / "manifest.json";
  save_manifest(m, manifest);

  json truth;
  truth["seed"] = data.spec.seed;
  truth["n_repeats"] = data.spec.n_repeats;
  truth["delays_trs"] = data.spec.delays_trs;
  truth["driver"] = data.truth.driver;
  truth["spaces"] = json::array();
  for (const auto& sp : data.spec.spaces) {
    const fs::path w = dir / "truth" / ("weights_" + sp.name + ".vxt");
    write_matrix(data.truth.weights.at(sp.name), w);
    truth["spaces"].push_back({{"name", sp.name},
                               {"n_features", sp.n_features},
                               {"weight_scale", sp.weight_scale},
                               {"layer", sp.layer},
                               {"weights", fs::relative(w, dir).generic_string()}});
  }
  json snr = json::array(), ccm = json::array();
  for (Eigen::Index v = 0; v < data.truth.snr.size(); ++v) {
    if (std::isinf(data.truth.snr(v)))
      snr.push_back(nullptr);
    else
      snr.push_back(data.truth.snr(v));
    ccm.push_back(data.truth.cc_max(v));
  }
  truth["snr"] = std::move(snr);
  truth["cc_max"] = std::move(ccm);
  write_matrix(data.truth.cc_max, dir / "truth" / "cc_max.vxt");

  std::ofstream out(dir / "ground_truth.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "ground_truth.json").string());
  out << truth.dump(2) << '\n';
  return manifest;
}

}  // namespace vem::synth
