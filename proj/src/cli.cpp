#include "vem/cli.hpp"

#include "vem/ceiling.hpp"
#include "vem/error.hpp"
#include "vem/manifest.hpp"
#include "vem/pipeline.hpp"
#include "vem/preprocess.hpp"
#include "vem/ridge.hpp"
#include "vem/scaling.hpp"
#include "vem/schedule.hpp"
#include "vem/stacker.hpp"
#include "vem/synth.hpp"
#include "vem/tensor.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace vem::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Small output helpers

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_flags(const std::vector<bool>& flags, const fs::path& path) {
  std::vector<double> v(flags.size());
  for (std::size_t i = 0; i < flags.size(); ++i) v[i] = flags[i] ? 1.0 : 0.0;
  write_tensor(Tensor::from_vector(v), path);
}

std::string sha256_hex(const unsigned char* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1) throw ComputeError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read input " + p.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

// Metadata written next to every output: what was read, with which
// parameters, and how to run it again.
struct Sidecar {
  std::string subcommand;
  std::vector<std::string> args;
  json parameters = json::object();
  json results = json::object();
  std::vector<fs::path> inputs;

  void write(const fs::path& out_dir) const {
    json files = json::array();
    std::string joined;
    for (const auto& p : inputs) {
      const std::string digest = sha256_file(p);
      files.push_back({{"path", p.string()}, {"sha256", digest}});
      joined += digest;
    }
    json doc{{"tool", "vem"},
             {"subcommand", subcommand},
             {"command", args},
             {"parameters", parameters},
             {"inputs", files},
             {"inputs_hash", sha256_hex(reinterpret_cast<const unsigned char*>(joined.data()), joined.size())},
             {"versions",
              {{"vem", kVersion},
               {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                             std::to_string(EIGEN_MINOR_VERSION)},
               {"cli11", CLI11_VERSION}}},
             {"results", results}};
    write_text(out_dir / "run.json", doc.dump(2) + "\n");
  }
};

std::vector<fs::path> manifest_inputs(const DatasetManifest& m, const fs::path& manifest_path) {
  std::set<fs::path> files{manifest_path};
  for (const auto& [space, entry] : m.feature_spaces)
    for (const auto& [story, src] : entry.stories) {
      files.insert(src.values);
      files.insert(src.timestamps);
    }
  for (const auto& [story, p] : m.responses) files.insert(p);
  for (const auto& [story, ps] : m.test_repeats) files.insert(ps.begin(), ps.end());
  return {files.begin(), files.end()};
}

std::vector<fs::path> model_inputs(const fs::path& dir) {
  return {dir / "model.json", dir / "weights.vxt", dir / "alphas.vxt", dir / "cv_scores.vxt"};
}

// voxel_id,r,... as written by `score`; returns the r column ordered by voxel.
Eigen::VectorXd read_score_csv(const fs::path& path, const std::string& column = "r") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scores " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("scores " + path.string() + " is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  const auto header = split(line);
  const auto col = std::find(header.begin(), header.end(), column);
  if (header.empty() || header[0] != "voxel_id" || col == header.end())
    throw FormatError("scores " + path.string() + " needs columns voxel_id and " + column);
  const auto idx = static_cast<std::size_t>(col - header.begin());
  std::vector<std::pair<long, double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw FormatError("scores " + path.string() + " line " + std::to_string(line_no) + " has " +
                        std::to_string(cells.size()) + " fields");
    try {
      rows.emplace_back(std::stol(cells[0]), std::stod(cells[idx]));
    } catch (const std::exception&) {
      throw FormatError("scores " + path.string() + " line " + std::to_string(line_no) + " is not numeric");
    }
  }
  std::sort(rows.begin(), rows.end());
  Eigen::VectorXd r(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<long>(i))
      throw FormatError("scores " + path.string() + " voxel ids are not 0.." + std::to_string(rows.size() - 1));
    r(static_cast<Eigen::Index>(i)) = rows[i].second;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Options shared by several subcommands

struct Common {
  fs::path manifest;
  fs::path out;
  std::uint64_t seed = 0;
  int workers = std::max(1u, std::thread::hardware_concurrency());
};

void add_out(CLI::App* app, Common& c) { app->add_option("--out", c.out, "Output directory")->required(); }
void add_manifest(CLI::App* app, Common& c) {
  app->add_option("--manifest", c.manifest, "Dataset manifest")->required();
}
void add_seed(CLI::App* app, Common& c) { app->add_option("--seed", c.seed, "Random seed")->capture_default_str(); }
void add_workers(CLI::App* app, Common& c) {
  app->add_option("--workers", c.workers, "Worker threads (never changes results)")->check(CLI::PositiveNumber);
}

struct TrimOptions {
  int train = 10;
  int test_extra = 40;
  double eval_seconds = 100.0;
  bool eval_additive = false;

  void add(CLI::App* app, bool eval_only) {
    if (!eval_only) {
      app->add_option("--trim-train", train, "Volumes removed at both ends of every story")->capture_default_str();
      app->add_option("--trim-test-extra", test_extra, "Further volumes removed from the start of test stories")
          ->capture_default_str();
    }
    app->add_option("--trim-eval-seconds", eval_seconds, "Seconds after story onset excluded from scoring")
        ->capture_default_str();
    app->add_flag("--trim-eval-additive", eval_additive,
                  "Apply the scoring exclusion on top of earlier trims instead of from onset");
  }
  preprocess::TrimPolicy policy() const { return {train, test_extra, eval_seconds, !eval_additive}; }
  json to_json() const {
    return {{"trim_train", train},
            {"trim_test_extra", test_extra},
            {"trim_eval_seconds", eval_seconds},
            {"trim_eval_additive", eval_additive}};
  }
};

struct CvOptions {
  std::vector<double> alphas;
  std::vector<int> delays = temporal::kDefaultDelays;
  int bootstraps = 15;
  int chunk_trs = 20;
  double holdout = 0.2;

  void add(CLI::App* app) {
    app->add_option("--alphas", alphas, "Comma-separated ridge penalties (default logspace(1, 6, 10))")
        ->delimiter(',');
    app->add_option("--delays", delays, "Comma-separated FIR delays in TRs")->delimiter(',')->capture_default_str();
    app->add_option("--bootstraps", bootstraps, "Cross-validation bootstraps")->capture_default_str();
    app->add_option("--chunk-trs", chunk_trs, "Held-out chunk length in TRs")->capture_default_str();
    app->add_option("--holdout-fraction", holdout, "Fraction of chunks held out per bootstrap")->capture_default_str();
  }
  ridge::CvConfig config(std::uint64_t seed, int workers) const {
    ridge::CvConfig cv;
    if (!alphas.empty()) cv.alpha_grid = alphas;
    cv.n_bootstraps = bootstraps;
    cv.chunk_length_trs = chunk_trs;
    cv.holdout_fraction = holdout;
    cv.seed = seed;
    cv.workers = workers;
    return cv;
  }
};

std::vector<std::string> story_list(const DatasetManifest& m, StoryRole role) {
  auto names = m.story_names(role);
  if (names.empty()) throw ValidationError(std::string("manifest has no ") + to_string(role) + " stories");
  return names;
}

// Predictions for every test story, trimmed for scoring and concatenated.
struct TestSet {
  std::vector<std::string> stories;
  std::vector<Eigen::MatrixXd> full_pred;
  Eigen::MatrixXd pred;
  Eigen::MatrixXd actual;
};

TestSet evaluate(const DatasetManifest& m, const std::vector<Eigen::MatrixXd>& per_story_pred,
                 const std::vector<std::string>& stories, const preprocess::TrimPolicy& policy) {
  TestSet ts;
  ts.stories = stories;
  ts.full_pred = per_story_pred;
  std::vector<preprocess::EvalPair> parts;
  Eigen::Index rows = 0;
  for (std::size_t i = 0; i < stories.size(); ++i) {
    const auto& entry = m.story(stories[i]);
    const Eigen::MatrixXd actual = read_matrix(m.responses.at(stories[i]));
    parts.push_back(preprocess::trim_for_evaluation(per_story_pred[i], actual, policy, m.tr_seconds,
                                                    entry.trim_leading));
    rows += parts.back().pred.rows();
  }
  ts.pred.resize(rows, static_cast<Eigen::Index>(m.n_voxels));
  ts.actual.resize(rows, static_cast<Eigen::Index>(m.n_voxels));
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    ts.pred.middleRows(at, p.pred.rows()) = p.pred;
    ts.actual.middleRows(at, p.actual.rows()) = p.actual;
    at += p.pred.rows();
  }
  return ts;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  Common common;
  std::string preset = "single";
  fs::path config;
  int voxels = 0, train_trs = 0, test_trs = 0, story_trs = 0, features = 0, repeats = 0;
  double noise_sd = -1.0, tr = 0.0;
  std::vector<int> delays;
};

synth::SynthSpec spec_from(const SimulateOptions& o, CLI::App* app) {
  synth::SynthSpec spec;
  if (o.preset == "two-space") {
    spec.spaces = {synth::SpaceSpec{"audio", 10, 1.0, 2}, synth::SpaceSpec{"semantic", 10, 1.0, 18}};
  } else if (o.preset != "single") {
    throw UsageError("unknown preset '" + o.preset + "' (expected single or two-space)");
  }
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw IoError("cannot open simulation config " + o.config.string());
    try {
      const json j = json::parse(in);
      spec.seed = j.value("seed", spec.seed);
      spec.subject_id = j.value("subject_id", spec.subject_id);
      spec.tr_seconds = j.value("tr_seconds", spec.tr_seconds);
      spec.n_train_trs = j.value("n_train_trs", spec.n_train_trs);
      spec.n_test_trs = j.value("n_test_trs", spec.n_test_trs);
      spec.story_trs = j.value("story_trs", spec.story_trs);
      spec.n_voxels = j.value("n_voxels", spec.n_voxels);
      spec.n_repeats = j.value("n_repeats", spec.n_repeats);
      spec.delays_trs = j.value("delays_trs", spec.delays_trs);
      spec.driver = j.value("driver", spec.driver);
      if (j.contains("noise_sd")) {
        if (j["noise_sd"].is_array())
          spec.noise_sd = j["noise_sd"].get<std::vector<double>>();
        else
          spec.noise_sd = {j["noise_sd"].get<double>()};
      }
      if (j.contains("spaces")) {
        spec.spaces.clear();
        for (const auto& s : j["spaces"])
          spec.spaces.push_back({s.at("name").get<std::string>(), s.value("n_features", 10),
                                 s.value("weight_scale", 1.0), s.value("layer", 0)});
      }
    } catch (const json::exception& e) {
      throw FormatError("simulation config " + o.config.string() + ": " + e.what());
    }
  }
  if (app->count("--seed") || o.config.empty()) spec.seed = o.common.seed;
  if (o.voxels > 0) spec.n_voxels = o.voxels;
  if (o.train_trs > 0) spec.n_train_trs = o.train_trs;
  if (o.test_trs > 0) spec.n_test_trs = o.test_trs;
  if (o.story_trs > 0) spec.story_trs = o.story_trs;
  if (o.repeats > 0) spec.n_repeats = o.repeats;
  if (o.tr > 0.0) spec.tr_seconds = o.tr;
  if (o.features > 0)
    for (auto& s : spec.spaces) s.n_features = o.features;
  if (o.noise_sd >= 0.0) spec.noise_sd = {o.noise_sd};
  if (!o.delays.empty()) spec.delays_trs = o.delays;
  if (o.preset == "two-space" && spec.driver.empty()) {
    // First half of the voxels driven by audio, second half by semantics.
    spec.driver.assign(static_cast<std::size_t>(spec.n_voxels), 1);
    std::fill(spec.driver.begin(), spec.driver.begin() + spec.n_voxels / 2, 0);
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("simulation spec: ") + e.what());
  }
  return spec;
}

json spec_json(const synth::SynthSpec& s) {
  json spaces = json::array();
  for (const auto& sp : s.spaces)
    spaces.push_back({{"name", sp.name}, {"n_features", sp.n_features}, {"weight_scale", sp.weight_scale},
                      {"layer", sp.layer}});
  return {{"seed", s.seed},           {"subject_id", s.subject_id}, {"tr_seconds", s.tr_seconds},
          {"n_train_trs", s.n_train_trs}, {"n_test_trs", s.n_test_trs}, {"story_trs", s.story_trs},
          {"n_voxels", s.n_voxels},   {"spaces", spaces},           {"driver", s.driver},
          {"noise_sd", s.noise_sd},   {"n_repeats", s.n_repeats},   {"delays_trs", s.delays_trs}};
}

// ---------------------------------------------------------------------------
// Subcommand bodies

void do_simulate(const SimulateOptions& o, CLI::App* app, Sidecar& sc) {
  const auto spec = spec_from(o, app);
  ensure_dir(o.common.out);
  const auto data = synth::generate(spec);
  const auto manifest = synth::write_dataset(data, o.common.out);
  if (!o.config.empty()) sc.inputs.push_back(o.config);
  sc.parameters["spec"] = spec_json(spec);
  sc.results["manifest"] = manifest.string();
  std::cout << json{{"manifest", manifest.string()}}.dump() << '\n';
}

struct PlanOptions {
  Common common;
  std::size_t tokens = 0;
  double audio_seconds = 0.0;
  std::size_t max_len = 512, reset_len = 256;
  double window = 16.0, stride = 0.1;
};

void do_plan(const PlanOptions& o, Sidecar& sc) {
  if ((o.tokens > 0) == (o.audio_seconds > 0.0)) throw UsageError("plan needs exactly one of --tokens or --audio-seconds");
  ensure_dir(o.common.out);
  if (o.tokens > 0) {
    const auto plan = schedule::plan_story_tokens(o.tokens, o.max_len, o.reset_len);
    write_text(o.common.out / "plan.csv", schedule::token_plan_csv(plan));
    sc.parameters = {{"kind", "text"}, {"tokens", o.tokens}, {"max_len", o.max_len}, {"reset_len", o.reset_len}};
    sc.results = {{"rows", plan.size()}, {"context_starts", schedule::growth_run_starts(plan).size()}};
  } else {
    const auto plan = schedule::plan_audio_windows(o.audio_seconds, o.window, o.stride);
    write_text(o.common.out / "plan.csv", schedule::audio_plan_csv(plan));
    sc.parameters = {{"kind", "audio"}, {"audio_seconds", o.audio_seconds}, {"window", o.window}, {"stride", o.stride}};
    sc.results = {{"rows", plan.size()}};
  }
}

struct PreprocessOptions {
  Common common;
  TrimOptions trim;
  double window_seconds = 120.0;
  int order = 2;
};

void do_preprocess(const PreprocessOptions& o, Sidecar& sc) {
  auto m = load_manifest(o.common.manifest);
  sc.inputs = manifest_inputs(m, o.common.manifest);
  const auto policy = o.trim.policy();
  policy.validate(m.tr_seconds);
  ensure_dir(o.common.out / "responses");
  ensure_dir(o.common.out / "repeats");

  std::size_t flagged = 0;
  auto process = [&](const Eigen::MatrixXd& y, StoryRole role) {
    const Eigen::MatrixXd detrended =
        preprocess::savgol_detrend(y, m.tr_seconds, o.window_seconds, o.order, o.common.workers);
    const Eigen::MatrixXd trimmed = role == StoryRole::train
                                        ? preprocess::trim_for_training(detrended, policy, m.tr_seconds)
                                        : preprocess::trim_for_test(detrended, policy, m.tr_seconds);
    auto z = preprocess::zscore_voxels(trimmed);
    flagged += static_cast<std::size_t>(std::count(z.zero_variance.begin(), z.zero_variance.end(), true));
    return std::move(z.series);
  };

  DatasetManifest out = m;
  for (auto& s : out.stories) {
    const std::size_t lead = s.role == StoryRole::train ? policy.trailing() : policy.test_leading();
    const std::size_t tail = policy.trailing();
    const fs::path resp = o.common.out / "responses" / (s.name + ".vxt");
    write_matrix(process(read_matrix(m.responses.at(s.name)), s.role), resp);
    out.responses[s.name] = resp;
    if (auto it = m.test_repeats.find(s.name); it != m.test_repeats.end()) {
      auto& reps = out.test_repeats[s.name];
      reps.clear();
      for (std::size_t r = 0; r < it->second.size(); ++r) {
        const fs::path rp = o.common.out / "repeats" / (s.name + "_rep" + std::to_string(r) + ".vxt");
        write_matrix(process(read_matrix(it->second[r]), s.role), rp);
        reps.push_back(rp);
      }
    }
    s.trim_leading += lead;
    s.trim_trailing += tail;
  }
  validate_manifest(out);
  const fs::path manifest = o.common.out / "manifest.json";
  save_manifest(out, manifest);
  sc.parameters = o.trim.to_json();
  sc.parameters["window_seconds"] = o.window_seconds;
  sc.parameters["order"] = o.order;
  sc.results = {{"manifest", manifest.string()}, {"zero_variance_columns", flagged}};
}

struct FitOptions {
  Common common;
  CvOptions cv;
  std::vector<std::string> spaces;
  int train_stories = 0;
};

void do_fit(const FitOptions& o, Sidecar& sc) {
  const auto m = load_manifest(o.common.manifest);
  sc.inputs = manifest_inputs(m, o.common.manifest);
  auto stories = story_list(m, StoryRole::train);
  if (o.train_stories > 0) {
    const std::size_t k = static_cast<std::size_t>(o.train_stories);
    if (k > stories.size())
      throw UsageError("--train-stories " + std::to_string(k) + " exceeds the " + std::to_string(stories.size()) +
                       " training stories");
    const std::vector<std::size_t> sizes{k};
    const auto subset = scaling::story_subsample_plan(stories.size(), sizes, o.common.seed).front();
    std::vector<std::string> chosen;
    for (auto i : subset) chosen.push_back(stories[i]);
    stories = std::move(chosen);
  }
  std::vector<std::string> spaces = o.spaces;
  if (spaces.empty())
    for (const auto& [name, entry] : m.feature_spaces) spaces.push_back(name);
  if (spaces.empty()) throw ValidationError("manifest has no feature spaces");

  const auto cv = o.cv.config(o.common.seed, o.common.workers);
  const Eigen::MatrixXd Y = pipeline::responses_for(m, stories);
  json fitted = json::array();
  for (const auto& space : spaces) {
    temporal::DelayedDesign X{pipeline::design_for(m, space, stories, o.cv.delays), o.cv.delays};
    auto model = ridge::fit_ridge(X, Y, cv);
    model.feature_space_id = space;
    model.layer_id = m.feature_spaces.at(space).layer;
    model.meta.stories = stories;
    model.meta.n_timepoints = static_cast<std::size_t>(Y.rows());
    pipeline::save_model(model, o.common.out / space);
    fitted.push_back({{"feature_space", space}, {"layer", model.layer_id}, {"dir", (o.common.out / space).string()}});
  }
  sc.parameters = {{"alphas", cv.alpha_grid},       {"delays", o.cv.delays},
                   {"bootstraps", cv.n_bootstraps}, {"chunk_trs", cv.chunk_length_trs},
                   {"holdout_fraction", cv.holdout_fraction}, {"train_stories", stories},
                   {"spaces", spaces}};
  sc.results["models"] = fitted;
}

struct ScoreOptions {
  Common common;
  TrimOptions trim;
  std::vector<fs::path> models;
};

std::string score_csv(const ridge::VoxelScore& s) {
  std::string out = "voxel_id,r,r_signed_sq\n";
  for (Eigen::Index v = 0; v < s.r.size(); ++v)
    out += std::to_string(v) + "," + fmt(s.r(v)) + "," + fmt(s.r_signed_sq(v)) + "\n";
  return out;
}

void do_score(const ScoreOptions& o, Sidecar& sc) {
  const auto m = load_manifest(o.common.manifest);
  sc.inputs = manifest_inputs(m, o.common.manifest);
  const auto policy = o.trim.policy();
  const auto tests = story_list(m, StoryRole::test);
  std::map<int, double> per_layer;
  std::string summary = "feature_space,layer,mean_r\n";
  json results = json::array();
  for (const auto& dir : o.models) {
    const auto model = pipeline::load_model(dir);
    for (const auto& p : model_inputs(dir)) sc.inputs.push_back(p);
    std::vector<Eigen::MatrixXd> preds;
    for (const auto& story : tests) {
      const Eigen::MatrixXd X = pipeline::story_design(m, model.feature_space_id, story, model.meta.delays_trs);
      preds.push_back(ridge::predict(model, X));
    }
    const auto ts = evaluate(m, preds, tests, policy);
    const auto scores = ridge::score(ts.pred, ts.actual);
    const double mean_r = ridge::mean_cortex_score(scores);
    const fs::path out = o.common.out / model.feature_space_id;
    ensure_dir(out / "predictions");
    write_text(out / "scores.csv", score_csv(scores));
    write_matrix(scores.r, out / "r.vxt");
    for (std::size_t i = 0; i < tests.size(); ++i) write_matrix(preds[i], out / "predictions" / (tests[i] + ".vxt"));
    summary += model.feature_space_id + "," + std::to_string(model.layer_id) + "," + fmt(mean_r) + "\n";
    if (auto it = per_layer.find(model.layer_id); it == per_layer.end() || mean_r > it->second)
      per_layer[model.layer_id] = mean_r;
    results.push_back({{"feature_space", model.feature_space_id}, {"layer", model.layer_id}, {"mean_r", mean_r}});
    std::cout << json{{"feature_space", model.feature_space_id}, {"mean_r", mean_r}}.dump() << '\n';
  }
  write_text(o.common.out / "summary.csv", summary);
  sc.parameters = o.trim.to_json();
  sc.results = {{"scores", results}, {"best_layer", ridge::best_layer(per_layer)}};
}

struct StackOptions {
  Common common;
  TrimOptions trim;
  std::vector<fs::path> models;
  std::string baseline;
  int folds = 5;
  double validation_fraction = 0.2;
  int block_trs = 20;
  int resamples = 1000;
  double confidence = 0.95;
  bool com_all_spaces = false;
};

void do_stack(const StackOptions& o, Sidecar& sc) {
  const auto m = load_manifest(o.common.manifest);
  sc.inputs = manifest_inputs(m, o.common.manifest);
  if (o.models.size() < 2) throw UsageError("stack needs at least two --model directories");
  std::vector<ridge::EncodingModel> models;
  for (const auto& dir : o.models) {
    models.push_back(pipeline::load_model(dir));
    for (const auto& p : model_inputs(dir)) sc.inputs.push_back(p);
  }
  const std::size_t k = models.size();
  std::size_t base = 0;
  if (!o.baseline.empty()) {
    auto it = std::find_if(models.begin(), models.end(),
                           [&](const auto& md) { return md.feature_space_id == o.baseline; });
    if (it == models.end()) throw UsageError("--baseline '" + o.baseline + "' is not among the models");
    base = static_cast<std::size_t>(it - models.begin());
  }
  for (std::size_t j = 1; j < k; ++j)
    if (models[j].meta.stories != models[0].meta.stories)
      throw ValidationError("models were trained on different stories");
  std::set<std::string> names;
  for (const auto& md : models)
    if (!names.insert(md.feature_space_id).second)
      throw UsageError("feature space '" + md.feature_space_id + "' given twice");

  // Hold out the last training stories for the gate; the rest estimate alpha.
  const auto& train = models[0].meta.stories;
  if (train.size() < 2) throw ValidationError("stacking needs at least two training stories");
  if (!(o.validation_fraction > 0.0 && o.validation_fraction < 1.0))
    throw UsageError("--validation-fraction must lie in (0, 1)");
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(o.validation_fraction * static_cast<double>(train.size()))), 1,
      train.size() - 1);
  const std::vector<std::string> fit_stories(train.begin(), train.end() - static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::string> val_stories(train.end() - static_cast<std::ptrdiff_t>(n_val), train.end());

  ridge::CvConfig cv = models[0].meta.cv;
  cv.workers = o.common.workers;
  const Eigen::MatrixXd Y_fit = pipeline::responses_for(m, fit_stories);
  const Eigen::MatrixXd Y_val = pipeline::responses_for(m, val_stories);
  std::vector<Eigen::MatrixXd> X_fit, val_pred;
  for (const auto& md : models)
    X_fit.push_back(pipeline::design_for(m, md.feature_space_id, fit_stories, md.meta.delays_trs));

  const auto lengths = pipeline::response_lengths(m, fit_stories);
  const auto folds = stacker::make_folds(lengths, o.folds, cv.chunk_length_trs);
  const auto held = stacker::heldout_predictions(X_fit, Y_fit, folds, cv);
  const auto R = stacker::residual_covariance(held, Y_fit, o.common.workers);
  const Eigen::MatrixXd alpha = stacker::solve_stack_weights(R, o.common.workers);

  for (std::size_t j = 0; j < k; ++j) {
    ridge::CvConfig cvj = models[j].meta.cv;
    cvj.workers = o.common.workers;
    const auto refit = ridge::fit_ridge(X_fit[j], Y_fit, cvj);
    const Eigen::MatrixXd X_val =
        pipeline::design_for(m, models[j].feature_space_id, val_stories, models[j].meta.delays_trs);
    val_pred.push_back(ridge::predict(refit, X_val));
  }
  stacker::GateConfig gcfg{o.block_trs, o.resamples, o.confidence, o.common.seed, o.common.workers};
  const auto gate = stacker::gate_stacked(stacker::stacked_predict(val_pred, alpha), val_pred[base], Y_val, gcfg,
                                          fit_stories, val_stories);

  // Centre of mass over the non-baseline spaces ordered by layer, or over all.
  std::vector<Eigen::Index> subset;
  for (std::size_t j = 0; j < k; ++j)
    if (o.com_all_spaces || j != base) subset.push_back(static_cast<Eigen::Index>(j));
  std::stable_sort(subset.begin(), subset.end(),
                   [&](auto a, auto b) { return models[a].layer_id < models[b].layer_id; });
  std::string com_csv = "voxel_id,center_of_mass\n";
  Eigen::VectorXd com(alpha.rows());
  for (Eigen::Index v = 0; v < alpha.rows(); ++v) {
    const Eigen::VectorXd a = alpha.row(v).transpose();
    com(v) = stacker::subset_center_of_mass(std::span<const double>(a.data(), a.size()), subset);
    com_csv += std::to_string(v) + "," + fmt(com(v)) + "\n";
  }

  // Final predictions on the test stories from the full-data models.
  const auto tests = story_list(m, StoryRole::test);
  std::vector<Eigen::MatrixXd> final_pred, stacked_pred, base_pred;
  for (const auto& story : tests) {
    std::vector<Eigen::MatrixXd> per_space;
    for (const auto& md : models)
      per_space.push_back(
          ridge::predict(md, pipeline::story_design(m, md.feature_space_id, story, md.meta.delays_trs)));
    stacked_pred.push_back(stacker::stacked_predict(per_space, alpha));
    base_pred.push_back(per_space[base]);
    final_pred.push_back(stacker::gated_predict(stacked_pred.back(), base_pred.back(), gate.gate));
  }
  const auto policy = o.trim.policy();
  const auto ts_final = evaluate(m, final_pred, tests, policy);
  const auto r_final = ridge::score(ts_final.pred, ts_final.actual);
  const auto ts_stacked = evaluate(m, stacked_pred, tests, policy);
  const auto ts_base = evaluate(m, base_pred, tests, policy);
  const auto r_stacked = ridge::score(ts_stacked.pred, ts_stacked.actual);
  const auto r_base = ridge::score(ts_base.pred, ts_base.actual);

  ensure_dir(o.common.out / "predictions");
  write_matrix(alpha, o.common.out / "alpha.vxt");
  std::vector<bool> gate_flags(gate.gate.size());
  for (std::size_t v = 0; v < gate.gate.size(); ++v) gate_flags[v] = gate.gate[v] == stacker::Gate::stacked;
  write_flags(gate_flags, o.common.out / "gate.vxt");
  write_matrix(gate.delta_r, o.common.out / "delta_r.vxt");
  write_matrix(com, o.common.out / "center_of_mass.vxt");
  write_text(o.common.out / "center_of_mass.csv", com_csv);
  for (std::size_t i = 0; i < tests.size(); ++i)
    write_matrix(final_pred[i], o.common.out / "predictions" / (tests[i] + ".vxt"));
  std::string scores = "voxel_id,r_baseline,r_stacked,r_final,gate\n";
  for (Eigen::Index v = 0; v < r_final.r.size(); ++v)
    scores += std::to_string(v) + "," + fmt(r_base.r(v)) + "," + fmt(r_stacked.r(v)) + "," + fmt(r_final.r(v)) + "," +
              (gate_flags[static_cast<std::size_t>(v)] ? "1" : "0") + "\n";
  write_text(o.common.out / "scores.csv", scores);

  json spaces = json::array();
  for (const auto& md : models) spaces.push_back({{"feature_space", md.feature_space_id}, {"layer", md.layer_id}});
  sc.parameters = o.trim.to_json();
  sc.parameters.update({{"baseline", models[base].feature_space_id},
                        {"folds", o.folds},
                        {"validation_fraction", o.validation_fraction},
                        {"block_trs", o.block_trs},
                        {"resamples", o.resamples},
                        {"confidence", o.confidence},
                        {"com_all_spaces", o.com_all_spaces}});
  sc.results = {{"spaces", spaces},
                {"fit_stories", fit_stories},
                {"validation_stories", val_stories},
                {"n_stacked", std::count(gate_flags.begin(), gate_flags.end(), true)},
                {"mean_r_baseline", ridge::mean_cortex_score(r_base)},
                {"mean_r_stacked", ridge::mean_cortex_score(r_stacked)},
                {"mean_r_final", ridge::mean_cortex_score(r_final)}};
  std::cout << sc.results.dump() << '\n';
}

struct CeilingOptions {
  Common common;
  fs::path scores;
};

void do_ceiling(const CeilingOptions& o, Sidecar& sc) {
  const auto m = load_manifest(o.common.manifest);
  sc.inputs = manifest_inputs(m, o.common.manifest);
  std::vector<std::string> stories;
  for (const auto& s : m.story_names(StoryRole::test))
    if (m.test_repeats.contains(s)) stories.push_back(s);
  if (stories.empty()) throw ValidationError("manifest has no test story with repeats");
  const std::size_t n = m.test_repeats.at(stories.front()).size();
  for (const auto& s : stories)
    if (m.test_repeats.at(s).size() != n)
      throw ValidationError("test stories have different repeat counts; cannot pool them");

  // Pool stories along time, repeat by repeat.
  std::vector<Eigen::MatrixXd> repeats(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<Eigen::MatrixXd> parts;
    Eigen::Index rows = 0;
    for (const auto& s : stories) {
      parts.push_back(read_matrix(m.test_repeats.at(s)[r]));
      rows += parts.back().rows();
    }
    repeats[r].resize(rows, static_cast<Eigen::Index>(m.n_voxels));
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      repeats[r].middleRows(at, p.rows()) = p;
      at += p.rows();
    }
  }
  const auto est = ceiling::estimate_ceiling(repeats);
  const auto mask = ceiling::display_mask(est);
  const auto nv = est.cc_max.size();
  ensure_dir(o.common.out);
  Eigen::MatrixXd table(nv, 4);
  table << est.signal_power, est.noise_power, est.cc_max, est.cc_max_clamped;
  write_matrix(table, o.common.out / "ceiling.vxt");
  std::string csv = "voxel_id,signal_power,noise_power,cc_max,cc_max_clamped,no_signal,display\n";
  for (Eigen::Index v = 0; v < nv; ++v) {
    const auto i = static_cast<std::size_t>(v);
    csv += std::to_string(v) + "," + fmt(est.signal_power(v)) + "," + fmt(est.noise_power(v)) + "," +
           fmt(est.cc_max(v)) + "," + fmt(est.cc_max_clamped(v)) + "," + (est.no_signal[i] ? "1" : "0") + "," +
           (mask[i] ? "1" : "0") + "\n";
  }
  write_text(o.common.out / "ceiling.csv", csv);
  sc.parameters = {{"stories", stories}, {"n_repeats", n}};
  sc.results = {{"mean_cc_max", est.cc_max.mean()},
                {"display_fraction", static_cast<double>(std::count(mask.begin(), mask.end(), true)) /
                                         static_cast<double>(nv)}};
  if (!o.scores.empty()) {
    sc.inputs.push_back(o.scores);
    const Eigen::VectorXd cc_abs = read_score_csv(o.scores);
    if (cc_abs.size() != nv)
      throw ValidationError("scores " + o.scores.string() + " cover " + std::to_string(cc_abs.size()) +
                            " voxels, ceiling has " + std::to_string(nv));
    const Eigen::VectorXd norm = ceiling::cc_norm(cc_abs, est);
    write_matrix(norm, o.common.out / "cc_norm.vxt");
    std::string ncsv = "voxel_id,cc_abs,cc_norm\n";
    for (Eigen::Index v = 0; v < nv; ++v) ncsv += std::to_string(v) + "," + fmt(cc_abs(v)) + "," + fmt(norm(v)) + "\n";
    write_text(o.common.out / "cc_norm.csv", ncsv);
    sc.results["mean_cc_norm"] = norm.mean();
  }
  std::cout << sc.results.dump() << '\n';
}

struct ScalingOptions {
  Common common;
  std::vector<fs::path> scores;
  std::vector<double> sizes;
  double log_base = 10.0;
  double voxel_log_base = 2.0;
};

void do_scaling(const ScalingOptions& o, Sidecar& sc) {
  if (o.scores.size() < 2) throw UsageError("scaling needs at least two --scores files");
  if (o.sizes.size() != o.scores.size())
    throw UsageError("--sizes has " + std::to_string(o.sizes.size()) + " values for " +
                     std::to_string(o.scores.size()) + " --scores files");
  std::vector<Eigen::VectorXd> cols;
  for (const auto& p : o.scores) {
    cols.push_back(read_score_csv(p));
    sc.inputs.push_back(p);
    if (cols.back().size() != cols.front().size())
      throw ValidationError("scores " + p.string() + " cover a different number of voxels");
  }
  // Sort by size so the files can be given in any order.
  std::vector<std::size_t> order(o.sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return o.sizes[a] < o.sizes[b]; });
  std::vector<double> sizes, means;
  Eigen::MatrixXd per_voxel(static_cast<Eigen::Index>(order.size()), cols.front().size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    sizes.push_back(o.sizes[order[i]]);
    means.push_back(cols[order[i]].mean());
    per_voxel.row(static_cast<Eigen::Index>(i)) = cols[order[i]].transpose();
  }
  const auto fit_r = scaling::fit_loglinear(sizes, means, o.log_base);
  const auto pct = scaling::percent_change(means);
  const auto fit_pct = scaling::fit_loglinear(sizes, pct, o.log_base);
  const Eigen::VectorXd slopes = scaling::voxelwise_slopes(sizes, per_voxel, o.voxel_log_base);

  ensure_dir(o.common.out);
  auto row = [&](const char* metric, const scaling::ScalingFit& f) {
    return std::string(metric) + "," + fmt(f.slope) + "," + fmt(f.intercept) + "," + fmt(f.pearson_r) + "," +
           (f.degenerate ? "1" : "0") + "," + fmt(o.log_base) + "\n";
  };
  write_text(o.common.out / "fit.csv",
             "metric,slope,intercept,pearson_r,degenerate,log_base\n" + row("mean_r", fit_r) +
                 row("percent_change", fit_pct));
  std::string series = "size,mean_r,percent_change\n";
  for (std::size_t i = 0; i < sizes.size(); ++i) series += fmt(sizes[i]) + "," + fmt(means[i]) + "," + fmt(pct[i]) + "\n";
  write_text(o.common.out / "series.csv", series);
  write_matrix(slopes, o.common.out / "slopes.vxt");
  std::string scsv = "voxel_id,slope\n";
  for (Eigen::Index v = 0; v < slopes.size(); ++v) scsv += std::to_string(v) + "," + fmt(slopes(v)) + "\n";
  write_text(o.common.out / "slopes.csv", scsv);
  sc.parameters = {{"sizes", o.sizes}, {"log_base", o.log_base}, {"voxel_log_base", o.voxel_log_base}};
  sc.results = {{"slope", fit_r.slope},
                {"intercept", fit_r.intercept},
                {"pearson_r", fit_r.pearson_r},
                {"percent_slope", fit_pct.slope}};
  std::cout << sc.results.dump() << '\n';
}

// ---------------------------------------------------------------------------

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Voxelwise encoding-model toolkit", "vem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SimulateOptions sim;
  auto* c_sim = app.add_subcommand("simulate", "Write a synthetic dataset with planted ground truth");
  add_out(c_sim, sim.common);
  add_seed(c_sim, sim.common);
  c_sim->add_option("--preset", sim.preset, "single or two-space")->capture_default_str();
  c_sim->add_option("--config", sim.config, "JSON simulation spec");
  c_sim->add_option("--voxels", sim.voxels, "Number of voxels");
  c_sim->add_option("--train-trs", sim.train_trs, "Training TRs");
  c_sim->add_option("--test-trs", sim.test_trs, "Test TRs");
  c_sim->add_option("--story-trs", sim.story_trs, "TRs per story");
  c_sim->add_option("--features", sim.features, "Features per space");
  c_sim->add_option("--noise-sd", sim.noise_sd, "Noise standard deviation for every voxel");
  c_sim->add_option("--repeats", sim.repeats, "Test repeats");
  c_sim->add_option("--tr", sim.tr, "Repetition time in seconds");
  c_sim->add_option("--delays", sim.delays, "Planted FIR delays")->delimiter(',');

  PlanOptions plan;
  auto* c_plan = app.add_subcommand("plan", "Write a token-context or audio-window plan");
  add_out(c_plan, plan.common);
  c_plan->add_option("--tokens", plan.tokens, "Number of tokens in the story");
  c_plan->add_option("--audio-seconds", plan.audio_seconds, "Audio duration in seconds");
  c_plan->add_option("--max-len", plan.max_len, "Longest token context")->capture_default_str();
  c_plan->add_option("--reset-len", plan.reset_len, "Context kept after a reset")->capture_default_str();
  c_plan->add_option("--window", plan.window, "Audio window in seconds")->capture_default_str();
  c_plan->add_option("--stride", plan.stride, "Audio stride in seconds")->capture_default_str();

  PreprocessOptions pre;
  auto* c_pre = app.add_subcommand("preprocess", "Detrend, trim and z-score responses");
  add_manifest(c_pre, pre.common);
  add_out(c_pre, pre.common);
  add_workers(c_pre, pre.common);
  pre.trim.add(c_pre, false);
  c_pre->add_option("--window-seconds", pre.window_seconds, "Savitzky-Golay window")->capture_default_str();
  c_pre->add_option("--order", pre.order, "Savitzky-Golay polynomial order")->capture_default_str();

  FitOptions fit;
  auto* c_fit = app.add_subcommand("fit", "Fit ridge encoding models per feature space");
  add_manifest(c_fit, fit.common);
  add_out(c_fit, fit.common);
  add_seed(c_fit, fit.common);
  add_workers(c_fit, fit.common);
  fit.cv.add(c_fit);
  c_fit->add_option("--space", fit.spaces, "Feature space to fit (repeatable; default all)");
  c_fit->add_option("--train-stories", fit.train_stories, "Fit on a seeded nested subset of this many stories");

  ScoreOptions score;
  auto* c_score = app.add_subcommand("score", "Score fitted models on the test stories");
  add_manifest(c_score, score.common);
  add_out(c_score, score.common);
  add_workers(c_score, score.common);
  score.trim.add(c_score, true);
  c_score->add_option("--model", score.models, "Model directory written by fit (repeatable)")->required();

  StackOptions stack;
  auto* c_stack = app.add_subcommand("stack", "Stack per-space models with simplex weights and gate them");
  add_manifest(c_stack, stack.common);
  add_out(c_stack, stack.common);
  add_seed(c_stack, stack.common);
  add_workers(c_stack, stack.common);
  stack.trim.add(c_stack, true);
  c_stack->add_option("--model", stack.models, "Model directory written by fit (repeatable)")->required();
  c_stack->add_option("--baseline", stack.baseline, "Feature space used where stacking does not help");
  c_stack->add_option("--folds", stack.folds, "Held-out folds")->capture_default_str();
  c_stack->add_option("--validation-fraction", stack.validation_fraction, "Training stories kept for the gate")
      ->capture_default_str();
  c_stack->add_option("--block-trs", stack.block_trs, "Gate bootstrap block length")->capture_default_str();
  c_stack->add_option("--resamples", stack.resamples, "Gate bootstrap resamples")->capture_default_str();
  c_stack->add_option("--confidence", stack.confidence, "Gate confidence")->capture_default_str();
  c_stack->add_flag("--com-all-spaces", stack.com_all_spaces, "Centre of mass over every space");

  CeilingOptions ceil;
  auto* c_ceil = app.add_subcommand("ceiling", "Estimate noise ceilings from test repeats");
  add_manifest(c_ceil, ceil.common);
  add_out(c_ceil, ceil.common);
  c_ceil->add_option("--scores", ceil.scores, "scores.csv to normalise");

  ScalingOptions scal;
  auto* c_scal = app.add_subcommand("scaling", "Fit log-linear scaling curves to score files");
  add_out(c_scal, scal.common);
  c_scal->add_option("--scores", scal.scores, "scores.csv per size (repeatable)")->required();
  c_scal->add_option("--sizes", scal.sizes, "Comma-separated sizes, one per scores file")->delimiter(',')->required();
  c_scal->add_option("--log-base", scal.log_base, "Base for the aggregate fit")->capture_default_str();
  c_scal->add_option("--voxel-log-base", scal.voxel_log_base, "Base for voxelwise slopes")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  Sidecar sc;
  sc.args = args;
  fs::path out;
  if (c_sim->parsed()) {
    sc.subcommand = "simulate";
    do_simulate(sim, c_sim, sc);
    out = sim.common.out;
  } else if (c_plan->parsed()) {
    sc.subcommand = "plan";
    do_plan(plan, sc);
    out = plan.common.out;
  } else if (c_pre->parsed()) {
    sc.subcommand = "preprocess";
    do_preprocess(pre, sc);
    out = pre.common.out;
  } else if (c_fit->parsed()) {
    sc.subcommand = "fit";
    do_fit(fit, sc);
    out = fit.common.out;
    sc.parameters["seed"] = fit.common.seed;
  } else if (c_score->parsed()) {
    sc.subcommand = "score";
    do_score(score, sc);
    out = score.common.out;
  } else if (c_stack->parsed()) {
    sc.subcommand = "stack";
    do_stack(stack, sc);
    out = stack.common.out;
    sc.parameters["seed"] = stack.common.seed;
  } else if (c_ceil->parsed()) {
    sc.subcommand = "ceiling";
    do_ceiling(ceil, sc);
    out = ceil.common.out;
  } else {
    sc.subcommand = "scaling";
    do_scaling(scal, sc);
    out = scal.common.out;
  }
  if (!sc.parameters.contains("seed")) sc.parameters["seed"] = sc.subcommand == "simulate" ? sim.common.seed : 0;
  ensure_dir(out);
  sc.write(out);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return dispatch(args);
  } catch (const Error& e) {
    const bool compute = e.kind() == ErrorKind::compute;
    return fail(to_string(e.kind()), e.what(), compute ? 1 : 2);
  } catch (const std::invalid_argument& e) {
    return fail("validation", e.what(), 2);
  } catch (const std::bad_alloc&) {
    return fail("compute", "out of memory", 1);
  } catch (const std::exception& e) {
    return fail("compute", e.what(), 1);
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace vem::cli
