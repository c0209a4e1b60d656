#include "test_util.hpp"

#include "vem/cli.hpp"
#include "vem/tensor.hpp"

#include <doctest.h>

#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

using nlohmann::json;
using vem::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = vem::cli::run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

json error_json(const Result& r) {
  const auto first = r.err.substr(0, r.err.find('\n'));
  return json::parse(first);
}

std::string simulate(const TempDir& dir, const std::string& name, std::map<std::string, std::string> extra = {}) {
  std::map<std::string, std::string> opts{{"--voxels", "12"}, {"--train-trs", "400"}, {"--test-trs", "200"},
                                          {"--story-trs", "100"}, {"--features", "6"}, {"--seed", "3"}};
  for (const auto& [k, v] : extra) opts[k] = v;
  std::vector<std::string> args{"simulate", "--out", (dir / name).string()};
  for (const auto& [k, v] : opts) {
    args.push_back(k);
    args.push_back(v);
  }
  const auto r = run(args);
  REQUIRE(r.code == 0);
  return json::parse(r.out)["manifest"];
}

}  // namespace

TEST_CASE("version flag") {
  const auto r = run({"--version"});
  CHECK(r.code == 0);
  CHECK(r.out.find(vem::cli::kVersion) != std::string::npos);
}

TEST_CASE("usage errors exit 2 with a JSON message") {
  for (const std::vector<std::string>& args : std::vector<std::vector<std::string>>{
           {}, {"frobnicate"}, {"fit", "--manifest", "m.json"}, {"fit", "--manifest", "m.json", "--out", "o", "--bogus"}}) {
    const auto r = run(args);
    CHECK(r.code == 2);
    CHECK(error_json(r)["error"] == "usage");
  }
}

TEST_CASE("missing manifest is an io error") {
  TempDir dir("cli");
  const auto r = run({"fit", "--manifest", (dir / "nope.json").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  const auto e = error_json(r);
  CHECK(e["error"] == "io");
  CHECK(e["message"].get<std::string>().find("nope.json") != std::string::npos);
}

TEST_CASE("invalid simulation spec exits 2") {
  TempDir dir("cli");
  const auto r = run({"simulate", "--out", (dir / "d").string(), "--repeats", "1"});
  CHECK(r.code == 2);
}

TEST_CASE("token plan") {
  TempDir dir("cli");
  const auto r = run({"plan", "--tokens", "600", "--out", dir.path().string()});
  REQUIRE(r.code == 0);
  const auto lines = lines_of(dir / "plan.csv");
  CHECK(lines.size() == 601);
  CHECK(run({"plan", "--tokens", "10", "--audio-seconds", "3", "--out", dir.path().string()}).code == 2);
  CHECK(run({"plan", "--out", dir.path().string()}).code == 2);
}

TEST_CASE("noiseless simulate, fit and score recover the planted model") {
  TempDir dir("cli");
  const auto manifest = simulate(dir, "data", {{"--noise-sd", "0"}});
  const auto models = (dir / "models").string();
  REQUIRE(run({"fit", "--manifest", manifest, "--out", models, "--bootstraps", "3", "--alphas", "0.01,1,100"}).code == 0);
  CHECK(std::filesystem::exists(dir / "models" / "semantic" / "weights.vxt"));
  const auto r = run({"score", "--manifest", manifest, "--model", models + "/semantic", "--out", (dir / "scores").string()});
  REQUIRE(r.code == 0);
  const auto summary = lines_of(dir / "scores" / "summary.csv");
  REQUIRE(summary.size() == 2);
  CHECK(summary[0] == "feature_space,layer,mean_r");
  CHECK(std::stod(summary[1].substr(summary[1].rfind(',') + 1)) > 0.99);
  const auto scores = lines_of(dir / "scores" / "semantic" / "scores.csv");
  CHECK(scores.size() == 13);

  const auto run_json = json::parse(std::ifstream(dir / "scores" / "run.json"));
  CHECK(run_json["tool"] == "vem");
  CHECK(run_json["subcommand"] == "score");
  CHECK(run_json["inputs"].size() > 2);
  CHECK(run_json["inputs"][0]["sha256"].get<std::string>().size() == 64);
  CHECK(run_json["inputs_hash"].get<std::string>().size() == 64);
  CHECK(run_json["versions"]["vem"] == vem::cli::kVersion);
  CHECK(run_json["results"]["best_layer"] == 0);
}

TEST_CASE("preprocess writes trimmed responses and a new manifest") {
  TempDir dir("cli");
  const auto manifest = simulate(dir, "data", {{"--train-trs", "600"}, {"--story-trs", "200"}});
  const auto r = run({"preprocess", "--manifest", manifest, "--out", (dir / "pre").string()});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(std::ifstream(dir / "pre" / "manifest.json"));
  for (const auto& s : doc["stories"]) {
    CHECK(s["trim_leading"] == (s["role"] == "test" ? 50 : 10));
    CHECK(s["trim_trailing"] == 10);
  }
  const Eigen::MatrixXd y = vem::read_matrix(dir / "pre" / "responses" / "train_00.vxt");
  CHECK(y.rows() == 180);
  CHECK(std::abs(y.col(0).mean()) < 1e-6);
  const auto models = (dir / "models").string();
  CHECK(run({"fit", "--manifest", (dir / "pre" / "manifest.json").string(), "--out", models, "--bootstraps", "2"}).code == 0);
}

TEST_CASE("stack, ceiling and scaling on a two-space dataset") {
  TempDir dir("cli");
  const auto manifest = simulate(dir, "data", {{"--preset", "two-space"}, {"--noise-sd", "0.5"}, {"--train-trs", "600"}});
  const auto models = dir / "models";
  REQUIRE(run({"fit", "--manifest", manifest, "--out", models.string(), "--bootstraps", "2"}).code == 0);
  const auto r = run({"stack", "--manifest", manifest, "--model", (models / "semantic").string(), "--model",
                      (models / "audio").string(), "--out", (dir / "stack").string(), "--resamples", "200"});
  REQUIRE(r.code == 0);
  const Eigen::MatrixXd alpha = vem::read_matrix(dir / "stack" / "alpha.vxt");
  CHECK(alpha.rows() == 12);
  CHECK(alpha.cols() == 2);
  CHECK((alpha.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
  CHECK(alpha.minCoeff() >= -1e-12);
  CHECK(lines_of(dir / "stack" / "scores.csv").size() == 13);

  REQUIRE(run({"score", "--manifest", manifest, "--model", (models / "semantic").string(), "--out",
               (dir / "scores").string()}).code == 0);
  const auto c = run({"ceiling", "--manifest", manifest, "--out", (dir / "ceiling").string(), "--scores",
                      (dir / "scores" / "semantic" / "scores.csv").string()});
  REQUIRE(c.code == 0);
  CHECK(lines_of(dir / "ceiling" / "ceiling.csv").size() == 13);
  CHECK(lines_of(dir / "ceiling" / "cc_norm.csv").size() == 13);

  const auto s = (dir / "scores" / "semantic" / "scores.csv").string();
  const auto sc = run({"scaling", "--scores", s, "--scores", s, "--sizes", "1,1",
                       "--out", (dir / "scaling").string()});
  CHECK(sc.code == 2);
  CHECK(run({"scaling", "--scores", s, "--scores", s, "--sizes", "1,2", "--out", (dir / "scaling").string()}).code == 0);
  CHECK(lines_of(dir / "scaling" / "fit.csv").size() == 3);
}
