#include "vem/manifest.hpp"

#include "vem/error.hpp"
#include "vem/tensor.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>

namespace vem {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string relative_to(const fs::path& base, const fs::path& p) {
  const fs::path abs = fs::absolute(p).lexically_normal();
  auto rel = abs.lexically_relative(base.lexically_normal());
  if (rel.empty() || *rel.begin() == "..") return abs.generic_string();
  return rel.generic_string();
}

template <class T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError("manifest: missing field '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError("manifest: field '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

TensorHeader header_or_throw(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ValidationError("manifest: missing file reference " + p.string() + " (" + what + ")");
  return read_tensor_header(p);
}

StoryRole parse_role(const std::string& s) {
  if (s == "train") return StoryRole::train;
  if (s == "test") return StoryRole::test;
  throw FormatError("manifest: unknown story role '" + s + "'");
}

}  // namespace

const char* to_string(StoryRole r) { return r == StoryRole::train ? "train" : "test"; }

const StoryEntry& DatasetManifest::story(const std::string& name) const {
  for (const auto& s : stories)
    if (s.name == name) return s;
  throw ValidationError("manifest: unknown story '" + name + "'");
}

std::vector<std::string> DatasetManifest::story_names(StoryRole role) const {
  std::vector<std::string> out;
  for (const auto& s : stories)
    if (s.role == role) out.push_back(s.name);
  return out;
}

std::size_t DatasetManifest::feature_width(const std::string& space) const {
  auto it = feature_spaces.find(space);
  if (it == feature_spaces.end()) throw ValidationError("manifest: unknown feature space '" + space + "'");
  const auto& src = it->second.stories.begin()->second;
  return read_tensor_header(src.values).shape.at(1);
}

void validate_manifest(DatasetManifest& m) {
  if (!(m.tr_seconds > 0.0) || !std::isfinite(m.tr_seconds))
    throw ValidationError("manifest: tr_seconds must be positive");
  if (m.stories.empty()) throw ValidationError("manifest: no stories");

  std::set<std::string> names;
  for (const auto& s : m.stories) {
    if (s.name.empty()) throw ValidationError("manifest: story with empty name");
    if (!names.insert(s.name).second) throw ValidationError("manifest: duplicate story '" + s.name + "'");
    if (!(s.duration_seconds > 0.0)) throw ValidationError("manifest: story '" + s.name + "' has non-positive duration");
    if (s.n_trs == 0) throw ValidationError("manifest: story '" + s.name + "' has zero TRs");
    if (std::abs(static_cast<double>(s.n_trs) - s.duration_seconds / m.tr_seconds) > 1.0)
      throw ValidationError("manifest: story '" + s.name + "' n_trs " + std::to_string(s.n_trs) +
                            " inconsistent with duration / tr_seconds");
    if (s.trim_leading + s.trim_trailing >= s.n_trs)
      throw ValidationError("manifest: story '" + s.name + "' trims away every volume");
  }

  std::size_t voxels = 0;
  std::string first_story;
  auto check_voxels = [&](const std::string& story, const TensorHeader& h, const fs::path& p) {
    if (h.shape.size() != 2) throw ValidationError("manifest: " + p.string() + " must be 2-d (time x voxels)");
    if (voxels == 0) {
      voxels = h.shape[1];
      first_story = story;
    } else if (h.shape[1] != voxels) {
      throw ValidationError("manifest: voxel-count mismatch in story '" + story + "' (" +
                            std::to_string(h.shape[1]) + " voxels, story '" + first_story + "' has " +
                            std::to_string(voxels) + ")");
    }
  };

  for (const auto& s : m.stories) {
    auto it = m.responses.find(s.name);
    if (it == m.responses.end()) throw ValidationError("manifest: no responses for story '" + s.name + "'");
    const auto h = header_or_throw(it->second, "responses of " + s.name);
    check_voxels(s.name, h, it->second);
    if (h.shape[0] != s.response_rows())
      throw ValidationError("manifest: responses of story '" + s.name + "' have " + std::to_string(h.shape[0]) +
                            " rows, expected " + std::to_string(s.response_rows()));
  }
  for (const auto& [name, _] : m.responses)
    if (!names.contains(name)) throw ValidationError("manifest: responses for unknown story '" + name + "'");

  for (const auto& [name, repeats] : m.test_repeats) {
    if (!names.contains(name)) throw ValidationError("manifest: repeats for unknown story '" + name + "'");
    const auto& s = m.story(name);
    if (s.role != StoryRole::test) throw ValidationError("manifest: repeats listed for training story '" + name + "'");
    if (repeats.size() < 2)
      throw ValidationError("manifest: test story '" + name + "' needs at least 2 repeats, has " +
                            std::to_string(repeats.size()));
    for (const auto& p : repeats) {
      const auto h = header_or_throw(p, "repeat of " + name);
      check_voxels(name, h, p);
      if (h.shape[0] != s.response_rows())
        throw ValidationError("manifest: repeat " + p.string() + " has " + std::to_string(h.shape[0]) +
                              " rows, expected " + std::to_string(s.response_rows()));
    }
  }
  m.n_voxels = voxels;

  for (const auto& [space, entry] : m.feature_spaces) {
    std::size_t width = 0;
    for (const auto& s : m.stories) {
      auto it = entry.stories.find(s.name);
      if (it == entry.stories.end())
        throw ValidationError("manifest: feature space '" + space + "' has no features for story '" + s.name + "'");
      const auto vh = header_or_throw(it->second.values, space + " features of " + s.name);
      if (vh.shape.size() != 2) throw ValidationError("manifest: " + it->second.values.string() + " must be 2-d");
      if (width == 0) width = vh.shape[1];
      if (vh.shape[1] != width)
        throw ValidationError("manifest: feature space '" + space + "' width changes in story '" + s.name + "'");
      header_or_throw(it->second.timestamps, space + " timestamps of " + s.name);
      const auto ts = read_tensor(it->second.timestamps);
      if (ts.ndim() != 1 || ts.shape[0] != vh.shape[0])
        throw ValidationError("manifest: timestamps of '" + space + "'/'" + s.name + "' do not match " +
                              std::to_string(vh.shape[0]) + " items");
      for (std::size_t i = 1; i < ts.values.size(); ++i)
        if (!(ts.values[i] > ts.values[i - 1]))
          throw ValidationError("manifest: non-monotone timestamps in '" + space + "'/'" + s.name + "' at item " +
                                std::to_string(i));
    }
    for (const auto& [story, _] : entry.stories)
      if (!names.contains(story))
        throw ValidationError("manifest: feature space '" + space + "' references unknown story '" + story + "'");
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(path).parent_path();

  DatasetManifest m;
  try {
    m.subject_id = required<std::string>(doc, "subject_id", "manifest");
    m.tr_seconds = required<double>(doc, "tr_seconds", "manifest");
    for (const auto& js : required<json>(doc, "stories", "manifest")) {
      StoryEntry s;
      s.name = required<std::string>(js, "name", "story");
      s.duration_seconds = required<double>(js, "duration_seconds", "story " + s.name);
      s.n_trs = required<std::size_t>(js, "n_trs", "story " + s.name);
      s.role = parse_role(required<std::string>(js, "role", "story " + s.name));
      s.trim_leading = js.value("trim_leading", std::size_t{0});
      s.trim_trailing = js.value("trim_trailing", std::size_t{0});
      m.stories.push_back(std::move(s));
    }
    const auto spaces = required<json>(doc, "feature_spaces", "manifest");
    for (const auto& [name, jspace] : spaces.items()) {
      FeatureSpaceEntry e;
      e.layer = jspace.value("layer", 0);
      const auto sources = required<json>(jspace, "stories", "feature space " + name);
      for (const auto& [story, jsrc] : sources.items()) {
        e.stories[story] = FeatureSource{
            resolve(base, required<std::string>(jsrc, "values", name + "/" + story)),
            resolve(base, required<std::string>(jsrc, "timestamps", name + "/" + story))};
      }
      m.feature_spaces.emplace(name, std::move(e));
    }
    const auto responses = required<json>(doc, "responses", "manifest");
    for (const auto& [story, p] : responses.items()) m.responses[story] = resolve(base, p.get<std::string>());
    if (doc.contains("test_repeats")) {
      for (const auto& [story, list] : doc["test_repeats"].items())
        for (const auto& p : list) m.test_repeats[story].push_back(resolve(base, p.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }

  validate_manifest(m);
  return m;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  json doc;
  doc["subject_id"] = m.subject_id;
  doc["tr_seconds"] = m.tr_seconds;
  doc["stories"] = json::array();
  for (const auto& s : m.stories) {
    json js{{"name", s.name},
            {"duration_seconds", s.duration_seconds},
            {"n_trs", s.n_trs},
            {"role", to_string(s.role)}};
    if (s.trim_leading) js["trim_leading"] = s.trim_leading;
    if (s.trim_trailing) js["trim_trailing"] = s.trim_trailing;
    doc["stories"].push_back(std::move(js));
  }
  doc["feature_spaces"] = json::object();
  for (const auto& [name, e] : m.feature_spaces) {
    json jspace{{"layer", e.layer}, {"stories", json::object()}};
    for (const auto& [story, src] : e.stories)
      jspace["stories"][story] = {{"values", relative_to(base, src.values)},
                                  {"timestamps", relative_to(base, src.timestamps)}};
    doc["feature_spaces"][name] = std::move(jspace);
  }
  doc["responses"] = json::object();
  for (const auto& [story, p] : m.responses) doc["responses"][story] = relative_to(base, p);
  doc["test_repeats"] = json::object();
  for (const auto& [story, list] : m.test_repeats) {
    json arr = json::array();
    for (const auto& p : list) arr.push_back(relative_to(base, p));
    doc["test_repeats"][story] = std::move(arr);
  }

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace vem
