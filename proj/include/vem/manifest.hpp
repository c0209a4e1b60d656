#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vem {

enum class StoryRole { train, test };

struct StoryEntry {
  std::string name;
  double duration_seconds = 0.0;
  std::size_t n_trs = 0;
  StoryRole role = StoryRole::train;
  // Volumes already removed from the stored responses, counted from story
  // onset and from the end. Features always span all n_trs.
  std::size_t trim_leading = 0;
  std::size_t trim_trailing = 0;

  std::size_t response_rows() const { return n_trs - trim_leading - trim_trailing; }
};

struct FeatureSource {
  std::filesystem::path values;      // items x features
  std::filesystem::path timestamps;  // items, seconds from story onset
};

struct FeatureSpaceEntry {
  int layer = 0;
  std::map<std::string, FeatureSource> stories;
};

/// Everything a pipeline run needs to locate its tensors.
///
/// Paths are absolute after loading; relative paths in the document are
/// resolved against the manifest's directory.
struct DatasetManifest {
  std::string subject_id;
  double tr_seconds = 2.0;
  std::vector<StoryEntry> stories;
  std::map<std::string, FeatureSpaceEntry> feature_spaces;
  std::map<std::string, std::filesystem::path> responses;
  std::map<std::string, std::vector<std::filesystem::path>> test_repeats;

  // Filled in by validation.
  std::size_t n_voxels = 0;

  const StoryEntry& story(const std::string& name) const;
  std::vector<std::string> story_names(StoryRole role) const;
  std::size_t feature_width(const std::string& space) const;
};

/// Parses and fully validates a manifest document; throws on the first
/// violated invariant so that no partially valid manifest escapes.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Validates an in-memory manifest (all paths must already be resolvable).
void validate_manifest(DatasetManifest& m);

/// Writes the manifest with paths relative to the document's directory when
/// they live underneath it.
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

const char* to_string(StoryRole r);

}  // namespace vem
