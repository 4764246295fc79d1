#pragma once

#include <string>
#include <vector>

#include "lgom/reconstruct.hpp"
#include "lgom/synth.hpp"

namespace lgom {

/// Scene manifest: file paths (relative to the manifest) for each view.
/// The *_exact entries point at f32 tensor-container sidecars; loaders prefer
/// them over the 8-bit PNGs when present.
struct ManifestEntry {
  std::string image;
  std::string image_exact;
  std::string mask;
  std::string mask_exact;
  std::string camera;
  std::string pose;
};

struct SceneManifest {
  std::string subject;
  std::string rig;
  std::vector<ManifestEntry> sources;
  std::vector<ManifestEntry> targets;
};

void save_scene_manifest(const std::string& path, const SceneManifest& manifest);
SceneManifest load_scene_manifest(const std::string& path);

struct LoadedScene {
  std::string subject;
  Rig rig;
  SourceSet sources;
  SourceSet targets;
};

/// Loads every referenced file; missing files raise with the offending path.
LoadedScene load_scene(const std::string& manifest_path);

struct GenDataConfig {
  uint64_t seed_start = 0;
  int subjects = 2;
  int views = 4;    // source views per subject
  int targets = 1;  // optional target views per subject
  int resolution = 64;
  double pose_magnitude = 0.3;
  std::string out_dir;
};

/// Writes subjects, reference renders and manifests. Idempotent: same
/// arguments produce identical bytes.
void generate_dataset(const GenDataConfig& cfg);

}  // namespace lgom
