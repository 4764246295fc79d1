#include "lgom/formats.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lgom {

namespace fs = std::filesystem;

namespace {

nlohmann::json entry_to_json(const ManifestEntry& e) {
  nlohmann::json j;
  j["image"] = e.image;
  j["mask"] = e.mask;
  j["camera"] = e.camera;
  j["pose"] = e.pose;
  if (!e.image_exact.empty()) j["image_exact"] = e.image_exact;
  if (!e.mask_exact.empty()) j["mask_exact"] = e.mask_exact;
  return j;
}

ManifestEntry entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.image = j.at("image").get<std::string>();
  e.mask = j.at("mask").get<std::string>();
  e.camera = j.at("camera").get<std::string>();
  e.pose = j.at("pose").get<std::string>();
  e.image_exact = j.value("image_exact", std::string());
  e.mask_exact = j.value("mask_exact", std::string());
  return e;
}

std::string resolve(const fs::path& base, const std::string& rel) {
  return (base / rel).string();
}

void require_exists(const std::string& path) {
  if (!fs::exists(path))
    throw std::runtime_error("manifest references missing file: " + path);
}

Image load_image_entry(const fs::path& base, const std::string& png,
                       const std::string& exact) {
  if (!exact.empty()) {
    const std::string p = resolve(base, exact);
    require_exists(p);
    return read_image_container(p);
  }
  const std::string p = resolve(base, png);
  require_exists(p);
  return read_png(p);
}

SourceView load_view(const fs::path& base, const ManifestEntry& e) {
  SourceView view;
  view.image = load_image_entry(base, e.image, e.image_exact);
  view.mask = load_image_entry(base, e.mask, e.mask_exact);
  const std::string cam_path = resolve(base, e.camera);
  require_exists(cam_path);
  view.camera = load_camera_json(cam_path);
  const std::string pose_path = resolve(base, e.pose);
  require_exists(pose_path);
  view.pose = load_pose_json(pose_path);
  return view;
}

}  // namespace

void save_scene_manifest(const std::string& path, const SceneManifest& manifest) {
  nlohmann::json j;
  j["subject"] = manifest.subject;
  j["rig"] = manifest.rig;
  j["sources"] = nlohmann::json::array();
  for (const auto& e : manifest.sources) j["sources"].push_back(entry_to_json(e));
  j["targets"] = nlohmann::json::array();
  for (const auto& e : manifest.targets) j["targets"].push_back(entry_to_json(e));
  std::ofstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot write " + path);
  f << j.dump(2) << "\n";
}

SceneManifest load_scene_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("manifest: cannot open " + path);
  const nlohmann::json j = nlohmann::json::parse(f);
  SceneManifest manifest;
  manifest.subject = j.at("subject").get<std::string>();
  manifest.rig = j.at("rig").get<std::string>();
  for (const auto& e : j.at("sources")) manifest.sources.push_back(entry_from_json(e));
  if (j.contains("targets"))
    for (const auto& e : j["targets"]) manifest.targets.push_back(entry_from_json(e));
  return manifest;
}

LoadedScene load_scene(const std::string& manifest_path) {
  const SceneManifest manifest = load_scene_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  LoadedScene scene;
  scene.subject = manifest.subject;
  const std::string rig_path = resolve(base, manifest.rig);
  require_exists(rig_path);
  scene.rig = load_rig_json(rig_path);
  for (const auto& e : manifest.sources) scene.sources.push_back(load_view(base, e));
  for (const auto& e : manifest.targets) scene.targets.push_back(load_view(base, e));
  return scene;
}

void generate_dataset(const GenDataConfig& cfg) {
  if (cfg.resolution <= 0)
    throw std::invalid_argument("gen-data: resolution must be positive");
  if (cfg.subjects <= 0 || cfg.views <= 0)
    throw std::invalid_argument("gen-data: subjects and views must be positive");
  fs::create_directories(cfg.out_dir);

  for (int s = 0; s < cfg.subjects; ++s) {
    const uint64_t seed = cfg.seed_start + uint64_t(s);
    const SyntheticSubject subject = make_synthetic_subject(seed);
    const std::string name = "subject_" + std::to_string(seed);
    const fs::path dir = fs::path(cfg.out_dir) / name;
    fs::create_directories(dir);

    save_rig_json((dir / "rig.json").string(), subject.rig);

    SceneManifest manifest;
    manifest.subject = name;
    manifest.rig = "rig.json";

    Rng rng = named_stream(seed, "dataset-views");
    const double base_azimuth = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const int total = cfg.views + cfg.targets;
    for (int v = 0; v < total; ++v) {
      const bool is_target = v >= cfg.views;
      const double azimuth = base_azimuth +
                             (2.0 * 3.14159265358979323846 * v) / total +
                             rng.uniform(-0.2, 0.2);
      const CameraModel camera =
          subject_camera(subject, azimuth, rng.uniform(-0.15, 0.25),
                         cfg.resolution, cfg.resolution);
      const Pose pose = sample_pose(subject, rng, cfg.pose_magnitude);
      Image image, mask;
      render_reference(subject, pose, camera, image, mask);

      const std::string stem =
          (is_target ? "target_" : "source_") +
          std::to_string(is_target ? v - cfg.views : v);
      ManifestEntry entry;
      entry.image = stem + ".png";
      entry.image_exact = stem + ".lgom";
      entry.mask = stem + "_mask.png";
      entry.mask_exact = stem + "_mask.lgom";
      entry.camera = stem + "_camera.json";
      entry.pose = stem + "_pose.json";
      write_png((dir / entry.image).string(), image);
      write_image_container((dir / entry.image_exact).string(), image);
      write_png((dir / entry.mask).string(), mask);
      write_image_container((dir / entry.mask_exact).string(), mask);
      save_camera_json((dir / entry.camera).string(), camera);
      save_pose_json((dir / entry.pose).string(), pose);
      (is_target ? manifest.targets : manifest.sources).push_back(entry);
    }
    save_scene_manifest((dir / "manifest.json").string(), manifest);
  }
}

}  // namespace lgom
