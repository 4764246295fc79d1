#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lgom/camera.hpp"
#include "lgom/container.hpp"
#include "lgom/formats.hpp"
#include "lgom/image.hpp"
#include "lgom/rng.hpp"

using namespace lgom;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("container round trip is bitwise") {
  TensorContainer tc;
  Rng rng(1);
  std::vector<float> f(37);
  for (auto& v : f) v = float(rng.normal());
  std::vector<int32_t> idx(11);
  for (auto& v : idx) v = int32_t(rng.uniform_int(1000) - 500);
  tc.add_f32("floats", {37}, f);
  tc.add_i32("ints", {11}, idx);

  const auto bytes = tc.serialize();
  const TensorContainer back = TensorContainer::deserialize(bytes);
  CHECK_EQ(back.at("floats").f32, f);
  CHECK_EQ(back.at("ints").i32, idx);
  CHECK_EQ(back.serialize(), bytes);
}

TEST_CASE("container header invariants") {
  TensorContainer tc;
  tc.add_f32("a", {2, 2}, {1, 2, 3, 4});
  const auto bytes = tc.serialize();
  CHECK_EQ(bytes[0], 'L');
  CHECK_EQ(bytes[1], 'G');
  CHECK_EQ(bytes[2], 'O');
  CHECK_EQ(bytes[3], 'M');
  // Payload is 64-byte aligned.
  uint32_t mlen = 0;
  std::memcpy(&mlen, bytes.data() + 8, 4);
  const size_t payload = ((12 + size_t(mlen)) + 63) & ~size_t(63);
  CHECK_EQ(payload % 64, 0);
  float first = 0;
  std::memcpy(&first, bytes.data() + payload, 4);
  CHECK_EQ(first, 1.0f);
}

TEST_CASE("container rejects duplicates and bad shapes") {
  TensorContainer tc;
  tc.add_f32("x", {2}, {1, 2});
  CHECK_THROWS_AS(tc.add_f32("y", {3}, {1, 2}), std::runtime_error);
  tc.add_f32("x", {2}, {3, 4});
  CHECK_THROWS_AS(tc.serialize(), std::runtime_error);
}

TEST_CASE("png round trip quantizes through sRGB") {
  TempDir dir("lgom_test_png");
  Image img(9, 7, 3);
  Rng rng(2);
  for (auto& v : img.data) v = rng.uniform();
  const std::string path = (dir.path / "img.png").string();
  write_png(path, img);
  const Image back = read_png(path);
  REQUIRE_EQ(back.height, 9);
  REQUIRE_EQ(back.width, 7);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK_LT(std::abs(back.data[i] - img.data[i]), 0.01);

  // Exact sidecar preserves f32 values.
  const std::string exact = (dir.path / "img.lgom").string();
  write_image_container(exact, img);
  const Image exact_back = read_image_container(exact);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK_EQ(exact_back.data[i], double(float(img.data[i])));
}

TEST_CASE("camera json round trip and golden projection") {
  TempDir dir("lgom_test_cam");
  const CameraModel cam = make_lookat_camera(Vec3(0, 0, -4), Vec3::Zero(),
                                             Vec3(0, 1, 0), 128.0, 96, 80);
  const std::string path = (dir.path / "camera.json").string();
  save_camera_json(path, cam);
  const CameraModel back = load_camera_json(path);
  CHECK_LT((back.K - cam.K).norm(), 1e-12);
  CHECK_LT((back.E - cam.E).norm(), 1e-12);

  // Golden pin of the convention: world-to-camera E, +z forward, pixel-center
  // origin top-left. The world origin sits 4m ahead on the axis, so it lands
  // on the principal point.
  const Vec3 m = back.to_camera(Vec3::Zero());
  CHECK_EQ(m.z(), doctest::Approx(4.0));
  const Vec2 uv = back.project_camera_point(m);
  CHECK_EQ(uv.x(), doctest::Approx((96 - 1) * 0.5));
  CHECK_EQ(uv.y(), doctest::Approx((80 - 1) * 0.5));
  // A point 1m right of the target (world +x) moves left in the image for a
  // camera looking along +z from -z ... pin the exact pixel.
  const Vec2 uv_x = back.project_camera_point(back.to_camera(Vec3(1, 0, 0)));
  CHECK_EQ(uv_x.x(), doctest::Approx((96 - 1) * 0.5 - 128.0 / 4.0));
  CHECK_EQ(uv_x.y(), doctest::Approx((80 - 1) * 0.5));
}

TEST_CASE("gen-data writes the promised files and is idempotent") {
  TempDir dir("lgom_test_dataset");
  GenDataConfig cfg;
  cfg.seed_start = 3;
  cfg.subjects = 2;
  cfg.views = 4;
  cfg.targets = 0;
  cfg.resolution = 24;
  cfg.out_dir = dir.path.string();
  generate_dataset(cfg);

  int images = 0, masks = 0, manifests = 0;
  for (const auto& subject : fs::directory_iterator(dir.path)) {
    if (!subject.is_directory()) continue;
    for (const auto& file : fs::directory_iterator(subject)) {
      const std::string name = file.path().filename().string();
      if (name.find("_mask.png") != std::string::npos)
        ++masks;
      else if (name.size() > 4 && name.substr(name.size() - 4) == ".png")
        ++images;
      else if (name == "manifest.json")
        ++manifests;
    }
  }
  CHECK_EQ(images, 8);
  CHECK_EQ(masks, 8);
  CHECK_EQ(manifests, 2);

  // Idempotency: rerunning produces identical bytes.
  const std::string probe =
      (dir.path / "subject_3" / "source_0.png").string();
  const std::string before = read_bytes(probe);
  generate_dataset(cfg);
  CHECK_EQ(read_bytes(probe), before);

  // The manifest loads back with every file present.
  const LoadedScene scene =
      load_scene((dir.path / "subject_3" / "manifest.json").string());
  CHECK_EQ(scene.sources.size(), 4);
  CHECK_EQ(scene.sources[0].image.height, 24);
  CHECK_EQ(scene.rig.joint_count(), 9);
}

TEST_CASE("gen-data rejects a zero resolution before any I/O") {
  GenDataConfig cfg;
  cfg.resolution = 0;
  cfg.out_dir = "should_not_exist_dir";
  CHECK_THROWS_AS(generate_dataset(cfg), std::invalid_argument);
  CHECK_FALSE(fs::exists("should_not_exist_dir"));
}

TEST_CASE("scene loading names the missing file") {
  TempDir dir("lgom_test_missing");
  SceneManifest manifest;
  manifest.subject = "s";
  manifest.rig = "rig.json";
  ManifestEntry e;
  e.image = "nope.png";
  e.mask = "nope_mask.png";
  e.camera = "cam.json";
  e.pose = "pose.json";
  manifest.sources.push_back(e);
  const std::string path = (dir.path / "manifest.json").string();
  save_scene_manifest(path, manifest);
  CHECK_THROWS_WITH_AS(load_scene(path), doctest::Contains("rig.json"),
                       std::runtime_error);
}
