// Command-line surface for the Gaussians-on-Mesh avatar toolkit.
//
// Subcommands: gen-data, train, reconstruct, render, animate, eval, bench.
// Every command is a deterministic wrapper over library operations; errors
// exit nonzero with a single "error: ..." line on stderr.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lgom/container.hpp"
#include "lgom/formats.hpp"
#include "lgom/parallel.hpp"
#include "lgom/reconstruct.hpp"
#include "lgom/rng.hpp"
#include "lgom/splat.hpp"
#include "lgom/train.hpp"

namespace {

using namespace lgom;

int cmd_gen_data(const GenDataConfig& cfg) {
  generate_dataset(cfg);
  std::printf("wrote %d subjects to %s\n", cfg.subjects, cfg.out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& checkpoint,
              const std::string& metrics_csv) {
  const TrainConfig cfg = load_train_config(config_path);
  const TrainResult result = train(cfg);
  result.params.save(checkpoint);
  if (!metrics_csv.empty()) {
    std::ofstream f(metrics_csv);
    f << "iteration,loss\n";
    for (size_t i = 0; i < result.loss_curve.size(); ++i)
      f << i << "," << result.loss_curve[i] << "\n";
  }
  std::printf("checkpoint written to %s\n", checkpoint.c_str());
  return 0;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& manifest,
                    int steps, int subdivision, const std::string& out,
                    const std::string& report) {
  const ParamStore params = ParamStore::load(checkpoint);
  const LoadedScene scene = load_scene(manifest);
  ReconConfig cfg;
  cfg.steps = steps;
  cfg.subdivision = subdivision;
  cfg.sources = infer_sources_from_params(params);
  if (int(scene.sources.size()) != cfg.sources)
    throw std::runtime_error(
        "manifest provides " + std::to_string(scene.sources.size()) +
        " sources but the checkpoint expects " + std::to_string(cfg.sources));
  const ReconResult result =
      reconstruct(scene.sources, scene.rig, steps, params, cfg);
  save_gom(out, result.gom);
  if (!report.empty()) {
    std::ofstream f(report);
    f << "step,ms,source_psnr\n";
    for (size_t t = 0; t < result.step_ms.size(); ++t)
      f << t + 1 << "," << result.step_ms[t] << ","
        << result.step_source_psnr[t] << "\n";
  }
  std::printf("canonical representation written to %s\n", out.c_str());
  return 0;
}

int cmd_render(const std::string& gom_path, const std::string& pose_path,
               const std::string& camera_path, const std::string& out_png,
               bool exact_sidecar) {
  const CanonicalGoM gom = load_gom(gom_path);
  const Pose pose = load_pose_json(pose_path);
  const CameraModel camera = load_camera_json(camera_path);
  const PosedGoM posed = articulate(gom, pose);
  const RenderOutput render = rasterize(gaussians_world(posed), camera);
  write_png(out_png, render.image);
  const std::string mask_png =
      out_png.substr(0, out_png.find_last_of('.')) + "_mask.png";
  write_png(mask_png, render.alpha);
  if (exact_sidecar) {
    write_image_container(out_png + ".lgom", render.image);
    write_image_container(mask_png + ".lgom", render.alpha);
  }
  std::printf("rendered %s\n", out_png.c_str());
  return 0;
}

int cmd_animate(const std::string& gom_path, const std::string& poses_path,
                const std::string& camera_path, const std::string& out_dir) {
  const CanonicalGoM gom = load_gom(gom_path);
  const std::vector<Pose> poses = load_pose_sequence_json(poses_path);
  const CameraModel camera = load_camera_json(camera_path);
  std::filesystem::create_directories(out_dir);
  for (size_t i = 0; i < poses.size(); ++i) {
    const PosedGoM posed = articulate(gom, poses[i]);
    const RenderOutput render = rasterize(gaussians_world(posed), camera);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
    write_png((std::filesystem::path(out_dir) / name).string(), render.image);
  }
  std::printf("rendered %zu frames to %s\n", poses.size(), out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path,
             const std::string& out_csv) {
  const ParamStore params = ParamStore::load(checkpoint);
  const EvalConfig cfg =
      config_path.empty() ? EvalConfig{} : load_eval_config(config_path);
  const std::vector<MetricsRow> rows = evaluate(params, cfg);
  write_metrics_csv(out_csv, rows);
  std::printf("wrote %zu metric rows to %s\n", rows.size(), out_csv.c_str());
  return 0;
}

/// Random splat cloud in front of a default camera, used by the benchmark.
std::vector<WorldGaussian> bench_scene(int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<WorldGaussian> gaussians(size_t(count));
  for (auto& g : gaussians) {
    g.mu = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                rng.uniform(2.0, 6.0));
    const Mat3 a = Mat3::NullaryExpr([&rng](Eigen::Index, Eigen::Index) {
      return rng.uniform(-0.02, 0.02);
    });
    g.sigma = a * a.transpose() + 1e-6 * Mat3::Identity();
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    g.opacity = rng.uniform(0.2, 0.95);
  }
  return gaussians;
}

int cmd_bench(const std::vector<int>& counts, const std::vector<int>& resolutions,
              int repeats, const std::string& out_csv) {
  std::ofstream csv;
  if (!out_csv.empty()) {
    csv.open(out_csv);
    csv << "gaussians,resolution,ms_per_frame,gaussians_per_sec,threads\n";
  }
  for (const int res : resolutions) {
    CameraModel cam;
    cam.width = res;
    cam.height = res;
    cam.K << res * 0.8, 0, (res - 1) * 0.5, 0, res * 0.8, (res - 1) * 0.5, 0, 0, 1;
    for (const int count : counts) {
      const auto gaussians = bench_scene(count, 7u);
      rasterize(gaussians, cam);  // warm-up
      const auto start = std::chrono::steady_clock::now();
      for (int r = 0; r < repeats; ++r) rasterize(gaussians, cam);
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - start)
                            .count() /
                        repeats;
      const double gps = double(count) / (ms / 1000.0);
      std::printf("%8d gaussians @ %4dx%-4d  %8.2f ms/frame  %12.0f gaussians/s\n",
                  count, res, res, ms, gps);
      if (csv.is_open())
        csv << count << "," << res << "," << ms << "," << gps << ","
            << worker_count() << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussians-on-Mesh avatar toolkit"};
  app.require_subcommand(1);

  GenDataConfig gen_cfg;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--seed-start", gen_cfg.seed_start, "First subject seed");
  gen->add_option("--subjects", gen_cfg.subjects, "Subject count");
  gen->add_option("--views", gen_cfg.views, "Source views per subject");
  gen->add_option("--targets", gen_cfg.targets, "Target views per subject");
  gen->add_option("--resolution", gen_cfg.resolution, "Image size in pixels");
  gen->add_option("--pose-magnitude", gen_cfg.pose_magnitude,
                  "Pose sampling magnitude (radians)");
  gen->add_option("--out", gen_cfg.out_dir, "Output directory")->required();

  std::string train_config, train_ckpt = "checkpoint.lgom", train_csv;
  auto* tr = app.add_subcommand("train", "Train the feedback networks");
  tr->add_option("--config", train_config, "Train config JSON")->required();
  tr->add_option("--checkpoint", train_ckpt, "Output checkpoint path");
  tr->add_option("--loss-csv", train_csv, "Per-iteration loss CSV");

  std::string rec_ckpt, rec_manifest, rec_out = "gom.lgom", rec_report;
  int rec_steps = 3, rec_subdiv = 2;
  auto* rec = app.add_subcommand("reconstruct",
                                 "Reconstruct a canonical GoM from sources");
  rec->add_option("--checkpoint", rec_ckpt)->required();
  rec->add_option("--manifest", rec_manifest, "Scene manifest JSON")->required();
  rec->add_option("--steps", rec_steps, "Feedback steps T");
  rec->add_option("--subdivision", rec_subdiv, "Subdivision level k");
  rec->add_option("--out", rec_out, "Output GoM container");
  rec->add_option("--report", rec_report, "Per-step timing/PSNR CSV");

  std::string ren_gom, ren_pose, ren_cam, ren_out = "render.png";
  bool ren_exact = false;
  auto* ren = app.add_subcommand("render", "Render a GoM for a pose and camera");
  ren->add_option("--gom", ren_gom)->required();
  ren->add_option("--pose", ren_pose)->required();
  ren->add_option("--camera", ren_cam)->required();
  ren->add_option("--out", ren_out, "Output PNG");
  ren->add_flag("--exact", ren_exact, "Also write f32 container sidecars");

  std::string ani_gom, ani_poses, ani_cam, ani_out = "frames";
  auto* ani = app.add_subcommand("animate", "Render a pose sequence");
  ani->add_option("--gom", ani_gom)->required();
  ani->add_option("--poses", ani_poses, "Pose sequence JSON")->required();
  ani->add_option("--camera", ani_cam)->required();
  ani->add_option("--out-dir", ani_out);

  std::string ev_ckpt, ev_config, ev_out = "metrics.csv";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on held-out subjects");
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--config", ev_config, "Eval config JSON (defaults when omitted)");
  ev->add_option("--out", ev_out, "Metrics CSV");

  std::vector<int> bench_counts{10000, 50000, 100000};
  std::vector<int> bench_res{256, 512};
  int bench_repeats = 5;
  std::string bench_out;
  auto* be = app.add_subcommand("bench", "Rasterizer throughput benchmark");
  be->add_option("--counts", bench_counts, "Gaussian counts");
  be->add_option("--resolutions", bench_res, "Image sizes");
  be->add_option("--repeats", bench_repeats);
  be->add_option("--out", bench_out, "CSV output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_cfg);
    if (tr->parsed()) return cmd_train(train_config, train_ckpt, train_csv);
    if (rec->parsed())
      return cmd_reconstruct(rec_ckpt, rec_manifest, rec_steps, rec_subdiv,
                             rec_out, rec_report);
    if (ren->parsed()) return cmd_render(ren_gom, ren_pose, ren_cam, ren_out, ren_exact);
    if (ani->parsed()) return cmd_animate(ani_gom, ani_poses, ani_cam, ani_out);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_config, ev_out);
    if (be->parsed()) return cmd_bench(bench_counts, bench_res, bench_repeats, bench_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
