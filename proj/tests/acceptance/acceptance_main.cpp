// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criteria 4-7 share two desk-scale training runs (k=2 and
// k=0); pass --quick to shrink budgets during development (the ctest entry
// runs the full configuration).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lgom/diff.hpp"
#include "lgom/formats.hpp"
#include "lgom/losses.hpp"
#include "lgom/parallel.hpp"
#include "lgom/reconstruct.hpp"
#include "lgom/rng.hpp"
#include "lgom/splat.hpp"
#include "lgom/train.hpp"

using namespace lgom;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  bool quick = false;
  std::string bench_binary;
  std::string artifacts_dir = "acceptance_artifacts";
};

double seconds_since(const Clock::time_point& t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// Criterion 1: tiled rasterizer vs brute-force oracle.
// ---------------------------------------------------------------------------

std::vector<WorldGaussian> random_scene(int count, uint64_t seed) {
  Rng rng(seed);
  std::vector<WorldGaussian> gaussians(size_t(count));
  for (auto& g : gaussians) {
    g.mu = Vec3(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9),
                rng.uniform(1.2, 7.0));
    Mat3 a;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(i, j) = rng.uniform(-0.06, 0.06);
    g.sigma = a * a.transpose() + 1e-8 * Mat3::Identity();
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    g.opacity = rng.uniform(0.02, 0.99);
  }
  return gaussians;
}

CameraModel plain_camera(int size, double focal) {
  CameraModel cam;
  cam.width = size;
  cam.height = size;
  cam.K << focal, 0, (size - 1) * 0.5, 0, focal, (size - 1) * 0.5, 0, 0, 1;
  return cam;
}

bool criterion_oracle_equivalence(const Options& opt, std::string& detail) {
  const auto t0 = Clock::now();
  const int scenes = opt.quick ? 8 : 50;
  double max_diff = 0.0;
  for (int s = 0; s < scenes; ++s) {
    Rng rng(1000 + uint64_t(s));
    const int count = 50 + rng.uniform_int(451);  // <= 500
    const auto gaussians = random_scene(count, 2000 + uint64_t(s));
    const CameraModel cam = plain_camera(128, 110.0);
    const RenderOutput tiled = rasterize(gaussians, cam);
    const RenderOutput oracle = rasterize_oracle(gaussians, cam);
    for (size_t i = 0; i < tiled.image.data.size(); ++i)
      max_diff = std::max(max_diff,
                          std::abs(tiled.image.data[i] - oracle.image.data[i]));
    for (size_t i = 0; i < tiled.alpha.data.size(); ++i)
      max_diff = std::max(max_diff,
                          std::abs(tiled.alpha.data[i] - oracle.alpha.data[i]));
  }
  const double elapsed = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%d scenes, max |tiled-oracle| = %.2e, %.1fs", scenes, max_diff,
                elapsed);
  detail = buf;
  return max_diff <= 1e-5 && elapsed < 120.0;
}

// ---------------------------------------------------------------------------
// Criterion 2: the gradient suite.
// ---------------------------------------------------------------------------

Rig ico_rig() {
  Rig rig;
  Rig::Joint root;
  root.parent = -1;
  root.rest_rotation = Quat::Identity();
  root.rest_translation = Vec3::Zero();
  rig.joints.push_back(root);
  rig.template_mesh = make_icosahedron();
  rig.weights.assign(size_t(rig.template_mesh.vertex_count()), {{0, 1.0}});
  return rig;
}

Rig two_joint_rig() {
  Rig rig = ico_rig();
  Rig::Joint child;
  child.parent = 0;
  child.rest_rotation = Quat::Identity();
  child.rest_translation = Vec3(0.5, 0, 0);
  rig.joints.push_back(child);
  Rng rng(7);
  for (auto& w : rig.weights) {
    const double a = rng.uniform(0.2, 0.8);
    w = {{0, a}, {1, 1.0 - a}};
  }
  return rig;
}

bool criterion_gradient_suite(const Options& opt, std::string& detail) {
  (void)opt;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&worst, &worst_name](const char* name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  // 2a. Rasterizer backward vs finite differences.
  {
    auto gaussians = random_scene(12, 91);
    const CameraModel cam = plain_camera(24, 26.0);
    Image gi(24, 24, 3), ga(24, 24, 1);
    Rng rng(13);
    for (auto& v : gi.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : ga.data) v = rng.uniform(-1.0, 1.0);
    const auto grads = rasterize_backward(gaussians, cam, gi, ga);
    auto loss = [&](const std::vector<WorldGaussian>& scene) {
      const RenderOutput out = rasterize(scene, cam);
      double acc = 0.0;
      for (size_t i = 0; i < out.image.data.size(); ++i)
        acc += out.image.data[i] * gi.data[i];
      for (size_t i = 0; i < out.alpha.data.size(); ++i)
        acc += out.alpha.data[i] * ga.data[i];
      return acc;
    };
    Rng pick(17);
    for (int probe = 0; probe < 8; ++probe) {
      const int idx = pick.uniform_int(12);
      auto f = [&](const std::vector<double>& x) {
        auto scene = gaussians;
        scene[idx].mu = Vec3(x[0], x[1], x[2]);
        scene[idx].color = Vec3(x[3], x[4], x[5]);
        scene[idx].opacity = x[6];
        return loss(scene);
      };
      const auto& g = gaussians[idx];
      const std::vector<double> x0{g.mu.x(),    g.mu.y(),    g.mu.z(),
                                   g.color.x(), g.color.y(), g.color.z(),
                                   g.opacity};
      const auto& an = grads[idx];
      const std::vector<double> analytic{an.d_mu.x(),    an.d_mu.y(),
                                         an.d_mu.z(),    an.d_color.x(),
                                         an.d_color.y(), an.d_color.z(),
                                         an.d_opacity};
      track("rasterizer", gradcheck(f, x0, analytic, 1e-5));
    }
  }

  // 2b. LBS -> prolongation -> frame -> Sigma chain.
  {
    const Rig rig = two_joint_rig();
    const CanonicalGoM gom = init_canonical(rig, 1, {});
    Rng rng(19);
    Pose pose;
    for (int j = 0; j < 2; ++j) {
      pose.rotations.push_back(
          Quat(rodrigues(Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.3))
              .normalized());
      pose.translations.emplace_back(rng.normal() * 0.2, rng.normal() * 0.2,
                                     rng.normal() * 0.2);
    }
    std::vector<double> probes(size_t(gom.high_face_count()) * 13);
    for (auto& v : probes) v = rng.normal();

    auto loss_for = [&](const std::vector<Vec3>& canonical) {
      std::vector<Vec3> posed(canonical.size());
      for (size_t i = 0; i < canonical.size(); ++i)
        posed[i] = lbs_point(canonical[i], gom.weights[i], pose);
      const auto high = prolong(gom.prolongation, posed);
      const auto world =
          gaussians_world_raw(gom.high_mesh, gom.face_gaussians, high);
      double acc = 0.0;
      for (size_t j = 0; j < world.size(); ++j) {
        const double* p = probes.data() + j * 13;
        acc += Vec3(p[0], p[1], p[2]).dot(world[j].mu);
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) acc += p[3 + r * 3 + c] * world[j].sigma(r, c);
        acc += p[12] * world[j].opacity;
      }
      return acc;
    };

    // Analytic gradient via the module VJPs.
    std::vector<Vec3> posed(gom.low_mesh.vertices.size());
    for (size_t i = 0; i < posed.size(); ++i)
      posed[i] = lbs_point(gom.low_mesh.vertices[i], gom.weights[i], pose);
    const auto high = prolong(gom.prolongation, posed);
    std::vector<WorldGaussianGrad> wg(size_t(gom.high_face_count()));
    for (size_t j = 0; j < wg.size(); ++j) {
      const double* p = probes.data() + j * 13;
      wg[j].d_mu = Vec3(p[0], p[1], p[2]);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) wg[j].d_sigma(r, c) = p[3 + r * 3 + c];
      wg[j].d_opacity = p[12];
    }
    std::vector<Vec3> d_high;
    std::vector<FaceGaussian> d_faces;
    gaussians_world_raw_vjp(gom.high_mesh, gom.face_gaussians, high, wg, d_high,
                            d_faces);
    const auto d_posed = prolong_vjp(gom.prolongation, d_high);
    std::vector<Vec3> d_canonical(d_posed.size(), Vec3::Zero());
    for (size_t i = 0; i < d_posed.size(); ++i)
      d_canonical[i] =
          lbs_point_jacobian(gom.weights[i], pose).transpose() * d_posed[i];

    Rng pick(23);
    std::vector<double> x0, analytic;
    std::vector<size_t> chosen;
    for (int probe = 0; probe < 8; ++probe)
      chosen.push_back(size_t(pick.uniform_int(int(posed.size()))));
    for (const size_t i : chosen)
      for (int d = 0; d < 3; ++d) {
        x0.push_back(gom.low_mesh.vertices[i][d]);
        analytic.push_back(d_canonical[i][d]);
      }
    auto f = [&](const std::vector<double>& x) {
      auto canonical = gom.low_mesh.vertices;
      for (size_t k = 0; k < chosen.size(); ++k)
        canonical[chosen[k]] = Vec3(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
      return loss_for(canonical);
    };
    track("lbs-frame-sigma", gradcheck(f, x0, analytic, 1e-6));
  }

  // 2c. Full pipeline (encoder, fusion, mesh attention, update heads) plus
  // every loss term, through the training tape.
  {
    const Rig rig = ico_rig();
    const int n_sources = 2, size = 8, steps = 2;
    ReconConfig cfg;
    cfg.steps = steps;
    cfg.subdivision = 1;
    cfg.sources = n_sources;
    ParamStore params;
    init_feedback_params(params, cfg, rig.template_mesh.vertex_count(), 61);
    Rng rng(63);
    for (const char* name : {"head.vertex.l2.w", "head.vertex.l2.b",
                             "head.gauss.l2.w", "head.gauss.l2.b",
                             "emb.update.w", "emb.update.b"})
      for (auto& v : params.at(name).value) v = 0.02 * rng.normal();

    SourceSet sources;
    for (int i = 0; i < n_sources; ++i) {
      SourceView view;
      view.image = Image(size, size, 3);
      view.mask = Image(size, size, 1);
      for (auto& v : view.image.data) v = rng.uniform();
      for (auto& v : view.mask.data) v = rng.uniform();
      const Vec3 eye(3.0 * std::sin(2.1 * i + 0.4), 0.3,
                     3.0 * std::cos(2.1 * i + 0.4));
      view.camera = make_lookat_camera(eye, Vec3::Zero(), Vec3(0, 1, 0),
                                       size * 1.2, size, size);
      view.pose = Pose::identity(1);
      if (i > 0)
        view.pose.rotations[0] =
            Quat(rodrigues(Vec3(0.06, -0.04, 0.05))).normalized();
      sources.push_back(std::move(view));
    }
    LossWeights weights;

    auto run_loss = [&](const ParamStore& p, GradStore* grads) {
      ReconTape tape(sources, rig, p, cfg);
      tape.run(steps);
      double total = 0.0;
      for (int t = 1; t <= steps; ++t) {
        const CanonicalGoM& gom = tape.states()[t].gom;
        for (int view = 0; view < n_sources; ++view) {
          const int pass = tape.render_state(t, sources[view].pose,
                                             sources[view].camera);
          const RenderOutput& render = tape.render_output(pass);
          Image gi(size, size, 3), gm(size, size, 1);
          std::vector<Vec3> gl(size_t(gom.low_vertex_count()), Vec3::Zero());
          const LossBreakdown loss = loss_total(
              render.image, render.alpha, sources[view].image,
              sources[view].mask, gom, weights, grads ? &gi : nullptr,
              grads ? &gm : nullptr, grads ? &gl : nullptr);
          total += loss.total;
          if (grads) {
            tape.add_render_grad(pass, gi, gm);
            tape.add_state_grad(t, gl);
          }
        }
      }
      if (grads) tape.backward(*grads);
      return total;
    };

    GradStore grads;
    run_loss(params, &grads);
    Rng pick(67);
    for (const auto& [name, tensor] : params.tensors()) {
      if (!grads.has(name)) continue;
      const auto& g = grads.at(name);
      const size_t idx = size_t(pick.uniform_int(int(tensor.size())));
      const double h = 1e-5;
      ParamStore p2 = params;
      p2.at(name).value[idx] += h;
      const double fp = run_loss(p2, nullptr);
      p2.at(name).value[idx] -= 2.0 * h;
      const double fm = run_loss(p2, nullptr);
      const double numeric = (fp - fm) / (2.0 * h);
      const double err =
          std::abs(numeric - g[idx]) /
          std::max({std::abs(numeric), std::abs(g[idx]), 1e-8});
      track(name.c_str(), err);
    }
  }

  const double elapsed = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "worst rel err %.2e (%s), %.1fs", worst,
                worst_name.c_str(), elapsed);
  detail = buf;
  return worst < 1e-3 && elapsed < 300.0;
}

// ---------------------------------------------------------------------------
// Criterion 3: structural invariants.
// ---------------------------------------------------------------------------

int undirected_edges(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}]++;
    }
  return int(edges.size());
}

bool criterion_structural(const Options& opt, std::string& detail) {
  (void)opt;
  // Subdivision formulas + Euler on 10 closed meshes.
  std::vector<TriMesh> meshes{make_icosahedron(), make_tetrahedron(),
                              make_octahedron(), make_cube_mesh()};
  while (meshes.size() < 10) {
    auto [next, p] = subdivide_midpoint(meshes[meshes.size() - 4]);
    meshes.push_back(std::move(next));
  }
  for (const auto& mesh : meshes) {
    const int v = mesh.vertex_count(), e = undirected_edges(mesh),
              f = mesh.face_count();
    auto [sub, p] = subdivide_midpoint(mesh);
    if (sub.vertex_count() != v + e || sub.face_count() != 4 * f) {
      detail = "subdivision count formula violated";
      return false;
    }
    if (sub.vertex_count() - undirected_edges(sub) + sub.face_count() !=
        v - e + f) {
      detail = "Euler characteristic not preserved";
      return false;
    }
  }

  // Coupling after articulation and after feedback steps.
  const SyntheticSubject subject = make_synthetic_subject(17);
  const CanonicalGoM gom = init_canonical(subject.rig, 2, {});
  Rng rng(29);
  for (int trial = 0; trial < 3; ++trial) {
    const Pose pose = sample_pose(subject, rng, 0.4);
    const PosedGoM posed = articulate(gom, pose);
    const auto again = prolong(gom.prolongation, posed.low_vertices);
    for (size_t i = 0; i < again.size(); ++i)
      if ((again[i] - posed.high_vertices[i]).norm() > 1e-12) {
        detail = "coupling invariant violated after articulation";
        return false;
      }
  }

  ReconConfig cfg;
  cfg.steps = 3;
  cfg.subdivision = 1;
  cfg.sources = 2;
  ParamStore params;
  init_feedback_params(params, cfg, subject.rig.template_mesh.vertex_count(), 71);
  for (auto& v : params.at("head.vertex.l2.w").value) v = 0.03 * rng.normal();
  SourceSet sources;
  for (int i = 0; i < 2; ++i) {
    SourceView view;
    view.camera = subject_camera(subject, 2.0 * i + 0.2, 0.1, 24, 24);
    view.pose = sample_pose(subject, rng, 0.2);
    render_reference(subject, view.pose, view.camera, view.image, view.mask);
    sources.push_back(std::move(view));
  }
  FeedbackState state = init_feedback_state(subject.rig, params, cfg);
  for (int t = 0; t < 3; ++t) {
    state = feedback_step(state, sources, params, cfg);
    const auto again =
        prolong(state.gom.prolongation, state.gom.low_mesh.vertices);
    for (size_t i = 0; i < again.size(); ++i)
      if ((again[i] - state.gom.high_mesh.vertices[i]).norm() > 1e-12) {
        detail = "coupling invariant violated after feedback step";
        return false;
      }
  }

  // Identity at initialization for T in {1,2,3}.
  ParamStore zero_params;
  init_feedback_params(zero_params, cfg, subject.rig.template_mesh.vertex_count(),
                       73);
  const FeedbackState init = init_feedback_state(subject.rig, zero_params, cfg);
  for (int steps : {1, 2, 3}) {
    const ReconResult result =
        reconstruct(sources, subject.rig, steps, zero_params, cfg);
    for (size_t i = 0; i < init.gom.low_mesh.vertices.size(); ++i)
      if (result.gom.low_mesh.vertices[i] != init.gom.low_mesh.vertices[i]) {
        detail = "identity-at-initialization violated";
        return false;
      }
    for (size_t j = 0; j < init.gom.face_gaussians.size(); ++j)
      if (result.gom.face_gaussians[j].alpha != init.gom.face_gaussians[j].alpha) {
        detail = "identity-at-initialization violated (gaussians)";
        return false;
      }
  }

  // LBS identity-pose exactness.
  const Pose id = Pose::identity(subject.rig.joint_count());
  const auto posed = pose_mesh(subject.rig, subject.rig.template_mesh.vertices, id);
  for (size_t i = 0; i < posed.size(); ++i)
    if (posed[i] != subject.rig.template_mesh.vertices[i]) {
      detail = "LBS identity pose not exact";
      return false;
    }

  detail = "10 meshes, coupling, identity-at-init, LBS identity";
  return true;
}

// ---------------------------------------------------------------------------
// Criteria 4-7: trend reproduction from two desk-scale training runs.
// ---------------------------------------------------------------------------

struct TrendData {
  double psnr_t[4] = {0, 0, 0, 0};     // indexed by T
  double psnr_sigma[3] = {0, 0, 0};    // sigma in {0, 0.1, 0.3}
  double ssim_k2 = 0.0, ssim_k0 = 0.0;
  double render_ms_k0 = 0.0, render_ms_k2 = 0.0;
  double baseline_psnr_t3 = 0.0;
  double trained_psnr_t3 = 0.0;
  double train_seconds_k2 = 0.0, train_seconds_k0 = 0.0;
};

TrainConfig acceptance_train_config(const Options& opt, int subdivision) {
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.subjects = opt.quick ? 4 : 32;
  cfg.iterations = opt.quick ? 60 : 2000;
  cfg.image_size = 64;
  cfg.steps = 3;
  cfg.subdivision = subdivision;
  cfg.log_every = opt.quick ? 20 : 200;
  return cfg;
}

EvalConfig acceptance_eval_config(const Options& opt) {
  EvalConfig cfg;
  cfg.subjects = opt.quick ? 2 : 8;
  cfg.image_size = 64;
  cfg.eval_views = 2;
  return cfg;
}

double mean_of(const std::vector<MetricsRow>& rows,
               const std::function<bool(const MetricsRow&)>& pred,
               const std::function<double(const MetricsRow&)>& get) {
  double acc = 0.0;
  int count = 0;
  for (const auto& row : rows)
    if (pred(row)) {
      acc += get(row);
      ++count;
    }
  return count ? acc / count : 0.0;
}

TrendData run_trend_experiments(const Options& opt) {
  TrendData data;

  // k=2 model: T sweep, sigma sweep, learning gate, SSIM/render time at k=2.
  auto t0 = Clock::now();
  const TrainConfig cfg_k2 = acceptance_train_config(opt, 2);
  const TrainResult trained_k2 = train(cfg_k2);
  data.train_seconds_k2 = seconds_since(t0);
  std::filesystem::create_directories(opt.artifacts_dir);
  trained_k2.params.save(opt.artifacts_dir + "/checkpoint_k2.lgom");

  EvalConfig eval_cfg = acceptance_eval_config(opt);
  eval_cfg.steps = {1, 2, 3};
  eval_cfg.subdivisions = {2};
  eval_cfg.pose_noise = {0.0, 0.1, 0.3};
  const auto rows_k2 = evaluate(trained_k2.params, eval_cfg);
  write_metrics_csv(opt.artifacts_dir + "/eval_k2.csv", rows_k2);

  for (int t = 1; t <= 3; ++t)
    data.psnr_t[t] = mean_of(
        rows_k2,
        [t](const MetricsRow& r) { return r.steps == t && r.pose_noise == 0.0; },
        [](const MetricsRow& r) { return r.psnr; });
  const double sigmas[3] = {0.0, 0.1, 0.3};
  for (int i = 0; i < 3; ++i)
    data.psnr_sigma[i] = mean_of(
        rows_k2,
        [&](const MetricsRow& r) {
          return r.steps == 3 && r.pose_noise == sigmas[i];
        },
        [](const MetricsRow& r) { return r.psnr; });
  data.ssim_k2 = mean_of(
      rows_k2,
      [](const MetricsRow& r) { return r.steps == 3 && r.pose_noise == 0.0; },
      [](const MetricsRow& r) { return r.ssim; });
  data.render_ms_k2 = mean_of(
      rows_k2,
      [](const MetricsRow& r) { return r.steps == 3 && r.pose_noise == 0.0; },
      [](const MetricsRow& r) { return r.render_ms; });
  data.trained_psnr_t3 = data.psnr_t[3];

  // Baseline: untrained (zero-init heads) parameters, same eval.
  {
    TrainConfig cfg_base = cfg_k2;
    cfg_base.iterations = 0;
    const TrainResult untrained = train(cfg_base);
    EvalConfig base_cfg = acceptance_eval_config(opt);
    base_cfg.steps = {3};
    base_cfg.subdivisions = {2};
    base_cfg.pose_noise = {0.0};
    const auto rows = evaluate(untrained.params, base_cfg);
    data.baseline_psnr_t3 = mean_of(
        rows, [](const MetricsRow&) { return true; },
        [](const MetricsRow& r) { return r.psnr; });
  }

  // k=0 model under an identical budget.
  t0 = Clock::now();
  const TrainConfig cfg_k0 = acceptance_train_config(opt, 0);
  const TrainResult trained_k0 = train(cfg_k0);
  data.train_seconds_k0 = seconds_since(t0);
  trained_k0.params.save(opt.artifacts_dir + "/checkpoint_k0.lgom");
  EvalConfig eval_k0 = acceptance_eval_config(opt);
  eval_k0.steps = {3};
  eval_k0.subdivisions = {0};
  eval_k0.pose_noise = {0.0};
  const auto rows_k0 = evaluate(trained_k0.params, eval_k0);
  write_metrics_csv(opt.artifacts_dir + "/eval_k0.csv", rows_k0);
  data.ssim_k0 = mean_of(
      rows_k0, [](const MetricsRow&) { return true; },
      [](const MetricsRow& r) { return r.ssim; });
  data.render_ms_k0 = mean_of(
      rows_k0, [](const MetricsRow&) { return true; },
      [](const MetricsRow& r) { return r.render_ms; });
  return data;
}

bool criterion_iteration_trend(const TrendData& data, std::string& detail) {
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "PSNR(T=1..3) = %.2f / %.2f / %.2f dB (train %.0fs)",
                data.psnr_t[1], data.psnr_t[2], data.psnr_t[3],
                data.train_seconds_k2);
  detail = buf;
  return data.psnr_t[3] >= data.psnr_t[2] &&
         data.psnr_t[2] >= data.psnr_t[1] - 0.1 &&
         data.psnr_t[3] - data.psnr_t[1] >= 0.3;
}

bool criterion_subdivision_trend(const TrendData& data, std::string& detail) {
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "SSIM k0 %.4f vs k2 %.4f; render ms k0 %.2f vs k2 %.2f",
                data.ssim_k0, data.ssim_k2, data.render_ms_k0,
                data.render_ms_k2);
  detail = buf;
  return data.ssim_k2 >= data.ssim_k0 && data.render_ms_k2 > data.render_ms_k0;
}

bool criterion_pose_noise_trend(const TrendData& data, std::string& detail) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "PSNR(sigma 0/0.1/0.3) = %.2f / %.2f / %.2f dB",
                data.psnr_sigma[0], data.psnr_sigma[1], data.psnr_sigma[2]);
  detail = buf;
  return data.psnr_sigma[0] >= data.psnr_sigma[1] &&
         data.psnr_sigma[1] >= data.psnr_sigma[2];
}

bool criterion_learning_gate(const TrendData& data, std::string& detail) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "baseline %.2f dB, trained %.2f dB (+%.2f)",
                data.baseline_psnr_t3, data.trained_psnr_t3,
                data.trained_psnr_t3 - data.baseline_psnr_t3);
  detail = buf;
  return data.trained_psnr_t3 - data.baseline_psnr_t3 >= 3.0;
}

// ---------------------------------------------------------------------------
// Criterion 8: performance report and thread determinism.
// ---------------------------------------------------------------------------

bool criterion_performance(const Options& opt, std::string& detail) {
  const auto gaussians = random_scene(50000, 5);
  const CameraModel cam = plain_camera(512, 420.0);
  rasterize(gaussians, cam);  // warm-up
  const auto t0 = Clock::now();
  const int repeats = 5;
  for (int r = 0; r < repeats; ++r) rasterize(gaussians, cam);
  const double ms = seconds_since(t0) * 1000.0 / repeats;

  // Determinism across LGOM_THREADS in {1, 4, 8}.
  setenv("LGOM_THREADS", "1", 1);
  const RenderOutput base = rasterize(gaussians, cam);
  bool deterministic = true;
  for (const char* threads : {"4", "8"}) {
    setenv("LGOM_THREADS", threads, 1);
    const RenderOutput out = rasterize(gaussians, cam);
    deterministic = deterministic && out.image.data == base.image.data &&
                    out.alpha.data == base.alpha.data;
  }
  unsetenv("LGOM_THREADS");

  bool cli_ok = true;
  if (!opt.bench_binary.empty()) {
    const std::string cmd = opt.bench_binary +
                            " bench --counts 10000 --resolutions 256 "
                            "--repeats 2 > /dev/null";
    cli_ok = std::system(cmd.c_str()) == 0;
  }

  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "50k @ 512^2: %.1f ms/frame (%d workers); threads 1/4/8 %s; "
                "bench CLI %s",
                ms, worker_count(), deterministic ? "identical" : "DIVERGED",
                cli_ok ? "ok" : "FAILED");
  detail = buf;
  return ms < 250.0 && deterministic && cli_ok;
}

// ---------------------------------------------------------------------------
// Criterion 9: round-trip and end-to-end determinism.
// ---------------------------------------------------------------------------

bool criterion_determinism(const Options& opt, std::string& detail) {
  // Container round trip.
  TensorContainer tc;
  Rng rng(5);
  std::vector<float> values(257);
  for (auto& v : values) v = float(rng.normal());
  tc.add_f32("x", {257}, values);
  tc.add_i32("shape", {2}, {16, 16});
  const auto bytes = tc.serialize();
  const TensorContainer back = TensorContainer::deserialize(bytes);
  if (back.serialize() != bytes) {
    detail = "container round trip not bitwise";
    return false;
  }

  // Small train+eval pipeline, twice, bitwise.
  TrainConfig cfg;
  cfg.seed = 99;
  cfg.subjects = 2;
  cfg.iterations = opt.quick ? 2 : 5;
  cfg.image_size = 16;
  cfg.subdivision = 1;
  cfg.steps = 2;
  cfg.log_every = 0;
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  for (const auto& [name, tensor] : a.params.tensors()) {
    const auto& other = b.params.at(name);
    for (size_t i = 0; i < tensor.size(); ++i)
      if (tensor.value[i] != other.value[i]) {
        detail = "training not bitwise reproducible (" + name + ")";
        return false;
      }
  }
  EvalConfig ecfg;
  ecfg.subjects = 1;
  ecfg.image_size = 16;
  ecfg.eval_views = 1;
  ecfg.steps = {1, 2};
  ecfg.subdivisions = {1};
  ecfg.pose_noise = {0.0, 0.1};
  const auto rows1 = evaluate(a.params, ecfg);
  const auto rows2 = evaluate(b.params, ecfg);
  for (size_t i = 0; i < rows1.size(); ++i)
    if (rows1[i].psnr != rows2[i].psnr || rows1[i].ssim != rows2[i].ssim ||
        rows1[i].mask_iou != rows2[i].mask_iou) {
      detail = "evaluation not bitwise reproducible";
      return false;
    }
  detail = "container bitwise; train+eval bitwise over " +
           std::to_string(cfg.iterations) + " iterations";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--quick") == 0) opt.quick = true;
    if (std::strcmp(argv[i], "--bench-binary") == 0 && i + 1 < argc)
      opt.bench_binary = argv[++i];
    if (std::strcmp(argv[i], "--artifacts") == 0 && i + 1 < argc)
      opt.artifacts_dir = argv[++i];
  }

  int failures = 0;
  auto report = [&failures](int id, const char* name, bool ok,
                            const std::string& detail) {
    std::printf("criterion %d %s: %s (%s)\n", id, ok ? "PASS" : "FAIL", name,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  };

  std::string detail;
  report(1, "oracle equivalence", criterion_oracle_equivalence(opt, detail),
         detail);
  report(2, "gradient suite", criterion_gradient_suite(opt, detail), detail);
  report(3, "structural invariants", criterion_structural(opt, detail), detail);

  const TrendData data = run_trend_experiments(opt);
  report(4, "iteration trend", criterion_iteration_trend(data, detail), detail);
  report(5, "subdivision trend", criterion_subdivision_trend(data, detail),
         detail);
  report(6, "pose-noise trend", criterion_pose_noise_trend(data, detail),
         detail);
  report(7, "learning gate", criterion_learning_gate(data, detail), detail);
  report(8, "performance report", criterion_performance(opt, detail), detail);
  report(9, "round-trip and determinism", criterion_determinism(opt, detail),
         detail);

  if (failures) {
    std::printf("%d criterion(s) FAILED\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
