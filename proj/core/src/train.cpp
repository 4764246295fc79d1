#include "lgom/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lgom {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(const Clock::time_point& start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

ReconConfig recon_config(int steps, int subdivision, int sources,
                         double vertex_step_bound, const GomDefaults& defaults) {
  ReconConfig cfg;
  cfg.steps = steps;
  cfg.subdivision = subdivision;
  cfg.sources = sources;
  cfg.vertex_step_bound = vertex_step_bound;
  cfg.defaults = defaults;
  return cfg;
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("train config: cannot open " + path);
  const nlohmann::json j = nlohmann::json::parse(f);
  TrainConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.subjects = j.value("subjects", cfg.subjects);
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.sources = j.value("sources", cfg.sources);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.subdivision = j.value("subdivision", cfg.subdivision);
  if (j.contains("loss")) {
    cfg.loss.lambda_per = j["loss"].value("lambda_per", cfg.loss.lambda_per);
    cfg.loss.lambda_mask = j["loss"].value("lambda_mask", cfg.loss.lambda_mask);
    cfg.loss.lambda_lap = j["loss"].value("lambda_lap", cfg.loss.lambda_lap);
  }
  if (j.contains("optimizer")) {
    cfg.lr = j["optimizer"].value("lr", cfg.lr);
    cfg.lr_encoder = j["optimizer"].value("lr_encoder", cfg.lr_encoder);
    cfg.beta1 = j["optimizer"].value("beta1", cfg.beta1);
    cfg.beta2 = j["optimizer"].value("beta2", cfg.beta2);
    cfg.eps = j["optimizer"].value("eps", cfg.eps);
  }
  cfg.pose_magnitude = j.value("pose_magnitude", cfg.pose_magnitude);
  cfg.vertex_step_bound = j.value("vertex_step_bound", cfg.vertex_step_bound);
  if (j.contains("defaults")) {
    cfg.defaults.scale = j["defaults"].value("scale", cfg.defaults.scale);
    cfg.defaults.opacity = j["defaults"].value("opacity", cfg.defaults.opacity);
  }
  cfg.log_every = j.value("log_every", cfg.log_every);
  cfg.csv_path = j.value("csv_path", cfg.csv_path);
  if (cfg.iterations < 0 || cfg.subjects < 1 || cfg.image_size < 8 ||
      cfg.sources < 1 || cfg.steps < 1 || cfg.subdivision < 0 ||
      cfg.subdivision > 3)
    throw std::runtime_error("train config: invalid values in " + path);
  return cfg;
}

void save_train_config(const std::string& path, const TrainConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["subjects"] = cfg.subjects;
  j["iterations"] = cfg.iterations;
  j["image_size"] = cfg.image_size;
  j["sources"] = cfg.sources;
  j["steps"] = cfg.steps;
  j["subdivision"] = cfg.subdivision;
  j["loss"] = {{"lambda_per", cfg.loss.lambda_per},
               {"lambda_mask", cfg.loss.lambda_mask},
               {"lambda_lap", cfg.loss.lambda_lap}};
  j["optimizer"] = {{"lr", cfg.lr},
                    {"lr_encoder", cfg.lr_encoder},
                    {"beta1", cfg.beta1},
                    {"beta2", cfg.beta2},
                    {"eps", cfg.eps}};
  j["pose_magnitude"] = cfg.pose_magnitude;
  j["vertex_step_bound"] = cfg.vertex_step_bound;
  j["defaults"] = {{"scale", cfg.defaults.scale},
                   {"opacity", cfg.defaults.opacity}};
  j["log_every"] = cfg.log_every;
  j["csv_path"] = cfg.csv_path;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("train config: cannot write " + path);
  f << j.dump(2) << "\n";
}

TrainSample make_train_sample(const TrainConfig& cfg,
                              const std::vector<SyntheticSubject>& subjects,
                              int iteration) {
  Rng rng(hash_name("iter") ^ cfg.seed ^ (uint64_t(iteration) * 0x9e3779b97f4a7c15ull));
  TrainSample sample;
  sample.subject_index = rng.uniform_int(int(subjects.size()));
  const SyntheticSubject& subject = subjects[sample.subject_index];

  const double base_azimuth = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  for (int n = 0; n < cfg.sources; ++n) {
    SourceView view;
    const double azimuth = base_azimuth +
                           (2.0 * 3.14159265358979323846 * n) / cfg.sources +
                           rng.uniform(-0.2, 0.2);
    const double elevation = rng.uniform(-0.15, 0.25);
    view.camera = subject_camera(subject, azimuth, elevation, cfg.image_size,
                                 cfg.image_size);
    view.pose = sample_pose(subject, rng, cfg.pose_magnitude);
    render_reference(subject, view.pose, view.camera, view.image, view.mask);
    sample.sources.push_back(std::move(view));
  }
  const double target_azimuth = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double target_elevation = rng.uniform(-0.15, 0.25);
  sample.target_camera = subject_camera(subject, target_azimuth,
                                        target_elevation, cfg.image_size,
                                        cfg.image_size);
  sample.target_pose = sample_pose(subject, rng, cfg.pose_magnitude);
  render_reference(subject, sample.target_pose, sample.target_camera,
                   sample.target_image, sample.target_mask);
  return sample;
}

TrainResult train(const TrainConfig& cfg) {
  std::vector<SyntheticSubject> subjects;
  subjects.reserve(size_t(cfg.subjects));
  for (int s = 0; s < cfg.subjects; ++s)
    subjects.push_back(make_synthetic_subject(cfg.seed * 1000003ull + s));

  const ReconConfig rc = recon_config(cfg.steps, cfg.subdivision, cfg.sources,
                                      cfg.vertex_step_bound, cfg.defaults);
  TrainResult result;
  init_feedback_params(result.params, rc,
                       subjects[0].rig.template_mesh.vertex_count(), cfg.seed);

  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.beta1 = cfg.beta1;
  adam.beta2 = cfg.beta2;
  adam.eps = cfg.eps;
  adam.lr_overrides = {{"enc.", cfg.lr_encoder}};

  std::ofstream csv;
  if (!cfg.csv_path.empty()) {
    csv.open(cfg.csv_path);
    if (!csv) throw std::runtime_error("train: cannot write " + cfg.csv_path);
    csv << "iteration,loss,image_l1,perceptual,mask_l1,laplacian\n";
  }

  GradStore grads;
  for (int it = 0; it < cfg.iterations; ++it) {
    const TrainSample sample = make_train_sample(cfg, subjects, it);
    const SyntheticSubject& subject = subjects[sample.subject_index];

    ReconTape tape(sample.sources, subject.rig, result.params, rc);
    tape.run(cfg.steps);

    const double term_weight =
        1.0 / (double(cfg.sources + 1) * double(cfg.steps));
    int term_count = 0;
    LossBreakdown mean{};
    for (int t = 1; t <= cfg.steps; ++t) {
      const CanonicalGoM& gom = tape.states()[t].gom;
      for (int view = 0; view < cfg.sources + 1; ++view) {
        const bool is_target = view == cfg.sources;
        const Pose& pose =
            is_target ? sample.target_pose : sample.sources[view].pose;
        const CameraModel& camera =
            is_target ? sample.target_camera : sample.sources[view].camera;
        const Image& gt_image =
            is_target ? sample.target_image : sample.sources[view].image;
        const Image& gt_mask =
            is_target ? sample.target_mask : sample.sources[view].mask;

        const int pass = tape.render_state(t, pose, camera);
        const RenderOutput& render = tape.render_output(pass);
        Image grad_image(camera.height, camera.width, 3);
        Image grad_alpha(camera.height, camera.width, 1);
        std::vector<Vec3> grad_low(size_t(gom.low_vertex_count()), Vec3::Zero());
        const LossBreakdown loss =
            loss_total(render.image, render.alpha, gt_image, gt_mask, gom,
                       cfg.loss, &grad_image, &grad_alpha, &grad_low);
        for (auto& g : grad_image.data) g *= term_weight;
        for (auto& g : grad_alpha.data) g *= term_weight;
        for (auto& g : grad_low) g *= term_weight;
        tape.add_render_grad(pass, grad_image, grad_alpha);
        tape.add_state_grad(t, grad_low);
        mean.total += term_weight * loss.total;
        mean.image_l1 += term_weight * loss.image_l1;
        mean.perceptual += term_weight * loss.perceptual;
        mean.mask_l1 += term_weight * loss.mask_l1;
        mean.laplacian += term_weight * loss.laplacian;
        term_count++;
      }
    }
    if (term_count != (cfg.sources + 1) * cfg.steps)
      throw std::logic_error("train: loss term count mismatch");

    grads.clear();
    tape.backward(grads);
    adam_step(result.params, grads, adam);

    result.loss_curve.push_back(mean.total);
    if (csv.is_open())
      csv << it << "," << mean.total << "," << mean.image_l1 << ","
          << mean.perceptual << "," << mean.mask_l1 << "," << mean.laplacian
          << "\n";
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it + 1 == cfg.iterations))
      std::fprintf(stderr, "[train] iter %d/%d loss %.6f\n", it + 1,
                   cfg.iterations, mean.total);
  }
  return result;
}

EvalConfig load_eval_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("eval config: cannot open " + path);
  const nlohmann::json j = nlohmann::json::parse(f);
  EvalConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.subject_seed_base = j.value("subject_seed_base", cfg.subject_seed_base);
  cfg.subjects = j.value("subjects", cfg.subjects);
  cfg.image_size = j.value("image_size", cfg.image_size);
  cfg.eval_views = j.value("eval_views", cfg.eval_views);
  if (j.contains("steps")) cfg.steps = j["steps"].get<std::vector<int>>();
  if (j.contains("subdivisions"))
    cfg.subdivisions = j["subdivisions"].get<std::vector<int>>();
  if (j.contains("pose_noise"))
    cfg.pose_noise = j["pose_noise"].get<std::vector<double>>();
  cfg.pose_magnitude = j.value("pose_magnitude", cfg.pose_magnitude);
  cfg.vertex_step_bound = j.value("vertex_step_bound", cfg.vertex_step_bound);
  if (j.contains("defaults")) {
    cfg.defaults.scale = j["defaults"].value("scale", cfg.defaults.scale);
    cfg.defaults.opacity = j["defaults"].value("opacity", cfg.defaults.opacity);
  }
  return cfg;
}

int infer_sources_from_params(const ParamStore& params) {
  const auto& w = params.at("head.gauss.l0.w");
  const int in_w = w.shape.at(1);
  const int n = (in_w - 3 * kFeatureWidth) / kFeatureWidth;
  if (3 * kFeatureWidth + n * kFeatureWidth != in_w || n < 1)
    throw std::runtime_error("checkpoint: unexpected gaussian head width");
  return n;
}

std::vector<MetricsRow> evaluate(const ParamStore& params,
                                 const EvalConfig& cfg) {
  const int n_sources = infer_sources_from_params(params);
  std::vector<MetricsRow> rows;

  for (int s = 0; s < cfg.subjects; ++s) {
    const SyntheticSubject subject =
        make_synthetic_subject(cfg.subject_seed_base + uint64_t(s));
    Rng rng(cfg.seed ^ hash_name("eval-subject") ^
            (uint64_t(s) * 0x9e3779b97f4a7c15ull));

    // Clean source views.
    SourceSet clean_sources;
    const double base_azimuth = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    for (int n = 0; n < n_sources; ++n) {
      SourceView view;
      const double azimuth = base_azimuth +
                             (2.0 * 3.14159265358979323846 * n) / n_sources +
                             rng.uniform(-0.2, 0.2);
      view.camera = subject_camera(subject, azimuth, rng.uniform(-0.15, 0.25),
                                   cfg.image_size, cfg.image_size);
      view.pose = sample_pose(subject, rng, cfg.pose_magnitude);
      render_reference(subject, view.pose, view.camera, view.image, view.mask);
      clean_sources.push_back(std::move(view));
    }

    // Held-out targets: novel cameras and novel poses.
    struct Target {
      Pose pose;
      CameraModel camera;
      Image image, mask;
    };
    std::vector<Target> targets(size_t(cfg.eval_views));
    for (auto& target : targets) {
      target.camera = subject_camera(
          subject, rng.uniform(0.0, 2.0 * 3.14159265358979323846),
          rng.uniform(-0.15, 0.25), cfg.image_size, cfg.image_size);
      target.pose = sample_pose(subject, rng, cfg.pose_magnitude);
      render_reference(subject, target.pose, target.camera, target.image,
                       target.mask);
    }

    for (const int k : cfg.subdivisions)
      for (const double sigma : cfg.pose_noise) {
        SourceSet sources = clean_sources;
        if (sigma > 0.0)
          for (size_t n = 0; n < sources.size(); ++n)
            sources[n].pose = perturb_pose(
                sources[n].pose, sigma,
                cfg.seed ^ hash_name("pose-noise") ^
                    (uint64_t(s) * 1315423911ull) ^ (uint64_t(n) * 2654435761ull));

        for (const int T : cfg.steps) {
          const ReconConfig rc = recon_config(T, k, n_sources,
                                              cfg.vertex_step_bound,
                                              cfg.defaults);
          const auto recon_start = Clock::now();
          const ReconResult recon =
              reconstruct(sources, subject.rig, T, params, rc);
          const double recon_ms = ms_since(recon_start);

          MetricsRow row;
          row.subject = "subject_" + std::to_string(cfg.subject_seed_base + s);
          row.steps = T;
          row.subdivision = k;
          row.pose_noise = sigma;
          row.reconstruction_ms = recon_ms;
          double render_ms = 0.0;
          for (const Target& target : targets) {
            const PosedGoM posed = articulate(recon.gom, target.pose);
            const auto gaussians = gaussians_world(posed);
            const auto render_start = Clock::now();
            const RenderOutput out =
                rasterize(gaussians, target.camera, rc.raster);
            render_ms += ms_since(render_start);
            row.psnr += psnr(out.image, target.image);
            row.ssim += ssim(out.image, target.image);
            row.mask_iou += mask_iou(out.alpha, target.mask);
          }
          const double inv = 1.0 / double(targets.size());
          row.psnr *= inv;
          row.ssim *= inv;
          row.mask_iou *= inv;
          row.render_ms = render_ms * inv;
          rows.push_back(std::move(row));
        }
      }
  }
  return rows;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("metrics: cannot write " + path);
  f << "subject,steps,subdivision,pose_noise,psnr,ssim,mask_iou,"
       "reconstruction_ms,render_ms\n";
  for (const auto& row : rows)
    f << row.subject << "," << row.steps << "," << row.subdivision << ","
      << row.pose_noise << "," << row.psnr << "," << row.ssim << ","
      << row.mask_iou << "," << row.reconstruction_ms << "," << row.render_ms
      << "\n";
}

}  // namespace lgom
