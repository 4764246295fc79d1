#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgom/diff.hpp"
#include "lgom/losses.hpp"
#include "lgom/reconstruct.hpp"
#include "lgom/synth.hpp"

namespace lgom {

struct TrainConfig {
  uint64_t seed = 1;
  int subjects = 32;
  int iterations = 2000;
  int image_size = 64;
  int sources = 3;      // N
  int steps = 3;        // T
  int subdivision = 2;  // k
  LossWeights loss;
  double lr = 1e-3;
  double lr_encoder = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double pose_magnitude = 0.3;
  double vertex_step_bound = 0.05;
  GomDefaults defaults;
  int log_every = 50;
  std::string csv_path;  // per-iteration loss CSV when non-empty
};

TrainConfig load_train_config(const std::string& path);
void save_train_config(const std::string& path, const TrainConfig& cfg);

struct TrainResult {
  ParamStore params;
  std::vector<double> loss_curve;
};

/// Deterministic training loop: per iteration, one subject, N source views
/// with independent poses plus one target view/pose; the loss is the mean of
/// the per-view per-step terms over {sources + target} x {1..T}.
TrainResult train(const TrainConfig& cfg);

/// Builds the per-iteration sample (sources + target) for a config; shared
/// by train and by tests that need the exact same stream.
struct TrainSample {
  int subject_index = 0;
  SourceSet sources;
  Pose target_pose;
  CameraModel target_camera;
  Image target_image;
  Image target_mask;
};

TrainSample make_train_sample(const TrainConfig& cfg,
                              const std::vector<SyntheticSubject>& subjects,
                              int iteration);

struct MetricsRow {
  std::string subject;
  int steps = 0;        // T
  int subdivision = 0;  // k
  double pose_noise = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double mask_iou = 0.0;
  double reconstruction_ms = 0.0;
  double render_ms = 0.0;
};

struct EvalConfig {
  uint64_t seed = 4242;
  uint64_t subject_seed_base = 100000;  // held-out pool
  int subjects = 8;
  int image_size = 64;
  int eval_views = 2;  // novel target views/poses per subject
  std::vector<int> steps{1, 2, 3};
  std::vector<int> subdivisions{2};
  std::vector<double> pose_noise{0.0};
  double pose_magnitude = 0.3;
  double vertex_step_bound = 0.05;
  GomDefaults defaults;
};

EvalConfig load_eval_config(const std::string& path);

/// Grid evaluation on held-out subjects and held-out views/poses. Pose noise
/// is applied to the source poses handed to the reconstructor; targets stay
/// clean.
std::vector<MetricsRow> evaluate(const ParamStore& params, const EvalConfig& cfg);

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows);

/// Reads N back from the gaussian head's input width.
int infer_sources_from_params(const ParamStore& params);

}  // namespace lgom
