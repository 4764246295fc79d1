#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lgom/camera.hpp"
#include "lgom/diff.hpp"
#include "lgom/features.hpp"
#include "lgom/gom.hpp"
#include "lgom/image.hpp"
#include "lgom/losses.hpp"
#include "lgom/rig.hpp"
#include "lgom/splat.hpp"

namespace lgom {

struct SourceView {
  Image image;  // H x W x 3, linear RGB
  Image mask;   // H x W x 1
  Pose pose;
  CameraModel camera;
};

using SourceSet = std::vector<SourceView>;

/// Throws unless N >= 1 and all images share one resolution.
void validate_sources(const SourceSet& sources);

struct ReconConfig {
  int steps = 3;        // T
  int subdivision = 2;  // k
  int sources = 3;      // N; fixes the gaussian-head input width
  double vertex_step_bound = 0.05;  // meters per step, tanh-bounded
  GomDefaults defaults;
  RasterConfig raster;
};

/// Everything carried across feedback steps.
struct FeedbackState {
  CanonicalGoM gom;
  std::vector<double> embeddings;  // V_low x kFeatureWidth
  int step = 0;
};

/// Registers every network parameter: encoder lift, pair lift, fusion and
/// mesh-attention weights, both update heads (final layers zero-initialized),
/// the embedding table and its (zero-initialized) residual update map.
void init_feedback_params(ParamStore& store, const ReconConfig& cfg,
                          int low_vertex_count, uint64_t seed);

FeedbackState init_feedback_state(const Rig& rig, const ParamStore& params,
                                  const ReconConfig& cfg);

/// Renders the source views from the current canonical estimate, encodes
/// real and predicted images, samples pixel-aligned features per low-res
/// vertex, fuses across sources and aggregates over the mesh graph.
/// Returns V_low x kFeatureWidth.
std::vector<double> compute_feedback_features(const FeedbackState& state,
                                              const SourceSet& sources,
                                              const ParamStore& params,
                                              const ReconConfig& cfg);

/// Residual vertex update, tanh-bounded at cfg.vertex_step_bound per step.
std::vector<Vec3> update_vertices(const FeedbackState& state,
                                  const std::vector<double>& feedback,
                                  const ParamStore& params,
                                  const ReconConfig& cfg);

/// Absolute Gaussian update: the head output is added to the template
/// encoding, so a zero head reproduces the defaults. Per-face input is the
/// concatenation of the three (prolongation-interpolated) corner feedback
/// features and per-source encoder features sampled at the projected current
/// Gaussian means.
std::vector<FaceGaussian> update_gaussians(const FeedbackState& state,
                                           const std::vector<Vec3>& updated_low,
                                           const std::vector<double>& feedback,
                                           const SourceSet& sources,
                                           const ParamStore& params,
                                           const ReconConfig& cfg);

FeedbackState feedback_step(const FeedbackState& state, const SourceSet& sources,
                            const ParamStore& params, const ReconConfig& cfg);

struct ReconResult {
  CanonicalGoM gom;
  std::vector<double> step_ms;
  /// Mean source-view PSNR of the representation after each step.
  std::vector<double> step_source_psnr;
};

ReconResult reconstruct(const SourceSet& sources, const Rig& rig, int steps,
                        const ParamStore& params, const ReconConfig& cfg);

/// Gradient bundle for one canonical state version.
struct StateGrad {
  std::vector<Vec3> d_low;               // canonical low positions
  std::vector<FaceGaussian> d_faces;     // face parameter encodings
  std::vector<double> d_embeddings;
};

/// Unrolled forward with caches, loss attachment and full reverse sweep.
/// Used by the trainer; forward-only callers use the free functions above.
class ReconTape {
 public:
  ReconTape(const SourceSet& sources, const Rig& rig, const ParamStore& params,
            const ReconConfig& cfg);
  ~ReconTape();

  /// Runs T feedback steps; states()[t] is GoM_t (0 = template).
  void run(int steps);

  const std::vector<FeedbackState>& states() const;

  /// Renders state t for an arbitrary view and records the pass so backward
  /// can route its gradients. Returns the pass id.
  int render_state(int t, const Pose& pose, const CameraModel& camera);
  const RenderOutput& render_output(int render_id) const;

  /// Adds d(loss)/d(render image|alpha) for a pass from render_state, plus
  /// d(loss)/d(canonical low positions of state t).
  void add_render_grad(int render_id, const Image& grad_image,
                       const Image& grad_alpha);
  void add_state_grad(int t, const std::vector<Vec3>& grad_low);

  /// Reverse sweep; parameter gradients accumulate into `grads`.
  void backward(GradStore& grads);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lgom
