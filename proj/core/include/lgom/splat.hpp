#pragma once

#include <optional>
#include <vector>

#include "lgom/camera.hpp"
#include "lgom/gom.hpp"
#include "lgom/image.hpp"

namespace lgom {

/// Rasterizer constants. Defaults are the pinned values used across tests;
/// every knob is visible here.
struct RasterConfig {
  int tile_size = 16;
  double bbox_sigma = 3.0;        // minimum screen bounding-box radius, in sigmas
  double lowpass = 0.3;           // px^2 added to the projected covariance diagonal
  double alpha_cap = 0.999;
  double alpha_floor = 1.0 / 255.0;
  double transmittance_exit = 1e-4;
  double near_plane = 0.01;       // meters
};

struct Splat2D {
  Vec2 mean2d = Vec2::Zero();   // pixels
  Mat2 cov2d = Mat2::Zero();    // pixels^2, low-pass already added
  double depth = 0.0;           // camera-space z, meters
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

struct RenderOutput {
  Image image;  // H x W x 3, linear RGB
  Image alpha;  // H x W x 1, accumulated opacity (soft mask)
  int skipped_singular = 0;
};

/// EWA projection of one world Gaussian. Returns nullopt when the mean is
/// behind the near plane.
std::optional<Splat2D> project_gaussian(const WorldGaussian& g,
                                        const CameraModel& cam,
                                        const RasterConfig& cfg = {});

/// Tile-binned front-to-back compositing. Splats are globally sorted by
/// (depth, original index); output is bitwise independent of the worker
/// count.
RenderOutput rasterize(const std::vector<WorldGaussian>& gaussians,
                       const CameraModel& cam, const RasterConfig& cfg = {});

/// Brute-force reference: every surviving splat is evaluated at every pixel,
/// same sort and alpha rules, no tiling, no bounding boxes, no early exit.
RenderOutput rasterize_oracle(const std::vector<WorldGaussian>& gaussians,
                              const CameraModel& cam,
                              const RasterConfig& cfg = {});

/// Exact VJP of rasterize. grad_image is H x W x 3, grad_alpha H x W x 1.
/// Clamped paths (alpha cap, alpha floor, early exit) carry zero gradient;
/// the depth ordering is treated as constant.
std::vector<WorldGaussianGrad> rasterize_backward(
    const std::vector<WorldGaussian>& gaussians, const CameraModel& cam,
    const Image& grad_image, const Image& grad_alpha,
    const RasterConfig& cfg = {});

}  // namespace lgom
