#pragma once

// Shared projection/binning machinery for the forward, oracle and backward
// rasterizer passes. Internal to the splat translation units.

#include <cmath>
#include <vector>

#include "lgom/splat.hpp"

namespace lgom::detail {

struct PreparedSplat {
  int original = 0;  // index into the input gaussian list
  Vec2 mean2d;
  Mat2 inv_cov;      // inverse of the low-passed 2D covariance
  double depth = 0.0;
  Vec3 color;
  double opacity = 0.0;
  double q_skip = 0.0;   // alpha < floor whenever q exceeds this
  double radius_x = 0.0; // bounding-box half extents, pixels
  double radius_y = 0.0;
};

struct PreparedScene {
  std::vector<PreparedSplat> splats;  // sorted by (depth, original index)
  int skipped_singular = 0;
};

/// Projects, culls, inverts covariances and sorts. The bounding radius is
/// max(bbox_sigma, sqrt(2 ln(255 * opacity)) + margin) sigmas per axis, so a
/// pixel outside the box always evaluates below the alpha floor; the box cut
/// therefore never changes the composited result.
PreparedScene prepare_scene(const std::vector<WorldGaussian>& gaussians,
                            const CameraModel& cam, const RasterConfig& cfg);

/// Per-tile index lists into PreparedScene::splats, in sorted order.
struct TileBins {
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<int>> bins;
};

TileBins bin_tiles(const PreparedScene& scene, const CameraModel& cam,
                   const RasterConfig& cfg);

/// alpha of splat s at pixel center (px, py); < 0 means "skip" (below floor).
/// Both the tiled and the brute-force paths use this exact routine.
inline double splat_alpha(const PreparedSplat& s, double px, double py,
                          const RasterConfig& cfg) {
  const double dx = px - s.mean2d.x();
  const double dy = py - s.mean2d.y();
  const double q = s.inv_cov(0, 0) * dx * dx + 2.0 * s.inv_cov(0, 1) * dx * dy +
                   s.inv_cov(1, 1) * dy * dy;
  if (q > s.q_skip) return -1.0;
  const double alpha =
      std::min(s.opacity * std::exp(-0.5 * q), cfg.alpha_cap);
  if (alpha < cfg.alpha_floor) return -1.0;
  return alpha;
}

/// VJP of the projection for one splat: pushes (g_mean2d, g_cov2d) back to
/// the world-space mean and covariance.
void projection_vjp(const WorldGaussian& g, const CameraModel& cam,
                    const Vec2& g_mean2d, const Mat2& g_cov2d,
                    Vec3& g_mu, Mat3& g_sigma);

}  // namespace lgom::detail
