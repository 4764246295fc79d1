#include "lgom/splat.hpp"

#include <algorithm>
#include <cmath>

#include "lgom/parallel.hpp"
#include "splat_internal.hpp"

namespace lgom {

std::optional<Splat2D> project_gaussian(const WorldGaussian& g,
                                        const CameraModel& cam,
                                        const RasterConfig& cfg) {
  const Vec3 m = cam.to_camera(g.mu);
  if (m.z() <= cfg.near_plane) return std::nullopt;

  Splat2D s;
  s.mean2d = cam.project_camera_point(m);
  s.depth = m.z();
  s.color = g.color;
  s.opacity = g.opacity;

  const double inv_z = 1.0 / m.z();
  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx() * inv_z, 0.0, -cam.fx() * m.x() * inv_z * inv_z,
         0.0, cam.fy() * inv_z, -cam.fy() * m.y() * inv_z * inv_z;
  const Eigen::Matrix<double, 2, 3> b = jac * cam.rotation();
  s.cov2d = b * g.sigma * b.transpose();
  s.cov2d(0, 0) += cfg.lowpass;
  s.cov2d(1, 1) += cfg.lowpass;
  return s;
}

namespace detail {

PreparedScene prepare_scene(const std::vector<WorldGaussian>& gaussians,
                            const CameraModel& cam, const RasterConfig& cfg) {
  PreparedScene scene;
  scene.splats.reserve(gaussians.size());
  for (size_t i = 0; i < gaussians.size(); ++i) {
    const auto projected = project_gaussian(gaussians[i], cam, cfg);
    if (!projected) continue;
    const Splat2D& sp = *projected;
    const double det = sp.cov2d(0, 0) * sp.cov2d(1, 1) -
                       sp.cov2d(0, 1) * sp.cov2d(1, 0);
    if (!(det > 0.0) || !std::isfinite(det)) {
      scene.skipped_singular++;
      continue;
    }
    PreparedSplat s;
    s.original = int(i);
    s.mean2d = sp.mean2d;
    s.depth = sp.depth;
    s.color = sp.color;
    s.opacity = sp.opacity;
    const double inv_det = 1.0 / det;
    s.inv_cov(0, 0) = sp.cov2d(1, 1) * inv_det;
    s.inv_cov(1, 1) = sp.cov2d(0, 0) * inv_det;
    s.inv_cov(0, 1) = -sp.cov2d(0, 1) * inv_det;
    s.inv_cov(1, 0) = s.inv_cov(0, 1);

    // q beyond which alpha certainly falls below the floor. The 1e-9 margin
    // absorbs exp/log rounding so the precheck never disagrees with the
    // exact comparison in splat_alpha.
    const double lf = std::log(s.opacity / cfg.alpha_floor);
    s.q_skip = lf > 0.0 ? 2.0 * (lf + 1e-9) : -1.0;

    const double ns = std::max(cfg.bbox_sigma,
                               lf > 0.0 ? std::sqrt(2.0 * lf) + 1e-6 : 0.0);
    s.radius_x = ns * std::sqrt(std::max(sp.cov2d(0, 0), 0.0));
    s.radius_y = ns * std::sqrt(std::max(sp.cov2d(1, 1), 0.0));
    scene.splats.push_back(s);
  }
  std::sort(scene.splats.begin(), scene.splats.end(),
            [](const PreparedSplat& a, const PreparedSplat& b) {
              if (a.depth != b.depth) return a.depth < b.depth;
              return a.original < b.original;
            });
  return scene;
}

TileBins bin_tiles(const PreparedScene& scene, const CameraModel& cam,
                   const RasterConfig& cfg) {
  TileBins bins;
  bins.tiles_x = (cam.width + cfg.tile_size - 1) / cfg.tile_size;
  bins.tiles_y = (cam.height + cfg.tile_size - 1) / cfg.tile_size;
  bins.bins.resize(size_t(bins.tiles_x) * bins.tiles_y);
  for (int k = 0; k < int(scene.splats.size()); ++k) {
    const PreparedSplat& s = scene.splats[k];
    const double x0 = s.mean2d.x() - s.radius_x;
    const double x1 = s.mean2d.x() + s.radius_x;
    const double y0 = s.mean2d.y() - s.radius_y;
    const double y1 = s.mean2d.y() + s.radius_y;
    // Pixel centers sit at integer coordinates.
    const int tx0 = std::max(0, int(std::floor(x0)) / cfg.tile_size);
    const int ty0 = std::max(0, int(std::floor(y0)) / cfg.tile_size);
    const int tx1 = std::min(bins.tiles_x - 1,
                             int(std::floor(x1)) / cfg.tile_size);
    const int ty1 = std::min(bins.tiles_y - 1,
                             int(std::floor(y1)) / cfg.tile_size);
    if (x1 < 0.0 || y1 < 0.0 || x0 > double(cam.width - 1) ||
        y0 > double(cam.height - 1))
      continue;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        bins.bins[size_t(ty) * bins.tiles_x + tx].push_back(k);
  }
  return bins;
}

void projection_vjp(const WorldGaussian& g, const CameraModel& cam,
                    const Vec2& g_mean2d, const Mat2& g_cov2d,
                    Vec3& g_mu, Mat3& g_sigma) {
  const Vec3 m = cam.to_camera(g.mu);
  const double inv_z = 1.0 / m.z();
  const double inv_z2 = inv_z * inv_z;
  Eigen::Matrix<double, 2, 3> jac;
  jac << cam.fx() * inv_z, 0.0, -cam.fx() * m.x() * inv_z2,
         0.0, cam.fy() * inv_z, -cam.fy() * m.y() * inv_z2;
  const Mat3 w = cam.rotation();
  const Eigen::Matrix<double, 2, 3> b = jac * w;

  // cov2d = B Sigma B^T (+ const lowpass).
  const Mat2 gs = 0.5 * (g_cov2d + g_cov2d.transpose());
  g_sigma = b.transpose() * gs * b;
  const Eigen::Matrix<double, 2, 3> g_b = 2.0 * gs * b * g.sigma;
  const Eigen::Matrix<double, 2, 3> g_jac = g_b * w.transpose();

  Vec3 g_m = Vec3::Zero();
  // Through the Jacobian entries.
  g_m.x() += g_jac(0, 2) * (-cam.fx() * inv_z2);
  g_m.y() += g_jac(1, 2) * (-cam.fy() * inv_z2);
  g_m.z() += g_jac(0, 0) * (-cam.fx() * inv_z2) +
             g_jac(1, 1) * (-cam.fy() * inv_z2) +
             g_jac(0, 2) * (2.0 * cam.fx() * m.x() * inv_z2 * inv_z) +
             g_jac(1, 2) * (2.0 * cam.fy() * m.y() * inv_z2 * inv_z);
  // Through the projected mean.
  g_m.x() += g_mean2d.x() * cam.fx() * inv_z;
  g_m.y() += g_mean2d.y() * cam.fy() * inv_z;
  g_m.z() += -g_mean2d.x() * cam.fx() * m.x() * inv_z2 -
             g_mean2d.y() * cam.fy() * m.y() * inv_z2;

  g_mu = w.transpose() * g_m;
}

}  // namespace detail

namespace {

using detail::PreparedScene;
using detail::PreparedSplat;

void composite_range(const PreparedScene& scene, const std::vector<int>& order,
                     const CameraModel& cam, const RasterConfig& cfg,
                     bool early_exit, int x0, int x1, int y0, int y1,
                     RenderOutput& out) {
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      double t = 1.0;
      double r = 0.0, g = 0.0, b = 0.0;
      for (const int k : order) {
        const PreparedSplat& s = scene.splats[k];
        const double alpha = detail::splat_alpha(s, double(x), double(y), cfg);
        if (alpha < 0.0) continue;
        const double w = t * alpha;
        r += w * s.color.x();
        g += w * s.color.y();
        b += w * s.color.z();
        t *= (1.0 - alpha);
        if (early_exit && t < cfg.transmittance_exit) break;
      }
      out.image.at(y, x, 0) = r;
      out.image.at(y, x, 1) = g;
      out.image.at(y, x, 2) = b;
      out.alpha.at(y, x, 0) = 1.0 - t;
    }
  }
}

}  // namespace

RenderOutput rasterize(const std::vector<WorldGaussian>& gaussians,
                       const CameraModel& cam, const RasterConfig& cfg) {
  validate_camera(cam);
  RenderOutput out;
  out.image = Image(cam.height, cam.width, 3);
  out.alpha = Image(cam.height, cam.width, 1);
  const PreparedScene scene = detail::prepare_scene(gaussians, cam, cfg);
  out.skipped_singular = scene.skipped_singular;
  const detail::TileBins bins = detail::bin_tiles(scene, cam, cfg);

  parallel_for(size_t(bins.tiles_x) * bins.tiles_y, [&](size_t tile) {
    const int tx = int(tile) % bins.tiles_x;
    const int ty = int(tile) / bins.tiles_x;
    const int x0 = tx * cfg.tile_size;
    const int y0 = ty * cfg.tile_size;
    const int x1 = std::min(cam.width, x0 + cfg.tile_size);
    const int y1 = std::min(cam.height, y0 + cfg.tile_size);
    composite_range(scene, bins.bins[tile], cam, cfg, /*early_exit=*/true, x0,
                    x1, y0, y1, out);
  });
  return out;
}

RenderOutput rasterize_oracle(const std::vector<WorldGaussian>& gaussians,
                              const CameraModel& cam, const RasterConfig& cfg) {
  validate_camera(cam);
  RenderOutput out;
  out.image = Image(cam.height, cam.width, 3);
  out.alpha = Image(cam.height, cam.width, 1);
  const PreparedScene scene = detail::prepare_scene(gaussians, cam, cfg);
  out.skipped_singular = scene.skipped_singular;
  std::vector<int> all(scene.splats.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  composite_range(scene, all, cam, cfg, /*early_exit=*/false, 0, cam.width, 0,
                  cam.height, out);
  return out;
}

}  // namespace lgom
