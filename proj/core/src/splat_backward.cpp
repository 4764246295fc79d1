#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lgom/parallel.hpp"
#include "lgom/splat.hpp"
#include "splat_internal.hpp"

namespace lgom {

namespace {

using detail::PreparedScene;
using detail::PreparedSplat;

struct SplatAccum {
  Vec2 g_mean2d = Vec2::Zero();
  Mat2 g_inv_cov = Mat2::Zero();
  Vec3 g_color = Vec3::Zero();
  double g_opacity = 0.0;
};

struct Contribution {
  int bin_pos;     // position within the tile's bin list
  double alpha;
  double t_before;
  bool capped;
};

}  // namespace

std::vector<WorldGaussianGrad> rasterize_backward(
    const std::vector<WorldGaussian>& gaussians, const CameraModel& cam,
    const Image& grad_image, const Image& grad_alpha, const RasterConfig& cfg) {
  validate_camera(cam);
  if (grad_image.height != cam.height || grad_image.width != cam.width ||
      grad_image.channels != 3)
    throw std::invalid_argument("rasterize_backward: grad_image shape mismatch");
  if (grad_alpha.height != cam.height || grad_alpha.width != cam.width ||
      grad_alpha.channels != 1)
    throw std::invalid_argument("rasterize_backward: grad_alpha shape mismatch");

  const PreparedScene scene = detail::prepare_scene(gaussians, cam, cfg);
  const detail::TileBins bins = detail::bin_tiles(scene, cam, cfg);
  const size_t tile_count = bins.bins.size();

  // Per-tile accumulators, reduced sequentially in tile order afterwards so
  // the result does not depend on the worker partition.
  std::vector<std::vector<SplatAccum>> tile_accums(tile_count);

  parallel_for(tile_count, [&](size_t tile) {
    const std::vector<int>& order = bins.bins[tile];
    if (order.empty()) return;
    auto& accums = tile_accums[tile];
    accums.assign(order.size(), SplatAccum{});

    const int tx = int(tile) % bins.tiles_x;
    const int ty = int(tile) / bins.tiles_x;
    const int x0 = tx * cfg.tile_size;
    const int y0 = ty * cfg.tile_size;
    const int x1 = std::min(cam.width, x0 + cfg.tile_size);
    const int y1 = std::min(cam.height, y0 + cfg.tile_size);

    std::vector<Contribution> contribs;
    contribs.reserve(order.size());

    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        contribs.clear();
        double t = 1.0;
        for (size_t pos = 0; pos < order.size(); ++pos) {
          const PreparedSplat& s = scene.splats[order[pos]];
          const double alpha = detail::splat_alpha(s, double(x), double(y), cfg);
          if (alpha < 0.0) continue;
          contribs.push_back({int(pos), alpha, t, alpha >= cfg.alpha_cap});
          t *= (1.0 - alpha);
          if (t < cfg.transmittance_exit) break;
        }
        const double t_final = t;

        const Vec3 g_color_out(grad_image.at(y, x, 0), grad_image.at(y, x, 1),
                               grad_image.at(y, x, 2));
        const double g_alpha_out = grad_alpha.at(y, x, 0);
        if (contribs.empty()) continue;
        if (g_color_out.isZero(0.0) && g_alpha_out == 0.0) continue;

        double suffix = 0.0;  // sum over later splats of T_k alpha_k <gC, c_k>
        for (size_t ci = contribs.size(); ci-- > 0;) {
          const Contribution& con = contribs[ci];
          const PreparedSplat& s = scene.splats[order[con.bin_pos]];
          SplatAccum& acc = accums[con.bin_pos];
          const double common = g_color_out.dot(s.color);
          acc.g_color += con.t_before * con.alpha * g_color_out;
          const double one_minus = 1.0 - con.alpha;
          const double g_alpha = con.t_before * common - suffix / one_minus +
                                 g_alpha_out * t_final / one_minus;
          suffix += con.t_before * con.alpha * common;
          if (con.capped) continue;  // clamped: no gradient into alpha inputs
          acc.g_opacity += (con.alpha / s.opacity) * g_alpha;
          const double gq = -0.5 * con.alpha * g_alpha;
          const Vec2 d(double(x) - s.mean2d.x(), double(y) - s.mean2d.y());
          const Vec2 md = s.inv_cov * d;
          acc.g_mean2d += -2.0 * gq * md;
          acc.g_inv_cov += gq * d * d.transpose();
        }
      }
    }
  });

  // Deterministic reduction over tiles, then per-splat finalization.
  std::vector<SplatAccum> totals(scene.splats.size());
  for (size_t tile = 0; tile < tile_count; ++tile) {
    const auto& order = bins.bins[tile];
    const auto& accums = tile_accums[tile];
    if (accums.empty()) continue;
    for (size_t pos = 0; pos < order.size(); ++pos) {
      SplatAccum& dst = totals[order[pos]];
      const SplatAccum& src = accums[pos];
      dst.g_mean2d += src.g_mean2d;
      dst.g_inv_cov += src.g_inv_cov;
      dst.g_color += src.g_color;
      dst.g_opacity += src.g_opacity;
    }
  }

  std::vector<WorldGaussianGrad> grads(gaussians.size());
  for (size_t k = 0; k < scene.splats.size(); ++k) {
    const PreparedSplat& s = scene.splats[k];
    const SplatAccum& acc = totals[k];
    WorldGaussianGrad& out = grads[s.original];
    out.d_color = acc.g_color;
    out.d_opacity = acc.g_opacity;
    // inv_cov = cov2d^{-1}: g_cov2d = -M^T gM M^T with M symmetric.
    const Mat2 g_cov2d = -s.inv_cov * acc.g_inv_cov * s.inv_cov;
    detail::projection_vjp(gaussians[s.original], cam, acc.g_mean2d, g_cov2d,
                           out.d_mu, out.d_sigma);
  }
  return grads;
}

}  // namespace lgom
