#pragma once

#include <vector>

#include "lgom/gom.hpp"
#include "lgom/image.hpp"

namespace lgom {

struct LossWeights {
  double lambda_per = 1.0;
  double lambda_mask = 5.0;
  double lambda_lap = 100.0;
};

/// Mean absolute difference; grad is written for `a` when requested.
double l1_loss(const Image& a, const Image& b, Image* grad_a = nullptr,
               double grad_scale = 1.0);

/// PSNR in dB over [0,1] images; identical inputs report the 99.99 sentinel.
double psnr(const Image& a, const Image& b);
constexpr double kPsnrSentinel = 99.99;

/// SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// computed per channel and averaged. Windows are renormalized at borders.
double ssim(const Image& a, const Image& b);

/// SSIM plus d(ssim)/d(a) scaled by grad_scale, accumulated into grad_a.
double ssim_with_grad(const Image& a, const Image& b, Image& grad_a,
                      double grad_scale);

/// Intersection-over-union of masks thresholded at 0.5. Two empty masks
/// count as IoU 1.
double mask_iou(const Image& a, const Image& b, double threshold = 0.5);

struct LossBreakdown {
  double total = 0.0;
  double image_l1 = 0.0;
  double perceptual = 0.0;  // 1 - SSIM
  double mask_l1 = 0.0;
  double laplacian = 0.0;
};

/// Eq.-style per-view loss:
///   L1(images) + lambda_per (1 - SSIM(images)) + lambda_mask L1(masks)
///   + lambda_lap mean squared umbrella-vector norm on the low-res canonical
///   mesh.
/// Gradients (w.r.t. the predictions and the canonical low-res positions) are
/// accumulated into the optional outputs.
LossBreakdown loss_total(const Image& pred_image, const Image& pred_mask,
                         const Image& gt_image, const Image& gt_mask,
                         const CanonicalGoM& gom, const LossWeights& w,
                         Image* grad_pred_image = nullptr,
                         Image* grad_pred_mask = nullptr,
                         std::vector<Vec3>* grad_low_positions = nullptr);

/// The Laplacian regularizer alone (mean squared umbrella norm) with its
/// gradient, reusable for canonical positions that live outside a GoM.
double laplacian_loss(const TriMesh& mesh, const std::vector<Vec3>& positions,
                      std::vector<Vec3>* grad_positions = nullptr,
                      double grad_scale = 1.0);

}  // namespace lgom
