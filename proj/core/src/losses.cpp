#include "lgom/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace lgom {

namespace {

void check_same_shape(const Image& a, const Image& b, const char* who) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw std::invalid_argument(std::string(who) + ": image shape mismatch");
}

constexpr int kWindowRadius = 5;  // 11x11
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, 2 * kWindowRadius + 1>& window_taps() {
  static const auto taps = [] {
    std::array<double, 2 * kWindowRadius + 1> t{};
    for (int i = -kWindowRadius; i <= kWindowRadius; ++i)
      t[i + kWindowRadius] = std::exp(-0.5 * i * i / (kWindowSigma * kWindowSigma));
    double sum = 0.0;
    for (double v : t) sum += v;
    for (double& v : t) v /= sum;
    return t;
  }();
  return taps;
}

/// Border-renormalized separable Gaussian blur. The adjoint of this map is
/// blur_adjoint below.
Image blur_norm(const Image& img) {
  const auto& taps = window_taps();
  Image tmp(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double norm = 0.0;
      for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
        const int xx = x + t;
        if (xx < 0 || xx >= img.width) continue;
        norm += taps[t + kWindowRadius];
      }
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
          const int xx = x + t;
          if (xx < 0 || xx >= img.width) continue;
          acc += taps[t + kWindowRadius] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc / norm;
      }
    }
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y) {
    double norm = 0.0;
    for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
      const int yy = y + t;
      if (yy < 0 || yy >= img.height) continue;
      norm += taps[t + kWindowRadius];
    }
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
          const int yy = y + t;
          if (yy < 0 || yy >= img.height) continue;
          acc += taps[t + kWindowRadius] * img.at(yy, x, c);
        }
        out.at(y, x, c) = acc / norm;
      }
  }
  return out;
}

/// Adjoint of blur_norm: divide by the per-pixel window norm, then apply the
/// (self-adjoint) clipped kernel, axis by axis in reverse order.
Image blur_adjoint(const Image& g) {
  const auto& taps = window_taps();
  Image tmp(g.height, g.width, g.channels);
  for (int y = 0; y < g.height; ++y) {
    double norm = 0.0;
    for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
      const int yy = y + t;
      if (yy < 0 || yy >= g.height) continue;
      norm += taps[t + kWindowRadius];
    }
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c) tmp.at(y, x, c) = g.at(y, x, c) / norm;
  }
  Image tmp2(g.height, g.width, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c) {
        double acc = 0.0;
        for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
          const int yy = y + t;
          if (yy < 0 || yy >= g.height) continue;
          acc += taps[t + kWindowRadius] * tmp.at(yy, x, c);
        }
        tmp2.at(y, x, c) = acc;
      }
  Image tmp3(g.height, g.width, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double norm = 0.0;
      for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
        const int xx = x + t;
        if (xx < 0 || xx >= g.width) continue;
        norm += taps[t + kWindowRadius];
      }
      for (int c = 0; c < g.channels; ++c)
        tmp3.at(y, x, c) = tmp2.at(y, x, c) / norm;
    }
  Image out(g.height, g.width, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c) {
        double acc = 0.0;
        for (int t = -kWindowRadius; t <= kWindowRadius; ++t) {
          const int xx = x + t;
          if (xx < 0 || xx >= g.width) continue;
          acc += taps[t + kWindowRadius] * tmp3.at(y, xx, c);
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

Image hadamard(const Image& a, const Image& b) {
  Image out(a.height, a.width, a.channels);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

double ssim_impl(const Image& a, const Image& b, Image* grad_a,
                 double grad_scale) {
  check_same_shape(a, b, "ssim");
  const Image mu_a = blur_norm(a);
  const Image mu_b = blur_norm(b);
  const Image a2 = blur_norm(hadamard(a, a));
  const Image b2 = blur_norm(hadamard(b, b));
  const Image ab = blur_norm(hadamard(a, b));

  const double inv_n = 1.0 / double(a.data.size());
  double mean = 0.0;
  Image d_mu(a.height, a.width, a.channels);
  Image d_a2(a.height, a.width, a.channels);
  Image d_ab(a.height, a.width, a.channels);
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double u = mu_a.data[i];
    const double v = mu_b.data[i];
    const double va = a2.data[i] - u * u;
    const double vb = b2.data[i] - v * v;
    const double cov = ab.data[i] - u * v;
    const double a1 = 2.0 * u * v + kC1;
    const double a2t = 2.0 * cov + kC2;
    const double b1 = u * u + v * v + kC1;
    const double b2t = va + vb + kC2;
    const double s = (a1 * a2t) / (b1 * b2t);
    mean += s;
    if (grad_a) {
      // s as a function of (u, a2, ab); v, b2 are constants of the gt image.
      const double ds_du = (2.0 * v * a2t - 2.0 * v * a1) / (b1 * b2t) -
                           s * (2.0 * u / b1 - 2.0 * u / b2t);
      const double ds_da2 = -s / b2t;
      const double ds_dab = 2.0 * a1 / (b1 * b2t);
      d_mu.data[i] = ds_du * inv_n;
      d_a2.data[i] = ds_da2 * inv_n;
      d_ab.data[i] = ds_dab * inv_n;
    }
  }
  mean *= inv_n;

  if (grad_a) {
    const Image g_mu = blur_adjoint(d_mu);
    const Image g_a2 = blur_adjoint(d_a2);
    const Image g_ab = blur_adjoint(d_ab);
    for (size_t i = 0; i < a.data.size(); ++i)
      grad_a->data[i] += grad_scale * (g_mu.data[i] +
                                       2.0 * a.data[i] * g_a2.data[i] +
                                       b.data[i] * g_ab.data[i]);
  }
  return mean;
}

}  // namespace

double l1_loss(const Image& a, const Image& b, Image* grad_a, double grad_scale) {
  check_same_shape(a, b, "l1_loss");
  const double inv_n = 1.0 / double(a.data.size());
  double acc = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += std::abs(d);
    if (grad_a)
      grad_a->data[i] += grad_scale * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
  }
  return acc * inv_n;
}

double psnr(const Image& a, const Image& b) {
  check_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse == 0.0) return kPsnrSentinel;
  return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  return ssim_impl(a, b, nullptr, 0.0);
}

double ssim_with_grad(const Image& a, const Image& b, Image& grad_a,
                      double grad_scale) {
  return ssim_impl(a, b, &grad_a, grad_scale);
}

double mask_iou(const Image& a, const Image& b, double threshold) {
  check_same_shape(a, b, "mask_iou");
  double inter = 0.0, uni = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const bool pa = a.data[i] >= threshold;
    const bool pb = b.data[i] >= threshold;
    inter += (pa && pb) ? 1.0 : 0.0;
    uni += (pa || pb) ? 1.0 : 0.0;
  }
  return uni == 0.0 ? 1.0 : inter / uni;
}

double laplacian_loss(const TriMesh& mesh, const std::vector<Vec3>& positions,
                      std::vector<Vec3>* grad_positions, double grad_scale) {
  const std::vector<Vec3> lap = laplacian_vectors(mesh, positions);
  const double inv_n = 1.0 / double(positions.size());
  double acc = 0.0;
  for (const auto& v : lap) acc += v.squaredNorm();
  if (grad_positions) {
    std::vector<Vec3> d_lap(lap.size());
    for (size_t i = 0; i < lap.size(); ++i)
      d_lap[i] = grad_scale * 2.0 * inv_n * lap[i];
    const std::vector<Vec3> g = laplacian_vectors_vjp(mesh, d_lap);
    for (size_t i = 0; i < g.size(); ++i) (*grad_positions)[i] += g[i];
  }
  return acc * inv_n;
}

LossBreakdown loss_total(const Image& pred_image, const Image& pred_mask,
                         const Image& gt_image, const Image& gt_mask,
                         const CanonicalGoM& gom, const LossWeights& w,
                         Image* grad_pred_image, Image* grad_pred_mask,
                         std::vector<Vec3>* grad_low_positions) {
  LossBreakdown out;
  out.image_l1 = l1_loss(pred_image, gt_image, grad_pred_image, 1.0);
  const double s =
      grad_pred_image
          ? ssim_with_grad(pred_image, gt_image, *grad_pred_image, -w.lambda_per)
          : ssim(pred_image, gt_image);
  out.perceptual = 1.0 - s;
  out.mask_l1 = l1_loss(pred_mask, gt_mask, grad_pred_mask, w.lambda_mask);
  out.laplacian = laplacian_loss(gom.low_mesh, gom.low_mesh.vertices,
                                 grad_low_positions, w.lambda_lap);
  out.total = out.image_l1 + w.lambda_per * out.perceptual +
              w.lambda_mask * out.mask_l1 + w.lambda_lap * out.laplacian;
  return out;
}

}  // namespace lgom
