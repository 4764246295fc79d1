#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lgom/diff.hpp"
#include "lgom/losses.hpp"
#include "lgom/rng.hpp"

using namespace lgom;

namespace {

Image random_image(int h, int w, int c, uint64_t seed) {
  Image img(h, w, c);
  Rng rng(seed);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

/// Independent scalar-loop SSIM oracle: direct 2D window sums with border
/// renormalization, no separability tricks.
double ssim_oracle(const Image& a, const Image& b) {
  const int radius = 5;
  const double sigma = 1.5;
  std::vector<double> taps(2 * radius + 1);
  double tap_sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    tap_sum += taps[i + radius];
  }
  for (auto& t : taps) t /= tap_sum;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0.0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int ch = 0; ch < a.channels; ++ch) {
        double wsum = 0, mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= a.height || xx < 0 || xx >= a.width) continue;
            const double w = taps[dy + radius] * taps[dx + radius];
            const double va = a.at(yy, xx, ch), vb = b.at(yy, xx, ch);
            wsum += w;
            mx += w * va;
            my += w * vb;
            mxx += w * va * va;
            myy += w * vb * vb;
            mxy += w * va * vb;
          }
        mx /= wsum;
        my /= wsum;
        mxx /= wsum;
        myy /= wsum;
        mxy /= wsum;
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cov = mxy - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  return acc / double(a.data.size());
}

CanonicalGoM toy_gom() {
  Rig rig;
  Rig::Joint root;
  root.parent = -1;
  root.rest_rotation = Quat::Identity();
  root.rest_translation = Vec3::Zero();
  rig.joints.push_back(root);
  rig.template_mesh = make_tetrahedron();
  rig.weights.assign(4, {{0, 1.0}});
  return init_canonical(rig, 0, {});
}

}  // namespace

TEST_CASE("l1 loss basics") {
  const Image a = random_image(8, 8, 3, 1);
  CHECK_EQ(l1_loss(a, a), 0.0);
  Image b = a;
  for (auto& v : b.data) v += 0.1;
  CHECK_EQ(l1_loss(b, a), doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("psnr closed forms") {
  const Image a = random_image(16, 16, 3, 2);
  CHECK_EQ(psnr(a, a), kPsnrSentinel);
  Image b = a;
  for (auto& v : b.data) v += 0.1;
  CHECK_EQ(psnr(b, a), doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("ssim equals 1 on identical images and is symmetric") {
  const Image a = random_image(24, 24, 3, 3);
  const Image b = random_image(24, 24, 3, 4);
  CHECK_EQ(ssim(a, a), doctest::Approx(1.0).epsilon(1e-12));
  CHECK_EQ(ssim(a, b), doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK_GE(ssim(a, b), -1.0);
  CHECK_LE(ssim(a, b), 1.0);
}

TEST_CASE("ssim matches the independent scalar-loop oracle") {
  const Image a = random_image(20, 14, 3, 5);
  const Image b = random_image(20, 14, 3, 6);
  CHECK_EQ(ssim(a, b), doctest::Approx(ssim_oracle(a, b)).epsilon(1e-6));
  // Window larger than the image: border renormalization handles 8x8.
  const Image c = random_image(8, 8, 3, 7);
  const Image d = random_image(8, 8, 3, 8);
  CHECK_EQ(ssim(c, d), doctest::Approx(ssim_oracle(c, d)).epsilon(1e-6));
}

TEST_CASE("ssim gradient matches finite differences") {
  const Image a0 = random_image(8, 8, 3, 9);
  const Image b = random_image(8, 8, 3, 10);
  Image grad(8, 8, 3);
  ssim_with_grad(a0, b, grad, 1.0);

  auto f = [&](const std::vector<double>& x) {
    Image a = a0;
    a.data = x;
    return ssim(a, b);
  };
  CHECK_LT(gradcheck(f, a0.data, grad.data, 1e-5), 1e-4);
}

TEST_CASE("mask IoU thresholds at 0.5") {
  Image a(2, 2, 1), b(2, 2, 1);
  a.data = {0.9, 0.1, 0.6, 0.2};
  b.data = {0.8, 0.7, 0.3, 0.1};
  // a: {0,2}, b: {0,1} -> intersection 1, union 3.
  CHECK_EQ(mask_iou(a, b), doctest::Approx(1.0 / 3.0));
  Image e1(2, 2, 1), e2(2, 2, 1);
  CHECK_EQ(mask_iou(e1, e2), 1.0);
}

TEST_CASE("loss_total is zero for a perfect match on a Laplacian-flat mesh") {
  // Coincident vertices make the umbrella vectors exactly zero.
  CanonicalGoM gom = toy_gom();
  for (auto& v : gom.low_mesh.vertices) v = Vec3(0.1, 0.2, 0.3);
  const Image img = random_image(8, 8, 3, 11);
  const Image mask = random_image(8, 8, 1, 12);
  const LossBreakdown out = loss_total(img, mask, img, mask, gom, {});
  CHECK_EQ(out.total, 0.0);
}

TEST_CASE("loss_total reduces to pure L1 when other weights vanish") {
  const CanonicalGoM gom = toy_gom();
  const Image gt = random_image(8, 8, 3, 13);
  Image pred = gt;
  for (auto& v : pred.data) v += 0.1;
  const Image mask = random_image(8, 8, 1, 14);
  LossWeights w;
  w.lambda_per = 0.0;
  w.lambda_mask = 0.0;
  w.lambda_lap = 0.0;
  const LossBreakdown out = loss_total(pred, mask, gt, mask, gom, w);
  CHECK_EQ(out.total, doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("loss_total gradients pass finite differences on all four terms") {
  CanonicalGoM gom = toy_gom();
  const Image gt_img = random_image(8, 8, 3, 15);
  const Image gt_mask = random_image(8, 8, 1, 16);
  const Image pred_img0 = random_image(8, 8, 3, 17);
  const Image pred_mask0 = random_image(8, 8, 1, 18);
  LossWeights w;  // all four terms active

  Image gi(8, 8, 3), gm(8, 8, 1);
  std::vector<Vec3> gl(4, Vec3::Zero());
  loss_total(pred_img0, pred_mask0, gt_img, gt_mask, gom, w, &gi, &gm, &gl);

  auto f_img = [&](const std::vector<double>& x) {
    Image p = pred_img0;
    p.data = x;
    return loss_total(p, pred_mask0, gt_img, gt_mask, gom, w).total;
  };
  // L1 has kinks; nudge away from equal pixels is implicit in random data.
  CHECK_LT(gradcheck(f_img, pred_img0.data, gi.data, 1e-6), 1e-3);

  auto f_mask = [&](const std::vector<double>& x) {
    Image p = pred_mask0;
    p.data = x;
    return loss_total(pred_img0, p, gt_img, gt_mask, gom, w).total;
  };
  CHECK_LT(gradcheck(f_mask, pred_mask0.data, gm.data, 1e-6), 1e-3);

  auto f_pos = [&](const std::vector<double>& x) {
    CanonicalGoM g2 = gom;
    for (int i = 0; i < 4; ++i)
      g2.low_mesh.vertices[i] = Vec3(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
    return loss_total(pred_img0, pred_mask0, gt_img, gt_mask, g2, w).total;
  };
  std::vector<double> pos0, gpos;
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 3; ++d) {
      pos0.push_back(gom.low_mesh.vertices[i][d]);
      gpos.push_back(gl[i][d]);
    }
  CHECK_LT(gradcheck(f_pos, pos0, gpos, 1e-6), 1e-4);
}

TEST_CASE("laplacian loss nonnegative and zero only when flat") {
  const CanonicalGoM gom = toy_gom();
  CHECK_GT(laplacian_loss(gom.low_mesh, gom.low_mesh.vertices), 0.0);
  std::vector<Vec3> flat(4, Vec3(1, 2, 3));
  CHECK_EQ(laplacian_loss(gom.low_mesh, flat), 0.0);
}
