#pragma once

#include <Eigen/Dense>
#include <cmath>

namespace lgom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Rodrigues rotation from an axis-angle vector (so(3) exponential map).
inline Mat3 rodrigues(const Vec3& r) {
  const double theta2 = r.squaredNorm();
  if (theta2 < 1e-16) {
    // Second-order series; exact enough below the branch point.
    const Mat3 k = skew(r);
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(r / theta);
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

/// VJP of rodrigues: given dL/dR, returns dL/dr.
/// Uses dR/dr_i = ((r_i [r]x + [r x (I - R) e_i]x) / theta^2) R,
/// with the small-angle limit dR/dr_i = [e_i]x.
inline Vec3 rodrigues_vjp(const Vec3& r, const Mat3& grad_R) {
  const double theta2 = r.squaredNorm();
  Vec3 g;
  if (theta2 < 1e-16) {
    for (int i = 0; i < 3; ++i) {
      Mat3 dR = skew(Vec3::Unit(i));
      g[i] = (grad_R.array() * dR.array()).sum();
    }
    return g;
  }
  const Mat3 R = rodrigues(r);
  const Mat3 rx = skew(r);
  const Mat3 ImR = Mat3::Identity() - R;
  for (int i = 0; i < 3; ++i) {
    const Vec3 col = ImR.col(i);
    const Mat3 dR = ((r[i] * rx + skew(r.cross(col))) / theta2) * R;
    g[i] = (grad_R.array() * dR.array()).sum();
  }
  return g;
}

/// VJP of normalize(v): g_v = (I - n n^T) g_n / |v|.
inline Vec3 normalize_vjp(const Vec3& v, const Vec3& grad_n) {
  const double len = v.norm();
  const Vec3 n = v / len;
  return (grad_n - n * n.dot(grad_n)) / len;
}

}  // namespace lgom
