#pragma once

#include <string>

#include "lgom/vecmath.hpp"

namespace lgom {

/// Pinhole camera. E is the world-to-camera rigid transform (+z forward);
/// pixel coordinates have the origin at the center of the top-left pixel.
struct CameraModel {
  Mat3 K = Mat3::Identity();
  Mat4 E = Mat4::Identity();
  int width = 0;
  int height = 0;

  double fx() const { return K(0, 0); }
  double fy() const { return K(1, 1); }
  double cx() const { return K(0, 2); }
  double cy() const { return K(1, 2); }
  Mat3 rotation() const { return E.block<3, 3>(0, 0); }
  Vec3 translation() const { return E.block<3, 1>(0, 3); }

  Vec3 to_camera(const Vec3& world) const {
    return rotation() * world + translation();
  }
  /// Projects a camera-space point; caller checks z against the near plane.
  Vec2 project_camera_point(const Vec3& m) const {
    return Vec2(fx() * m.x() / m.z() + cx(), fy() * m.y() / m.z() + cy());
  }
};

/// Throws std::invalid_argument on a non-orthonormal rotation block or
/// non-positive focal lengths.
void validate_camera(const CameraModel& cam);

/// Camera looking at `target` from `eye` with the given vertical up hint.
CameraModel make_lookat_camera(const Vec3& eye, const Vec3& target,
                               const Vec3& up, double focal_px, int width,
                               int height);

void save_camera_json(const std::string& path, const CameraModel& cam);
CameraModel load_camera_json(const std::string& path);

}  // namespace lgom
