#include "lgom/camera.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace lgom {

void validate_camera(const CameraModel& cam) {
  const Mat3 r = cam.rotation();
  if (!(r * r.transpose()).isApprox(Mat3::Identity(), 1e-9))
    throw std::invalid_argument("camera: rotation block not orthonormal");
  if (!(cam.fx() > 0.0) || !(cam.fy() > 0.0))
    throw std::invalid_argument("camera: non-positive focal length");
  if (cam.width <= 0 || cam.height <= 0)
    throw std::invalid_argument("camera: non-positive image size");
}

CameraModel make_lookat_camera(const Vec3& eye, const Vec3& target,
                               const Vec3& up, double focal_px, int width,
                               int height) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  CameraModel cam;
  Mat3 r;
  r.row(0) = right;
  r.row(1) = down;
  r.row(2) = forward;
  cam.E = Mat4::Identity();
  cam.E.block<3, 3>(0, 0) = r;
  cam.E.block<3, 1>(0, 3) = -r * eye;
  cam.K = Mat3::Identity();
  cam.K(0, 0) = focal_px;
  cam.K(1, 1) = focal_px;
  cam.K(0, 2) = (width - 1) * 0.5;
  cam.K(1, 2) = (height - 1) * 0.5;
  cam.width = width;
  cam.height = height;
  return cam;
}

void save_camera_json(const std::string& path, const CameraModel& cam) {
  nlohmann::json j;
  nlohmann::json k = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    k.push_back({cam.K(r, 0), cam.K(r, 1), cam.K(r, 2)});
  nlohmann::json e = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    e.push_back({cam.E(r, 0), cam.E(r, 1), cam.E(r, 2), cam.E(r, 3)});
  j["K"] = k;
  j["E"] = e;
  j["width"] = cam.width;
  j["height"] = cam.height;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

CameraModel load_camera_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const nlohmann::json j = nlohmann::json::parse(f);
  CameraModel cam;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.K(r, c) = j.at("K").at(r).at(c).get<double>();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) cam.E(r, c) = j.at("E").at(r).at(c).get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  validate_camera(cam);
  return cam;
}

}  // namespace lgom
