#include "lgom/rig.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "lgom/rng.hpp"

namespace lgom {

Pose Pose::identity(int joints) {
  Pose p;
  p.rotations.assign(size_t(joints), Quat::Identity());
  p.translations.assign(size_t(joints), Vec3::Zero());
  return p;
}

void validate_rig(const Rig& rig) {
  const int j = rig.joint_count();
  for (int i = 0; i < j; ++i) {
    const int parent = rig.joints[i].parent;
    if (parent >= i || parent < -1)
      throw std::invalid_argument("rig: joint " + std::to_string(i) +
                                  " has invalid parent " + std::to_string(parent));
    if (std::abs(rig.joints[i].rest_rotation.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("rig: joint " + std::to_string(i) +
                                  " rest rotation not unit norm");
  }
  if (int(rig.weights.size()) != rig.template_mesh.vertex_count())
    throw std::invalid_argument("rig: weight count != template vertex count");
  for (size_t v = 0; v < rig.weights.size(); ++v) {
    if (rig.weights[v].size() > 4)
      throw std::invalid_argument("rig: vertex " + std::to_string(v) +
                                  " has more than 4 weights");
    double sum = 0.0;
    for (const auto& [joint, w] : rig.weights[v]) {
      if (joint < 0 || joint >= j)
        throw std::invalid_argument("rig: vertex " + std::to_string(v) +
                                    " references joint " + std::to_string(joint));
      if (w < 0.0)
        throw std::invalid_argument("rig: vertex " + std::to_string(v) +
                                    " has negative weight");
      sum += w;
    }
    if (!(sum > 0.0) || sum > 1.0 + 1e-9)
      throw std::invalid_argument("rig: vertex " + std::to_string(v) +
                                  " weight sum outside (0, 1]");
  }
}

Vec3 lbs_point(const Vec3& v, const VertexWeights& weights, const Pose& pose) {
  double sum = 0.0;
  Vec3 acc = Vec3::Zero();
  for (const auto& [joint, w] : weights) {
    acc += w * (pose.rotations[joint] * v + pose.translations[joint]);
    sum += w;
  }
  if (!(sum > 0.0))
    throw std::invalid_argument("lbs_point: zero weight sum");
  return acc / sum;
}

Mat3 lbs_point_jacobian(const VertexWeights& weights, const Pose& pose) {
  double sum = 0.0;
  Mat3 acc = Mat3::Zero();
  for (const auto& [joint, w] : weights) {
    acc += w * pose.rotations[joint].toRotationMatrix();
    sum += w;
  }
  return acc / sum;
}

std::vector<Vec3> pose_mesh(const Rig& rig, const std::vector<Vec3>& canonical,
                            const Pose& pose) {
  if (int(canonical.size()) != rig.template_mesh.vertex_count())
    throw std::invalid_argument("pose_mesh: position count mismatch");
  if (pose.joint_count() != rig.joint_count())
    throw std::invalid_argument("pose_mesh: pose joint count mismatch");
  bool is_identity = true;
  for (int j = 0; j < pose.joint_count() && is_identity; ++j) {
    const Quat& q = pose.rotations[j];
    is_identity = pose.translations[j].isZero(0.0) && q.w() == 1.0 &&
                  q.x() == 0.0 && q.y() == 0.0 && q.z() == 0.0;
  }
  if (is_identity) return canonical;  // bitwise identity contract

  std::vector<Vec3> out(canonical.size());
  for (size_t i = 0; i < canonical.size(); ++i) {
    try {
      out[i] = lbs_point(canonical[i], rig.weights[i], pose);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("pose_mesh: zero weight sum at vertex " +
                                  std::to_string(i));
    }
  }
  return out;
}

Pose perturb_pose(const Pose& pose, double sigma, uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("perturb_pose: sigma < 0");
  if (sigma == 0.0) return pose;
  Rng rng(seed);
  Pose out = pose;
  for (int j = 0; j < pose.joint_count(); ++j) {
    const Vec3 xi(rng.normal(0.0, sigma), rng.normal(0.0, sigma),
                  rng.normal(0.0, sigma));
    const Mat3 r = pose.rotations[j].toRotationMatrix() * rodrigues(xi);
    out.rotations[j] = Quat(r).normalized();
    for (int k = 0; k < 3; ++k)
      out.translations[j][k] = pose.translations[j][k] + rng.normal(0.0, sigma);
  }
  return out;
}

Pose fk_compose(const Rig& rig, const std::vector<Quat>& local_rotations) {
  if (int(local_rotations.size()) != rig.joint_count())
    throw std::invalid_argument("fk_compose: rotation count mismatch");
  const int j = rig.joint_count();
  std::vector<Quat> rest_q(j), posed_q(j);
  std::vector<Vec3> rest_t(j), posed_t(j);
  for (int i = 0; i < j; ++i) {
    const auto& joint = rig.joints[i];
    Quat qr = joint.rest_rotation;
    Vec3 tr = joint.rest_translation;
    Quat qp = joint.rest_rotation * local_rotations[i];
    Vec3 tp = joint.rest_translation;
    if (joint.parent >= 0) {
      const int p = joint.parent;
      tr = rest_t[p] + rest_q[p] * tr;
      qr = rest_q[p] * qr;
      tp = posed_t[p] + posed_q[p] * tp;
      qp = posed_q[p] * qp;
    }
    rest_q[i] = qr.normalized();
    rest_t[i] = tr;
    posed_q[i] = qp.normalized();
    posed_t[i] = tp;
  }
  // World LBS transform per joint: posed * rest^{-1}.
  Pose pose;
  pose.rotations.resize(j);
  pose.translations.resize(j);
  for (int i = 0; i < j; ++i) {
    const Quat q = (posed_q[i] * rest_q[i].conjugate()).normalized();
    pose.rotations[i] = q;
    pose.translations[i] = posed_t[i] - q * rest_t[i];
  }
  return pose;
}

std::vector<Vec3> rest_joint_positions(const Rig& rig) {
  const int j = rig.joint_count();
  std::vector<Quat> q(j);
  std::vector<Vec3> t(j);
  for (int i = 0; i < j; ++i) {
    const auto& joint = rig.joints[i];
    q[i] = joint.rest_rotation;
    t[i] = joint.rest_translation;
    if (joint.parent >= 0) {
      t[i] = t[joint.parent] + q[joint.parent] * t[i];
      q[i] = (q[joint.parent] * q[i]).normalized();
    }
  }
  return t;
}

namespace {

nlohmann::json quat_to_json(const Quat& q) {
  return {q.w(), q.x(), q.y(), q.z()};
}

Quat quat_from_json(const nlohmann::json& a) {
  return Quat(a.at(0).get<double>(), a.at(1).get<double>(),
              a.at(2).get<double>(), a.at(3).get<double>());
}

nlohmann::json vec3_to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec3_from_json(const nlohmann::json& a) {
  return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return nlohmann::json::parse(f);
}

}  // namespace

void save_rig_json(const std::string& path, const Rig& rig) {
  nlohmann::json j;
  j["joints"] = nlohmann::json::array();
  for (const auto& joint : rig.joints)
    j["joints"].push_back({{"parent", joint.parent},
                           {"rest_rotation", quat_to_json(joint.rest_rotation)},
                           {"rest_translation", vec3_to_json(joint.rest_translation)}});
  nlohmann::json verts = nlohmann::json::array();
  for (const auto& v : rig.template_mesh.vertices) verts.push_back(vec3_to_json(v));
  nlohmann::json faces = nlohmann::json::array();
  for (const auto& f : rig.template_mesh.faces)
    faces.push_back({f[0], f[1], f[2]});
  j["template"] = {{"vertices", verts}, {"faces", faces}};
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& vw : rig.weights) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& [joint, w] : vw) row.push_back({joint, w});
    weights.push_back(row);
  }
  j["weights"] = weights;
  write_json_file(path, j);
}

Rig load_rig_json(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  Rig rig;
  for (const auto& joint : j.at("joints")) {
    Rig::Joint out;
    out.parent = joint.at("parent").get<int>();
    out.rest_rotation = quat_from_json(joint.at("rest_rotation"));
    out.rest_translation = vec3_from_json(joint.at("rest_translation"));
    rig.joints.push_back(out);
  }
  for (const auto& v : j.at("template").at("vertices"))
    rig.template_mesh.vertices.push_back(vec3_from_json(v));
  for (const auto& f : j.at("template").at("faces"))
    rig.template_mesh.faces.push_back(
        {f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
  for (const auto& row : j.at("weights")) {
    VertexWeights vw;
    for (const auto& pair : row)
      vw.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
    rig.weights.push_back(std::move(vw));
  }
  validate_rig(rig);
  return rig;
}

void save_pose_json(const std::string& path, const Pose& pose) {
  nlohmann::json j;
  j["rotations"] = nlohmann::json::array();
  j["translations"] = nlohmann::json::array();
  for (const auto& q : pose.rotations) j["rotations"].push_back(quat_to_json(q));
  for (const auto& t : pose.translations)
    j["translations"].push_back(vec3_to_json(t));
  write_json_file(path, j);
}

Pose load_pose_json(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  Pose pose;
  for (const auto& q : j.at("rotations")) pose.rotations.push_back(quat_from_json(q));
  for (const auto& t : j.at("translations"))
    pose.translations.push_back(vec3_from_json(t));
  if (pose.rotations.size() != pose.translations.size())
    throw std::runtime_error("pose file: rotation/translation count mismatch: " +
                             path);
  for (const auto& q : pose.rotations)
    if (std::abs(q.norm() - 1.0) > 1e-9)
      throw std::runtime_error("pose file: non-unit quaternion: " + path);
  return pose;
}

void save_pose_sequence_json(const std::string& path,
                             const std::vector<Pose>& poses) {
  nlohmann::json j;
  j["poses"] = nlohmann::json::array();
  for (const auto& pose : poses) {
    nlohmann::json p;
    p["rotations"] = nlohmann::json::array();
    p["translations"] = nlohmann::json::array();
    for (const auto& q : pose.rotations) p["rotations"].push_back(quat_to_json(q));
    for (const auto& t : pose.translations)
      p["translations"].push_back(vec3_to_json(t));
    j["poses"].push_back(p);
  }
  write_json_file(path, j);
}

std::vector<Pose> load_pose_sequence_json(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  std::vector<Pose> poses;
  for (const auto& p : j.at("poses")) {
    Pose pose;
    for (const auto& q : p.at("rotations"))
      pose.rotations.push_back(quat_from_json(q));
    for (const auto& t : p.at("translations"))
      pose.translations.push_back(vec3_from_json(t));
    poses.push_back(std::move(pose));
  }
  return poses;
}

}  // namespace lgom
