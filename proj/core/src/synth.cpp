#include "lgom/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lgom {

namespace {

double hash01(uint64_t seed, int64_t a, int64_t b, int64_t c) {
  Rng rng(seed ^ (uint64_t(a) * 0x9e3779b97f4a7c15ull) ^
          (uint64_t(b) * 0xc2b2ae3d27d4eb4full) ^
          (uint64_t(c) * 0x165667b19e3779f9ull));
  return rng.uniform();
}

/// Smoothed value noise on an integer lattice.
double value_noise(uint64_t seed, double x, double y, int lattice) {
  const double fx = x - std::floor(x);
  const double fy = y - std::floor(y);
  const int64_t ix = int64_t(std::floor(x));
  const int64_t iy = int64_t(std::floor(y));
  const double sx = fx * fx * (3 - 2 * fx);
  const double sy = fy * fy * (3 - 2 * fy);
  const double v00 = hash01(seed, ix, iy, lattice);
  const double v01 = hash01(seed, ix + 1, iy, lattice);
  const double v10 = hash01(seed, ix, iy + 1, lattice);
  const double v11 = hash01(seed, ix + 1, iy + 1, lattice);
  return (1 - sy) * ((1 - sx) * v00 + sx * v01) + sy * ((1 - sx) * v10 + sx * v11);
}

struct BoneSpec {
  int joint = 0;
  Vec3 p0 = Vec3::Zero();  // rest-space segment
  Vec3 p1 = Vec3::Zero();
  double radius = 0.05;
  double bulge_amp = 0.0;   // surface-only radial modulation
  double bulge_freq = 1.0;
  double bulge_phase = 0.0;
};

struct Skeleton {
  std::vector<Rig::Joint> joints;
  std::vector<BoneSpec> bones;
};

/// 9 joints: root torso plus (upper, lower) chains for two legs and two arms.
/// Seeded lengths and radii within +-20% of the defaults.
Skeleton make_skeleton(uint64_t seed) {
  Rng rng = named_stream(seed, "skeleton");
  auto vary = [&rng] { return rng.uniform(0.8, 1.2); };

  const double torso_len = 0.55 * vary();
  const double torso_r = 0.15 * vary();
  const double leg_upper = 0.38 * vary();
  const double leg_lower = 0.36 * vary();
  const double leg_r = 0.065 * vary();
  const double arm_upper = 0.28 * vary();
  const double arm_lower = 0.26 * vary();
  const double arm_r = 0.05 * vary();
  const double hip_x = 0.12 * vary();
  const double shoulder_x = 0.20 * vary();
  const double shoulder_y = torso_len * 0.85;

  Skeleton sk;
  auto add_joint = [&sk](int parent, const Vec3& local_t) {
    Rig::Joint j;
    j.parent = parent;
    j.rest_rotation = Quat::Identity();
    j.rest_translation = local_t;
    sk.joints.push_back(j);
    return int(sk.joints.size()) - 1;
  };

  const Vec3 pelvis(0.0, 0.95, 0.0);
  const int root = add_joint(-1, pelvis);
  // Legs: hip -> knee, knee -> foot (downwards).
  const int hip_l = add_joint(root, {-hip_x, -0.02, 0.0});
  const int knee_l = add_joint(hip_l, {0.0, -leg_upper, 0.0});
  const int hip_r = add_joint(root, {hip_x, -0.02, 0.0});
  const int knee_r = add_joint(hip_r, {0.0, -leg_upper, 0.0});
  // Arms: shoulder -> elbow, elbow -> hand (sideways T-pose).
  const int sho_l = add_joint(root, {-shoulder_x, shoulder_y, 0.0});
  const int elb_l = add_joint(sho_l, {-arm_upper, 0.0, 0.0});
  const int sho_r = add_joint(root, {shoulder_x, shoulder_y, 0.0});
  const int elb_r = add_joint(sho_r, {arm_upper, 0.0, 0.0});

  // Rest-space joint positions (identity rest rotations: plain accumulation).
  std::vector<Vec3> pos(sk.joints.size());
  for (size_t i = 0; i < sk.joints.size(); ++i) {
    pos[i] = sk.joints[i].rest_translation;
    if (sk.joints[i].parent >= 0) pos[i] += pos[sk.joints[i].parent];
  }

  Rng brng = named_stream(seed, "bulge");
  auto bone = [&](int joint, const Vec3& a, const Vec3& b, double r) {
    BoneSpec bs;
    bs.joint = joint;
    bs.p0 = a;
    bs.p1 = b;
    bs.radius = r;
    bs.bulge_amp = brng.uniform(0.10, 0.30);
    bs.bulge_freq = brng.uniform(1.0, 2.5);
    bs.bulge_phase = brng.uniform(0.0, 6.283185307179586);
    sk.bones.push_back(bs);
  };

  bone(root, pos[root], pos[root] + Vec3(0, torso_len, 0), torso_r);
  bone(hip_l, pos[hip_l], pos[knee_l], leg_r);
  bone(knee_l, pos[knee_l], pos[knee_l] + Vec3(0, -leg_lower, 0), leg_r * 0.9);
  bone(hip_r, pos[hip_r], pos[knee_r], leg_r);
  bone(knee_r, pos[knee_r], pos[knee_r] + Vec3(0, -leg_lower, 0), leg_r * 0.9);
  bone(sho_l, pos[sho_l], pos[elb_l], arm_r);
  bone(elb_l, pos[elb_l], pos[elb_l] + Vec3(-arm_lower, 0, 0), arm_r * 0.9);
  bone(sho_r, pos[sho_r], pos[elb_r], arm_r);
  bone(elb_r, pos[elb_r], pos[elb_r] + Vec3(arm_lower, 0, 0), arm_r * 0.9);
  return sk;
}

struct CapsuleMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec2> uvs;
  std::vector<std::array<int, 3>> faces;
};

/// Capsule around segment p0->p1. Rings run bottom pole to top pole; the
/// seam column is duplicated so UVs stay continuous. `bulge` modulates the
/// radius as a function of the normalized axial coordinate v.
CapsuleMesh make_capsule(const Vec3& p0, const Vec3& p1, double radius,
                         int segments, int hemi_rings, int cyl_rings,
                         double bulge_amp, double bulge_freq,
                         double bulge_phase) {
  const Vec3 axis = p1 - p0;
  const double len = axis.norm();
  const Vec3 w = axis / len;
  Vec3 ref = std::abs(w.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(1, 0, 0);
  const Vec3 u = w.cross(ref).normalized();
  const Vec3 v = w.cross(u);

  struct Ring {
    Vec3 center;
    double radius;
    double axial;  // for v coordinate
  };
  std::vector<Ring> rings;
  const double total = len + 2.0 * radius;
  for (int k = 1; k <= hemi_rings; ++k) {
    const double phi = -0.5 * M_PI + (double(k) / hemi_rings) * 0.5 * M_PI;
    rings.push_back({p0 + w * (radius * std::sin(phi)), radius * std::cos(phi),
                     radius + radius * std::sin(phi)});
  }
  for (int m = 1; m <= cyl_rings; ++m) {
    const double t = double(m) / (cyl_rings + 1);
    rings.push_back({p0 + axis * t, radius, radius + len * t});
  }
  for (int k = 0; k <= hemi_rings - 1; ++k) {
    const double phi = (double(k) / hemi_rings) * 0.5 * M_PI;
    rings.push_back({p1 + w * (radius * std::sin(phi)), radius * std::cos(phi),
                     radius + len + radius * std::sin(phi)});
  }

  CapsuleMesh mesh;
  const int cols = segments + 1;  // seam duplicated
  auto bulged = [&](double r, double axial) {
    const double vv = axial / total;
    return r * (1.0 + bulge_amp *
                          std::sin(2.0 * M_PI * bulge_freq * vv + bulge_phase));
  };
  // Bottom pole.
  mesh.vertices.push_back(p0 - w * radius);
  mesh.uvs.emplace_back(0.5, 0.0);
  const int first_ring = 1;
  for (const Ring& ring : rings) {
    for (int s = 0; s < cols; ++s) {
      const double ang = 2.0 * M_PI * double(s % segments) / segments;
      const double rr =
          ring.radius <= 1e-12 ? ring.radius : bulged(ring.radius, ring.axial);
      mesh.vertices.push_back(ring.center +
                              rr * (std::cos(ang) * u + std::sin(ang) * v));
      mesh.uvs.emplace_back(double(s) / segments, ring.axial / total);
    }
  }
  const int top_pole = int(mesh.vertices.size());
  mesh.vertices.push_back(p1 + w * radius);
  mesh.uvs.emplace_back(0.5, 1.0);

  auto ring_vertex = [&](int ring, int s) { return first_ring + ring * cols + s; };
  const int nrings = int(rings.size());
  // CCW from outside: bottom fan.
  for (int s = 0; s < segments; ++s)
    mesh.faces.push_back({0, ring_vertex(0, s + 1), ring_vertex(0, s)});
  for (int r = 0; r + 1 < nrings; ++r)
    for (int s = 0; s < segments; ++s) {
      const int a = ring_vertex(r, s), b = ring_vertex(r, s + 1);
      const int c = ring_vertex(r + 1, s), d = ring_vertex(r + 1, s + 1);
      mesh.faces.push_back({a, b, d});
      mesh.faces.push_back({a, d, c});
    }
  for (int s = 0; s < segments; ++s)
    mesh.faces.push_back(
        {top_pole, ring_vertex(nrings - 1, s), ring_vertex(nrings - 1, s + 1)});
  return mesh;
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t =
      std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

std::vector<VertexWeights> smooth_weights(const std::vector<Vec3>& points,
                                          const std::vector<BoneSpec>& bones) {
  constexpr double kFalloff = 0.06;  // meters
  std::vector<VertexWeights> out(points.size());
  std::vector<std::pair<double, int>> scored(bones.size());
  for (size_t i = 0; i < points.size(); ++i) {
    for (size_t b = 0; b < bones.size(); ++b) {
      const double d = std::max(
          0.0, point_segment_distance(points[i], bones[b].p0, bones[b].p1) -
                   bones[b].radius);
      scored[b] = {std::exp(-(d * d) / (kFalloff * kFalloff)), int(b)};
    }
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    double sum = 0.0;
    VertexWeights w;
    for (int k = 0; k < 4 && k < int(scored.size()); ++k) {
      if (scored[k].first < 1e-8 && k > 0) break;
      w.emplace_back(bones[scored[k].second].joint, scored[k].first);
      sum += scored[k].first;
    }
    if (sum <= 0.0) {
      w = {{bones[0].joint, 1.0}};
      sum = 1.0;
    }
    for (auto& [joint, weight] : w) weight /= sum;
    std::sort(w.begin(), w.end());
    out[i] = std::move(w);
  }
  return out;
}

}  // namespace

Vec3 ProceduralTexture::sample(int bone, double u, double v) const {
  const BoneStyle& style = bones.at(size_t(bone));
  const int cu = int(std::floor(u * style.checker_u));
  const int cv = int(std::floor(v * style.checker_v));
  const bool parity = ((cu + cv) & 1) == 0;
  Vec3 base = parity ? style.color_a : style.color_b;
  const double n =
      value_noise(noise_seed, u * 7.0 + bone * 13.0, v * 7.0, bone) - 0.5;
  base *= (1.0 + 2.0 * style.noise_amp * n);
  return base.cwiseMax(0.0).cwiseMin(1.0);
}

SyntheticSubject make_synthetic_subject(uint64_t seed) {
  const Skeleton sk = make_skeleton(seed);
  SyntheticSubject subject;
  subject.seed = seed;

  // Rig: joints + low-tessellation template capsules (no bulge).
  subject.rig.joints = sk.joints;
  for (const BoneSpec& bone : sk.bones) {
    const CapsuleMesh cap =
        make_capsule(bone.p0, bone.p1, bone.radius, 6, 1, 0, 0.0, 1.0, 0.0);
    const int base = subject.rig.template_mesh.vertex_count();
    for (const auto& p : cap.vertices)
      subject.rig.template_mesh.vertices.push_back(p);
    for (const auto& face : cap.faces)
      subject.rig.template_mesh.faces.push_back(
          {face[0] + base, face[1] + base, face[2] + base});
  }
  subject.rig.weights =
      smooth_weights(subject.rig.template_mesh.vertices, sk.bones);

  // Dense surface with bulges, UVs and per-face bone ids.
  for (size_t b = 0; b < sk.bones.size(); ++b) {
    const BoneSpec& bone = sk.bones[b];
    const CapsuleMesh cap =
        make_capsule(bone.p0, bone.p1, bone.radius, 12, 3, 4, bone.bulge_amp,
                     bone.bulge_freq, bone.bulge_phase);
    const int base = subject.surface.vertex_count();
    for (const auto& p : cap.vertices) subject.surface.vertices.push_back(p);
    for (const auto& uv : cap.uvs) subject.surface_uvs.push_back(uv);
    for (const auto& face : cap.faces) {
      subject.surface.faces.push_back(
          {face[0] + base, face[1] + base, face[2] + base});
      subject.surface_face_bone.push_back(int(b));
    }
  }
  subject.surface_weights = smooth_weights(subject.surface.vertices, sk.bones);

  // Texture styles.
  Rng trng = named_stream(seed, "texture");
  subject.texture.noise_seed = trng.next_u64();
  for (size_t b = 0; b < sk.bones.size(); ++b) {
    ProceduralTexture::BoneStyle style;
    style.color_a =
        Vec3(trng.uniform(0.15, 0.95), trng.uniform(0.15, 0.95),
             trng.uniform(0.15, 0.95));
    style.color_b =
        Vec3(trng.uniform(0.15, 0.95), trng.uniform(0.15, 0.95),
             trng.uniform(0.15, 0.95));
    style.checker_u = 2 + trng.uniform_int(5);
    style.checker_v = 2 + trng.uniform_int(5);
    style.noise_amp = trng.uniform(0.05, 0.2);
    subject.texture.bones.push_back(style);
  }

  // Canonical bounding sphere.
  Vec3 lo = subject.surface.vertices[0], hi = lo;
  for (const auto& p : subject.surface.vertices) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  subject.center = 0.5 * (lo + hi);
  subject.extent = 0.5 * (hi - lo).norm();
  return subject;
}

void render_reference(const SyntheticSubject& subject, const Pose& pose,
                      const CameraModel& camera, Image& image, Image& mask) {
  validate_camera(camera);
  image = Image(camera.height, camera.width, 3);
  mask = Image(camera.height, camera.width, 1);
  std::vector<double> zbuf(size_t(camera.height) * camera.width, 1e30);

  std::vector<Vec3> posed(subject.surface.vertices.size());
  for (size_t i = 0; i < posed.size(); ++i)
    posed[i] =
        lbs_point(subject.surface.vertices[i], subject.surface_weights[i], pose);

  const double near = 0.01;
  std::vector<Vec3> cam_pts(posed.size());
  std::vector<Vec2> screen(posed.size());
  for (size_t i = 0; i < posed.size(); ++i) {
    cam_pts[i] = camera.to_camera(posed[i]);
    if (cam_pts[i].z() > near)
      screen[i] = camera.project_camera_point(cam_pts[i]);
  }

  for (size_t f = 0; f < subject.surface.faces.size(); ++f) {
    const auto& face = subject.surface.faces[f];
    const Vec3& c0 = cam_pts[face[0]];
    const Vec3& c1 = cam_pts[face[1]];
    const Vec3& c2 = cam_pts[face[2]];
    if (c0.z() <= near || c1.z() <= near || c2.z() <= near) continue;
    const Vec2& s0 = screen[face[0]];
    const Vec2& s1 = screen[face[1]];
    const Vec2& s2 = screen[face[2]];
    const double area =
        (s1.x() - s0.x()) * (s2.y() - s0.y()) - (s2.x() - s0.x()) * (s1.y() - s0.y());
    if (area == 0.0) continue;
    const int x0 = std::max(0, int(std::ceil(std::min({s0.x(), s1.x(), s2.x()}))));
    const int x1 = std::min(camera.width - 1,
                            int(std::floor(std::max({s0.x(), s1.x(), s2.x()}))));
    const int y0 = std::max(0, int(std::ceil(std::min({s0.y(), s1.y(), s2.y()}))));
    const int y1 = std::min(camera.height - 1,
                            int(std::floor(std::max({s0.y(), s1.y(), s2.y()}))));
    const int bone = subject.surface_face_bone[f];
    const Vec2& uv0 = subject.surface_uvs[face[0]];
    const Vec2& uv1 = subject.surface_uvs[face[1]];
    const Vec2& uv2 = subject.surface_uvs[face[2]];
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double w0 = ((s1.x() - x) * (s2.y() - y) - (s2.x() - x) * (s1.y() - y)) / area;
        const double w1 = ((s2.x() - x) * (s0.y() - y) - (s0.x() - x) * (s2.y() - y)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        // Perspective-correct interpolation via 1/z.
        const double iz = w0 / c0.z() + w1 / c1.z() + w2 / c2.z();
        const double z = 1.0 / iz;
        double& zb = zbuf[size_t(y) * camera.width + x];
        if (z >= zb) continue;
        zb = z;
        const double u =
            (w0 * uv0.x() / c0.z() + w1 * uv1.x() / c1.z() + w2 * uv2.x() / c2.z()) * z;
        const double v =
            (w0 * uv0.y() / c0.z() + w1 * uv1.y() / c1.z() + w2 * uv2.y() / c2.z()) * z;
        const Vec3 color = subject.texture.sample(bone, u, v);
        image.at(y, x, 0) = color.x();
        image.at(y, x, 1) = color.y();
        image.at(y, x, 2) = color.z();
        mask.at(y, x, 0) = 1.0;
      }
  }
}

Image render_mesh_mask(const TriMesh& mesh, const std::vector<Vec3>& positions,
                       const CameraModel& camera) {
  Image mask(camera.height, camera.width, 1);
  const double near = 0.01;
  std::vector<Vec3> cam_pts(positions.size());
  std::vector<Vec2> screen(positions.size());
  for (size_t i = 0; i < positions.size(); ++i) {
    cam_pts[i] = camera.to_camera(positions[i]);
    if (cam_pts[i].z() > near)
      screen[i] = camera.project_camera_point(cam_pts[i]);
  }
  for (const auto& face : mesh.faces) {
    if (cam_pts[face[0]].z() <= near || cam_pts[face[1]].z() <= near ||
        cam_pts[face[2]].z() <= near)
      continue;
    const Vec2& s0 = screen[face[0]];
    const Vec2& s1 = screen[face[1]];
    const Vec2& s2 = screen[face[2]];
    const double area =
        (s1.x() - s0.x()) * (s2.y() - s0.y()) - (s2.x() - s0.x()) * (s1.y() - s0.y());
    if (area == 0.0) continue;
    const int x0 = std::max(0, int(std::ceil(std::min({s0.x(), s1.x(), s2.x()}))));
    const int x1 = std::min(camera.width - 1,
                            int(std::floor(std::max({s0.x(), s1.x(), s2.x()}))));
    const int y0 = std::max(0, int(std::ceil(std::min({s0.y(), s1.y(), s2.y()}))));
    const int y1 = std::min(camera.height - 1,
                            int(std::floor(std::max({s0.y(), s1.y(), s2.y()}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double w0 = ((s1.x() - x) * (s2.y() - y) - (s2.x() - x) * (s1.y() - y)) / area;
        const double w1 = ((s2.x() - x) * (s0.y() - y) - (s0.x() - x) * (s2.y() - y)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        mask.at(y, x, 0) = 1.0;
      }
  }
  return mask;
}

CameraModel subject_camera(const SyntheticSubject& subject, double azimuth,
                           double elevation, int width, int height) {
  const double dist = 2.4 * subject.extent;
  const Vec3 eye = subject.center +
                   dist * Vec3(std::sin(azimuth) * std::cos(elevation),
                               std::sin(elevation),
                               std::cos(azimuth) * std::cos(elevation));
  const double focal = 0.42 * double(std::min(width, height)) * dist /
                       subject.extent;
  return make_lookat_camera(eye, subject.center, Vec3(0, 1, 0), focal, width,
                            height);
}

Pose sample_pose(const SyntheticSubject& subject, Rng& rng, double magnitude) {
  std::vector<Quat> locals(subject.rig.joint_count(), Quat::Identity());
  for (int j = 0; j < subject.rig.joint_count(); ++j) {
    const double scale = j == 0 ? 0.35 * magnitude : magnitude;
    Vec3 axis_angle(rng.normal(0.0, scale), rng.normal(0.0, scale),
                    rng.normal(0.0, scale));
    const double limit = 0.7;
    if (axis_angle.norm() > limit) axis_angle *= limit / axis_angle.norm();
    locals[j] = Quat(rodrigues(axis_angle)).normalized();
  }
  return fk_compose(subject.rig, locals);
}

}  // namespace lgom
