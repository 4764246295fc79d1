#pragma once

#include <cstdint>
#include <vector>

#include "lgom/camera.hpp"
#include "lgom/image.hpp"
#include "lgom/mesh.hpp"
#include "lgom/rig.hpp"
#include "lgom/rng.hpp"

namespace lgom {

/// Seeded checker+noise texture, one style per bone capsule.
struct ProceduralTexture {
  struct BoneStyle {
    Vec3 color_a = Vec3::Zero();
    Vec3 color_b = Vec3::Zero();
    int checker_u = 4;
    int checker_v = 4;
    double noise_amp = 0.1;
  };
  std::vector<BoneStyle> bones;
  uint64_t noise_seed = 0;

  Vec3 sample(int bone, double u, double v) const;
};

/// Articulated tube-person: a 9-joint skeleton (root plus 2 joints per limb,
/// 4 limbs), one textured capsule per bone. The dense surface carries a
/// per-bone radial bulge the low-poly rig template does not model.
struct SyntheticSubject {
  uint64_t seed = 0;
  Rig rig;  // template: low-tessellation capsules, smooth distance weights
  TriMesh surface;
  std::vector<Vec2> surface_uvs;          // per vertex, in [0,1]^2
  std::vector<int> surface_face_bone;     // per face
  std::vector<VertexWeights> surface_weights;
  ProceduralTexture texture;
  Vec3 center = Vec3::Zero();             // canonical bounding-sphere center
  double extent = 1.0;                    // canonical bounding radius, meters
};

SyntheticSubject make_synthetic_subject(uint64_t seed);

/// Ground-truth oracle: skins the dense surface, z-buffers triangles with
/// perspective-correct barycentric UV lookup into the procedural texture,
/// flat (unshaded) colors. Mask is coverage. Deterministic.
void render_reference(const SyntheticSubject& subject, const Pose& pose,
                      const CameraModel& camera, Image& image, Image& mask);

/// Silhouette-only z-buffer pass over an arbitrary mesh (used to compare
/// splatted masks against the rig template's own coverage).
Image render_mesh_mask(const TriMesh& mesh, const std::vector<Vec3>& positions,
                       const CameraModel& camera);

/// Camera on a ring around the subject; azimuth/elevation in radians.
CameraModel subject_camera(const SyntheticSubject& subject, double azimuth,
                           double elevation, int width, int height);

/// Random articulated pose: bounded local-rotation perturbations composed
/// through the rig's forward kinematics.
Pose sample_pose(const SyntheticSubject& subject, Rng& rng, double magnitude);

}  // namespace lgom
