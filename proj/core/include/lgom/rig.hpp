#pragma once

#include <string>
#include <vector>

#include "lgom/mesh.hpp"
#include "lgom/vecmath.hpp"

namespace lgom {

/// Sparse skinning weights: at most 4 (joint, weight) pairs per vertex,
/// nonnegative with positive sum.
using VertexWeights = std::vector<std::pair<int, double>>;

/// A pose is the set of composed per-joint world transforms (R_j, t_j) that
/// linear blend skinning consumes directly (not local joint angles).
struct Pose {
  std::vector<Quat> rotations;     // unit quaternions, wxyz convention in files
  std::vector<Vec3> translations;  // meters

  int joint_count() const { return int(rotations.size()); }
  static Pose identity(int joints);
};

struct Rig {
  struct Joint {
    int parent = -1;       // -1 for roots
    Quat rest_rotation;    // local-to-parent
    Vec3 rest_translation; // local-to-parent, meters
  };

  std::vector<Joint> joints;
  TriMesh template_mesh;                 // low-res canonical T-pose
  std::vector<VertexWeights> weights;    // per template vertex

  int joint_count() const { return int(joints.size()); }
};

/// Validates parent forest, weight invariants and quaternion norms.
/// Throws std::invalid_argument on violation.
void validate_rig(const Rig& rig);

/// Classic linear blend skinning of a single point:
/// sum_j w_j (R_j v + t_j) / sum_j w_j. Throws on zero weight sum.
Vec3 lbs_point(const Vec3& v, const VertexWeights& weights, const Pose& pose);

/// d lbs / d v as a 3x3 matrix (the weight-normalized rotation blend).
Mat3 lbs_point_jacobian(const VertexWeights& weights, const Pose& pose);

/// Elementwise lbs_point over the template's weights. The identity pose
/// returns the input bitwise.
std::vector<Vec3> pose_mesh(const Rig& rig, const std::vector<Vec3>& canonical,
                            const Pose& pose);

/// Adds i.i.d. normal noise (std sigma) to each translation component and to
/// each rotation in its axis-angle tangent space (R <- R * exp(xi)), then
/// renormalizes. Deterministic given the seed; sigma == 0 returns the input.
/// Rotation noise is in radians, translation noise in meters.
Pose perturb_pose(const Pose& pose, double sigma, uint64_t seed);

/// Forward kinematics helper: composes local joint rotations (about the rest
/// joints) into the world transforms of Eq.-style LBS poses. All-identity
/// locals give the identity pose.
Pose fk_compose(const Rig& rig, const std::vector<Quat>& local_rotations);

/// World-space rest position of every joint.
std::vector<Vec3> rest_joint_positions(const Rig& rig);

void save_rig_json(const std::string& path, const Rig& rig);
Rig load_rig_json(const std::string& path);

void save_pose_json(const std::string& path, const Pose& pose);
Pose load_pose_json(const std::string& path);

void save_pose_sequence_json(const std::string& path,
                             const std::vector<Pose>& poses);
std::vector<Pose> load_pose_sequence_json(const std::string& path);

}  // namespace lgom
