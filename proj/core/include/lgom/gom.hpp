#pragma once

#include <string>
#include <vector>

#include "lgom/mesh.hpp"
#include "lgom/rig.hpp"
#include "lgom/vecmath.hpp"

namespace lgom {

/// Per-high-res-face Gaussian parameters stored as unconstrained encodings:
/// r axis-angle, s log-scale (local units), c color logits, o raw offset
/// (tanh-bounded at decode), alpha opacity logit.
struct FaceGaussian {
  Vec3 r = Vec3::Zero();
  Vec3 s = Vec3::Zero();
  Vec3 c = Vec3::Zero();
  Vec3 o = Vec3::Zero();
  double alpha = 0.0;
};

struct GomDefaults {
  double scale = 0.5;     // decoded isotropic scale in local units
  double opacity = 0.95;  // decoded opacity
};

/// Decode clamps and bounds. Scale clamps to [1e-4, 10] local units; offset
/// is bounded to +-2 local units via o_bound * tanh(o / o_bound).
constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 10.0;
constexpr double kOffsetBound = 2.0;

Vec3 decode_scale(const Vec3& s);
Vec3 decode_scale_vjp(const Vec3& s, const Vec3& grad_decoded);
Vec3 decode_offset(const Vec3& o);
Vec3 decode_offset_vjp(const Vec3& o, const Vec3& grad_decoded);
Vec3 decode_color(const Vec3& c);
Vec3 decode_color_vjp(const Vec3& c, const Vec3& grad_decoded);
double decode_opacity(double alpha);
double decode_opacity_vjp(double alpha, double grad_decoded);

/// The template encoding a zero network head decodes to the configured
/// defaults against.
FaceGaussian default_face_gaussian(const GomDefaults& d);

/// Canonical coupled-multi-resolution Gaussians-on-Mesh representation:
/// skinned low-res mesh, Gaussian-bearing high-res mesh, and the prolongation
/// map tying them together. Immutable once built.
struct CanonicalGoM {
  TriMesh low_mesh;
  std::vector<VertexWeights> weights;      // per low vertex
  TriMesh high_mesh;
  Prolongation prolongation;
  std::vector<FaceGaussian> face_gaussians;  // per high face
  int subdivision_levels = 0;

  int low_vertex_count() const { return low_mesh.vertex_count(); }
  int high_face_count() const { return high_mesh.face_count(); }
};

/// Posed counterpart. High vertices are always prolonged low vertices, never
/// skinned directly.
struct PosedGoM {
  const CanonicalGoM* canonical = nullptr;
  std::vector<Vec3> low_vertices;
  std::vector<Vec3> high_vertices;
};

struct WorldGaussian {
  Vec3 mu = Vec3::Zero();
  Mat3 sigma = Mat3::Zero();
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
};

/// Builds the canonical GoM from a rig template with k midpoint subdivisions
/// (k in {0,1,2,3}) and default Gaussians.
CanonicalGoM init_canonical(const Rig& rig, int k, const GomDefaults& defaults);

/// Same construction from an explicit low mesh + weights (used when loading).
CanonicalGoM build_canonical(TriMesh low_mesh, std::vector<VertexWeights> weights,
                             int k, const GomDefaults& defaults);

/// LBS on the low-res mesh (using the GoM's own weights), prolongation to
/// high res. Gaussians untouched.
PosedGoM articulate(const CanonicalGoM& gom, const Pose& pose);

/// Canonical-pose PosedGoM (positions copied, no skinning).
PosedGoM rest_pose(const CanonicalGoM& gom);

/// Converts every high face to a world-space Gaussian:
/// mu = centroid + A*decode(o), Sigma = A R S S^T R^T A^T.
std::vector<WorldGaussian> gaussians_world(const PosedGoM& posed);

/// Raw-array variant used when positions/parameters live outside a
/// CanonicalGoM (the training tape).
std::vector<WorldGaussian> gaussians_world_raw(
    const TriMesh& high_mesh, const std::vector<FaceGaussian>& face_gaussians,
    const std::vector<Vec3>& high_vertices);

/// Gradients flowing back from world Gaussians to posed high-res vertices and
/// face parameters.
struct WorldGaussianGrad {
  Vec3 d_mu = Vec3::Zero();
  Mat3 d_sigma = Mat3::Zero();  // treated as symmetric
  Vec3 d_color = Vec3::Zero();
  double d_opacity = 0.0;
};

void gaussians_world_vjp(const PosedGoM& posed,
                         const std::vector<WorldGaussianGrad>& grads,
                         std::vector<Vec3>& grad_high_vertices,
                         std::vector<FaceGaussian>& grad_face_gaussians);

void gaussians_world_raw_vjp(const TriMesh& high_mesh,
                             const std::vector<FaceGaussian>& face_gaussians,
                             const std::vector<Vec3>& high_vertices,
                             const std::vector<WorldGaussianGrad>& grads,
                             std::vector<Vec3>& grad_high_vertices,
                             std::vector<FaceGaussian>& grad_face_gaussians);

/// Checkpoint I/O via the tensor container. Array names:
/// low_vertices, faces_low, weights_idx, weights_val, prolongation_idx,
/// prolongation_val, faces_high, gauss_r, gauss_s, gauss_c, gauss_o,
/// gauss_alpha, subdivision_levels.
void save_gom(const std::string& path, const CanonicalGoM& gom);
CanonicalGoM load_gom(const std::string& path);

}  // namespace lgom
