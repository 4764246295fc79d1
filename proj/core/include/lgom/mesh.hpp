#pragma once

#include <array>
#include <string>
#include <vector>

#include "lgom/vecmath.hpp"

namespace lgom {

/// Triangle mesh with counter-clockwise winding. Positions in meters.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  int vertex_count() const { return int(vertices.size()); }
  int face_count() const { return int(faces.size()); }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;
};

/// Checks index bounds, degenerate faces, edge-manifoldness (each undirected
/// edge in at most 2 faces) and winding consistency (each directed edge at
/// most once).
ValidationReport validate_mesh(const TriMesh& mesh);

/// Sparse linear map from low-res vertex positions to high-res positions.
/// Row r holds the parents of high-res vertex r; weights sum to 1.
struct Prolongation {
  int rows = 0;
  int cols = 0;
  std::vector<std::vector<std::pair<int, double>>> entries;

  static Prolongation identity(int n);
  /// Composition: this after inner (rows of `inner` feed columns of `this`).
  Prolongation compose_after(const Prolongation& inner) const;
};

/// One 4-to-1 midpoint subdivision. New vertices are appended after the
/// originals in sorted undirected-edge order (min endpoint, then max), so the
/// output is reproducible bit-for-bit. Face j splits into children
/// 4j..4j+3 = (a,mab,mca), (b,mbc,mab), (c,mca,mbc), (mab,mbc,mca).
/// Throws std::invalid_argument with the validation report text if the input
/// mesh is invalid.
std::pair<TriMesh, Prolongation> subdivide_midpoint(const TriMesh& mesh);

std::vector<Vec3> prolong(const Prolongation& p, const std::vector<Vec3>& low);

/// Adjoint of prolong: accumulates P^T * grad_high.
std::vector<Vec3> prolong_vjp(const Prolongation& p,
                              const std::vector<Vec3>& grad_high);

/// Per-face local-to-world map A = sigma * [t_hat b_hat n_hat], with
/// sigma = sqrt(2 * area). Columns are mutually orthogonal with norm sigma.
struct LocalFrame {
  Mat3 A;
  double sigma = 0.0;
};

constexpr double kDegenerateFaceArea = 1e-12;

/// Throws std::invalid_argument on a degenerate face (area <= 1e-12 m^2).
LocalFrame face_frame(const Vec3& v1, const Vec3& v2, const Vec3& v3);

/// VJP of face_frame: grad_A -> gradients on the three corners.
void face_frame_vjp(const Vec3& v1, const Vec3& v2, const Vec3& v3,
                    const Mat3& grad_A, Vec3& g1, Vec3& g2, Vec3& g3);

/// Uniform (umbrella) Laplacian: mean of 1-ring neighbors minus the vertex.
/// Isolated vertices map to zero.
std::vector<Vec3> laplacian_vectors(const TriMesh& mesh,
                                    const std::vector<Vec3>& positions);

/// Adjoint of laplacian_vectors over the same mesh graph.
std::vector<Vec3> laplacian_vectors_vjp(const TriMesh& mesh,
                                        const std::vector<Vec3>& grad_out);

/// 1-ring adjacency (sorted, unique), shared by the Laplacian and by the
/// mesh-neighborhood attention.
std::vector<std::vector<int>> vertex_adjacency(const TriMesh& mesh);

void write_obj(const std::string& path, const TriMesh& mesh);
TriMesh read_obj(const std::string& path);

/// A few closed test meshes.
TriMesh make_icosahedron();
TriMesh make_tetrahedron();
TriMesh make_octahedron();
TriMesh make_cube_mesh();

}  // namespace lgom
