#include "lgom/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lgom {

ValidationReport validate_mesh(const TriMesh& mesh) {
  ValidationReport report;
  const int nv = mesh.vertex_count();
  auto fail = [&report](std::string msg) {
    report.ok = false;
    report.violations.push_back(std::move(msg));
  };

  for (int f = 0; f < mesh.face_count(); ++f) {
    const auto& face = mesh.faces[f];
    bool in_range = true;
    for (int k = 0; k < 3; ++k) {
      if (face[k] < 0 || face[k] >= nv) {
        fail("face " + std::to_string(f) + " index out of range");
        in_range = false;
        break;
      }
    }
    if (!in_range) continue;
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2])
      fail("degenerate face " + std::to_string(f));
  }
  if (!report.ok) return report;

  std::map<std::pair<int, int>, int> undirected;
  std::map<std::pair<int, int>, int> directed;
  for (const auto& face : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = face[k];
      const int b = face[(k + 1) % 3];
      undirected[{std::min(a, b), std::max(a, b)}]++;
      directed[{a, b}]++;
    }
  }
  for (const auto& [edge, count] : undirected) {
    if (count > 2)
      fail("edge (" + std::to_string(edge.first) + "," +
           std::to_string(edge.second) + ") shared by " + std::to_string(count) +
           " faces");
  }
  for (const auto& [edge, count] : directed) {
    if (count > 1)
      fail("inconsistent winding on edge (" + std::to_string(edge.first) + "," +
           std::to_string(edge.second) + ")");
  }
  return report;
}

Prolongation Prolongation::identity(int n) {
  Prolongation p;
  p.rows = n;
  p.cols = n;
  p.entries.resize(size_t(n));
  for (int i = 0; i < n; ++i) p.entries[i] = {{i, 1.0}};
  return p;
}

Prolongation Prolongation::compose_after(const Prolongation& inner) const {
  if (cols != inner.rows)
    throw std::invalid_argument("prolongation compose: dimension mismatch");
  Prolongation out;
  out.rows = rows;
  out.cols = inner.cols;
  out.entries.resize(size_t(rows));
  for (int r = 0; r < rows; ++r) {
    std::map<int, double> acc;
    for (const auto& [mid, w_outer] : entries[r])
      for (const auto& [low, w_inner] : inner.entries[mid])
        acc[low] += w_outer * w_inner;
    out.entries[r].assign(acc.begin(), acc.end());
  }
  return out;
}

std::pair<TriMesh, Prolongation> subdivide_midpoint(const TriMesh& mesh) {
  const ValidationReport report = validate_mesh(mesh);
  if (!report.ok) {
    std::string msg = "subdivide_midpoint: invalid mesh:";
    for (const auto& v : report.violations) msg += " [" + v + "]";
    throw std::invalid_argument(msg);
  }

  const int nv = mesh.vertex_count();
  // Canonical new-vertex order: undirected edges sorted by (min, max).
  std::map<std::pair<int, int>, int> edge_to_new;
  for (const auto& face : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = face[k];
      const int b = face[(k + 1) % 3];
      edge_to_new.emplace(std::make_pair(std::min(a, b), std::max(a, b)), -1);
    }
  int next = nv;
  for (auto& [edge, idx] : edge_to_new) idx = next++;

  Prolongation p;
  p.rows = next;
  p.cols = nv;
  p.entries.resize(size_t(next));
  for (int i = 0; i < nv; ++i) p.entries[i] = {{i, 1.0}};
  for (const auto& [edge, idx] : edge_to_new)
    p.entries[idx] = {{edge.first, 0.5}, {edge.second, 0.5}};

  TriMesh out;
  // High-res positions come from the prolongation map itself so the coupling
  // is exact by construction.
  out.vertices = prolong(p, mesh.vertices);
  out.faces.reserve(mesh.faces.size() * 4);
  auto mid = [&edge_to_new](int a, int b) {
    return edge_to_new.at({std::min(a, b), std::max(a, b)});
  };
  for (const auto& face : mesh.faces) {
    const int a = face[0], b = face[1], c = face[2];
    const int mab = mid(a, b), mbc = mid(b, c), mca = mid(c, a);
    out.faces.push_back({a, mab, mca});
    out.faces.push_back({b, mbc, mab});
    out.faces.push_back({c, mca, mbc});
    out.faces.push_back({mab, mbc, mca});
  }
  return {std::move(out), std::move(p)};
}

std::vector<Vec3> prolong(const Prolongation& p, const std::vector<Vec3>& low) {
  if (int(low.size()) != p.cols)
    throw std::invalid_argument("prolong: expected " + std::to_string(p.cols) +
                                " low-res positions, got " +
                                std::to_string(low.size()));
  std::vector<Vec3> out(size_t(p.rows));
  for (int r = 0; r < p.rows; ++r) {
    Vec3 acc = Vec3::Zero();
    for (const auto& [col, w] : p.entries[r]) acc += w * low[col];
    out[r] = acc;
  }
  return out;
}

std::vector<Vec3> prolong_vjp(const Prolongation& p,
                              const std::vector<Vec3>& grad_high) {
  if (int(grad_high.size()) != p.rows)
    throw std::invalid_argument("prolong_vjp: gradient length mismatch");
  std::vector<Vec3> out(size_t(p.cols), Vec3::Zero());
  for (int r = 0; r < p.rows; ++r)
    for (const auto& [col, w] : p.entries[r]) out[col] += w * grad_high[r];
  return out;
}

LocalFrame face_frame(const Vec3& v1, const Vec3& v2, const Vec3& v3) {
  const Vec3 e1 = v2 - v1;
  const Vec3 e2 = v3 - v1;
  const Vec3 n_raw = e1.cross(e2);
  const double area = 0.5 * n_raw.norm();
  if (!(area > kDegenerateFaceArea))
    throw std::invalid_argument("face_frame: degenerate face (area " +
                                std::to_string(area) + ")");
  const double sigma = std::sqrt(2.0 * area);
  const Vec3 t_hat = e1.normalized();
  const Vec3 n_hat = n_raw.normalized();
  const Vec3 b_hat = n_hat.cross(t_hat);
  LocalFrame frame;
  frame.sigma = sigma;
  frame.A.col(0) = sigma * t_hat;
  frame.A.col(1) = sigma * b_hat;
  frame.A.col(2) = sigma * n_hat;
  return frame;
}

void face_frame_vjp(const Vec3& v1, const Vec3& v2, const Vec3& v3,
                    const Mat3& grad_A, Vec3& g1, Vec3& g2, Vec3& g3) {
  const Vec3 e1 = v2 - v1;
  const Vec3 e2 = v3 - v1;
  const Vec3 n_raw = e1.cross(e2);
  const double n_len = n_raw.norm();
  const double sigma = std::sqrt(n_len);
  const Vec3 t_hat = e1.normalized();
  const Vec3 n_hat = n_raw / n_len;
  const Vec3 b_hat = n_hat.cross(t_hat);

  // A = sigma * [t b n] with sigma^2 = |n_raw|.
  const Vec3 gA_t = grad_A.col(0);
  const Vec3 gA_b = grad_A.col(1);
  const Vec3 gA_n = grad_A.col(2);

  double g_sigma = gA_t.dot(t_hat) + gA_b.dot(b_hat) + gA_n.dot(n_hat);
  Vec3 g_that = sigma * gA_t;
  Vec3 g_bhat = sigma * gA_b;
  Vec3 g_nhat = sigma * gA_n;

  // Cross-product VJP: for c = a x b, g_a += b x g_c and g_b += g_c x a.
  // Here b_hat = n_hat x t_hat.
  g_nhat += t_hat.cross(g_bhat);
  g_that += g_bhat.cross(n_hat);

  // sigma = sqrt(|n_raw|): d sigma / d n_raw = n_hat / (2 sigma).
  Vec3 g_nraw = (g_sigma / (2.0 * sigma)) * n_hat;
  // n_hat = n_raw / |n_raw|.
  g_nraw += normalize_vjp(n_raw, g_nhat);
  // t_hat = e1 / |e1|.
  Vec3 g_e1 = normalize_vjp(e1, g_that);
  // n_raw = e1 x e2.
  g_e1 += e2.cross(g_nraw);
  Vec3 g_e2 = g_nraw.cross(e1);

  g1 = -g_e1 - g_e2;
  g2 = g_e1;
  g3 = g_e2;
}

std::vector<std::vector<int>> vertex_adjacency(const TriMesh& mesh) {
  std::vector<std::vector<int>> adj(size_t(mesh.vertex_count()));
  for (const auto& face : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = face[k];
      const int b = face[(k + 1) % 3];
      adj[a].push_back(b);
      adj[b].push_back(a);
    }
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  return adj;
}

std::vector<Vec3> laplacian_vectors(const TriMesh& mesh,
                                    const std::vector<Vec3>& positions) {
  if (int(positions.size()) != mesh.vertex_count())
    throw std::invalid_argument("laplacian_vectors: position count mismatch");
  const auto adj = vertex_adjacency(mesh);
  std::vector<Vec3> out(positions.size(), Vec3::Zero());
  for (size_t i = 0; i < positions.size(); ++i) {
    if (adj[i].empty()) continue;
    Vec3 mean = Vec3::Zero();
    for (int j : adj[i]) mean += positions[j];
    out[i] = mean / double(adj[i].size()) - positions[i];
  }
  return out;
}

std::vector<Vec3> laplacian_vectors_vjp(const TriMesh& mesh,
                                        const std::vector<Vec3>& grad_out) {
  if (int(grad_out.size()) != mesh.vertex_count())
    throw std::invalid_argument("laplacian_vectors_vjp: gradient count mismatch");
  const auto adj = vertex_adjacency(mesh);
  std::vector<Vec3> grad(grad_out.size(), Vec3::Zero());
  for (size_t i = 0; i < grad_out.size(); ++i) {
    if (adj[i].empty()) continue;
    grad[i] -= grad_out[i];
    const double w = 1.0 / double(adj[i].size());
    for (int j : adj[i]) grad[j] += w * grad_out[i];
  }
  return grad;
}

void write_obj(const std::string& path, const TriMesh& mesh) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_obj: cannot open " + path);
  f.precision(17);
  for (const auto& v : mesh.vertices)
    f << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& face : mesh.faces)
    f << "f " << face[0] + 1 << " " << face[1] + 1 << " " << face[2] + 1 << "\n";
  if (!f) throw std::runtime_error("write_obj: write failed: " + path);
}

TriMesh read_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_obj: cannot open " + path);
  TriMesh mesh;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      ss >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> face{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ss >> tok;
        face[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      mesh.faces.push_back(face);
    }
  }
  return mesh;
}

TriMesh make_icosahedron() {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  TriMesh m;
  m.vertices = {{-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
                {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
                {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return m;
}

TriMesh make_tetrahedron() {
  TriMesh m;
  m.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  return m;
}

TriMesh make_octahedron() {
  TriMesh m;
  m.vertices = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  m.faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
             {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  return m;
}

TriMesh make_cube_mesh() {
  TriMesh m;
  m.vertices = {{-1, -1, -1}, {1, -1, -1}, {1, 1, -1}, {-1, 1, -1},
                {-1, -1, 1},  {1, -1, 1},  {1, 1, 1},  {-1, 1, 1}};
  m.faces = {{0, 2, 1}, {0, 3, 2},   // z = -1
             {4, 5, 6}, {4, 6, 7},   // z = +1
             {0, 1, 5}, {0, 5, 4},   // y = -1
             {2, 3, 7}, {2, 7, 6},   // y = +1
             {1, 2, 6}, {1, 6, 5},   // x = +1
             {3, 0, 4}, {3, 4, 7}};  // x = -1
  return m;
}

}  // namespace lgom
