#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "lgom/diff.hpp"
#include "lgom/mesh.hpp"
#include "lgom/rng.hpp"

using namespace lgom;

namespace {

int undirected_edge_count(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      edges[{std::min(a, b), std::max(a, b)}]++;
    }
  return int(edges.size());
}

Mat3 random_rotation(Rng& rng) {
  const Vec3 axis_angle(rng.normal(), rng.normal(), rng.normal());
  return rodrigues(axis_angle);
}

}  // namespace

TEST_CASE("validate_mesh accepts the icosahedron") {
  const auto report = validate_mesh(make_icosahedron());
  CHECK(report.ok);
  CHECK(report.violations.empty());
}

TEST_CASE("validate_mesh flags a degenerate face") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}};
  m.faces = {{0, 0, 1}};
  const auto report = validate_mesh(m);
  CHECK_FALSE(report.ok);
  REQUIRE_EQ(report.violations.size(), 1);
  CHECK(report.violations[0].find("degenerate face 0") != std::string::npos);
}

TEST_CASE("validate_mesh flags inconsistent winding on a shared edge") {
  // Independent oracle: enumerate the directed-edge multiset; consistent
  // winding requires each directed edge at most once.
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}};
  m.faces = {{0, 1, 2}, {1, 3, 2}};  // consistent
  std::map<std::pair<int, int>, int> directed;
  for (const auto& f : m.faces)
    for (int k = 0; k < 3; ++k) directed[{f[k], f[(k + 1) % 3]}]++;
  for (const auto& [e, c] : directed) CHECK_EQ(c, 1);
  CHECK(validate_mesh(m).ok);

  m.faces = {{0, 1, 2}, {1, 2, 3}};  // edge (1,2) traversed twice same way
  directed.clear();
  for (const auto& f : m.faces)
    for (int k = 0; k < 3; ++k) directed[{f[k], f[(k + 1) % 3]}]++;
  CHECK_EQ(directed[{1, 2}], 2);
  const auto report = validate_mesh(m);
  CHECK_FALSE(report.ok);
  bool mentions_edge = false;
  for (const auto& v : report.violations)
    if (v.find("(1,2)") != std::string::npos) mentions_edge = true;
  CHECK(mentions_edge);
}

TEST_CASE("validate_mesh flags an over-shared edge") {
  TriMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
  m.faces = {{0, 1, 2}, {1, 0, 3}, {0, 1, 4}};
  CHECK_FALSE(validate_mesh(m).ok);
}

TEST_CASE("midpoint subdivision counting and Euler characteristic") {
  const TriMesh ico = make_icosahedron();
  REQUIRE_EQ(ico.vertex_count(), 12);
  REQUIRE_EQ(ico.face_count(), 20);
  REQUIRE_EQ(undirected_edge_count(ico), 30);

  auto [once, p1] = subdivide_midpoint(ico);
  CHECK_EQ(once.vertex_count(), 42);
  CHECK_EQ(once.face_count(), 80);
  CHECK_EQ(undirected_edge_count(once), 120);
  CHECK_EQ(once.vertex_count() - undirected_edge_count(once) + once.face_count(), 2);
  CHECK(validate_mesh(once).ok);

  auto [twice, p2] = subdivide_midpoint(once);
  CHECK_EQ(twice.vertex_count(), 162);
  CHECK_EQ(twice.face_count(), 320);
  CHECK_EQ(undirected_edge_count(twice), 480);
  CHECK_EQ(twice.vertex_count() - undirected_edge_count(twice) + twice.face_count(), 2);
}

TEST_CASE("subdivision count formulas hold on ten closed meshes") {
  std::vector<TriMesh> meshes{make_icosahedron(), make_tetrahedron(),
                              make_octahedron(), make_cube_mesh()};
  while (meshes.size() < 10) {
    auto [next, p] = subdivide_midpoint(meshes[meshes.size() - 4]);
    meshes.push_back(std::move(next));
  }
  for (const auto& mesh : meshes) {
    const int v = mesh.vertex_count();
    const int e = undirected_edge_count(mesh);
    const int f = mesh.face_count();
    auto [sub, p] = subdivide_midpoint(mesh);
    CHECK_EQ(sub.vertex_count(), v + e);
    CHECK_EQ(sub.face_count(), 4 * f);
    CHECK_EQ(undirected_edge_count(sub), 2 * e + 3 * f);
    CHECK_EQ(sub.vertex_count() - undirected_edge_count(sub) + sub.face_count(),
             v - e + f);
  }
}

TEST_CASE("subdivision rejects an invalid mesh with the report") {
  TriMesh bad;
  bad.vertices = {{0, 0, 0}, {1, 0, 0}};
  bad.faces = {{0, 0, 1}};
  CHECK_THROWS_WITH_AS(subdivide_midpoint(bad),
                       doctest::Contains("degenerate face"),
                       std::invalid_argument);
}

TEST_CASE("tetrahedron prolongation rows are {0.5, 0.5} for new vertices") {
  auto [sub, p] = subdivide_midpoint(make_tetrahedron());
  REQUIRE_EQ(p.rows, sub.vertex_count());
  for (int r = 0; r < 4; ++r) {
    REQUIRE_EQ(p.entries[r].size(), 1);
    CHECK_EQ(p.entries[r][0].first, r);
    CHECK_EQ(p.entries[r][0].second, 1.0);
  }
  for (int r = 4; r < p.rows; ++r) {
    REQUIRE_EQ(p.entries[r].size(), 2);
    CHECK_EQ(p.entries[r][0].second, 0.5);
    CHECK_EQ(p.entries[r][1].second, 0.5);
  }
}

TEST_CASE("prolongation reproduces subdivided positions exactly") {
  auto [sub, p] = subdivide_midpoint(make_icosahedron());
  const auto reproduced = prolong(p, make_icosahedron().vertices);
  REQUIRE_EQ(reproduced.size(), sub.vertices.size());
  for (size_t i = 0; i < reproduced.size(); ++i)
    CHECK_EQ((reproduced[i] - sub.vertices[i]).norm(), 0.0);
}

TEST_CASE("prolong identity and midpoint examples") {
  const Prolongation id = Prolongation::identity(3);
  const std::vector<Vec3> pts{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}};
  const auto same = prolong(id, pts);
  for (size_t i = 0; i < pts.size(); ++i) CHECK_EQ((same[i] - pts[i]).norm(), 0.0);

  Prolongation p;
  p.rows = 3;
  p.cols = 2;
  p.entries = {{{0, 1.0}}, {{1, 1.0}}, {{0, 0.5}, {1, 0.5}}};
  const auto out = prolong(p, {{0, 0, 0}, {2, 0, 0}});
  CHECK_EQ(out[2], Vec3(1, 0, 0));
}

TEST_CASE("prolong commutes with rigid transforms (50 random)") {
  auto [sub, p] = subdivide_midpoint(make_icosahedron());
  const auto low = make_icosahedron().vertices;
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat3 r = random_rotation(rng);
    const Vec3 t(rng.normal(), rng.normal(), rng.normal());
    std::vector<Vec3> transformed(low.size());
    for (size_t i = 0; i < low.size(); ++i) transformed[i] = r * low[i] + t;
    const auto a = prolong(p, transformed);
    const auto b = prolong(p, low);
    for (size_t i = 0; i < a.size(); ++i)
      CHECK_LT((a[i] - (r * b[i] + t)).norm(), 1e-12);
  }
}

TEST_CASE("prolong is linear to 1e-12") {
  auto [sub, p] = subdivide_midpoint(make_octahedron());
  Rng rng(7);
  const int n = p.cols;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3> x(n), y(n), combo(n);
    const double a = rng.normal(), b = rng.normal();
    for (int i = 0; i < n; ++i) {
      x[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
      y[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
      combo[i] = a * x[i] + b * y[i];
    }
    const auto lhs = prolong(p, combo);
    const auto px = prolong(p, x);
    const auto py = prolong(p, y);
    for (int i = 0; i < p.rows; ++i)
      CHECK_LT((lhs[i] - (a * px[i] + b * py[i])).norm(), 1e-12);
  }
}

TEST_CASE("prolong rejects length mismatch") {
  const Prolongation id = Prolongation::identity(3);
  CHECK_THROWS_AS(prolong(id, {{0, 0, 0}}), std::invalid_argument);
}

TEST_CASE("face_frame axis-aligned example") {
  const LocalFrame f = face_frame({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
  CHECK_EQ(f.sigma, doctest::Approx(1.0));
  CHECK_LT((f.A - Mat3::Identity()).norm(), 1e-12);

  const LocalFrame g = face_frame({0, 0, 0}, {2, 0, 0}, {0, 2, 0});
  CHECK_EQ(g.sigma, doctest::Approx(2.0));
  CHECK_LT((g.A - 2.0 * Mat3::Identity()).norm(), 1e-12);
}

TEST_CASE("face_frame columns orthogonal with norm sigma on 100 random faces") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 v1(rng.normal(), rng.normal(), rng.normal());
    const Vec3 v2 = v1 + Vec3(rng.normal(), rng.normal(), rng.normal());
    const Vec3 v3 = v1 + Vec3(rng.normal(), rng.normal(), rng.normal());
    if (0.5 * ((v2 - v1).cross(v3 - v1)).norm() < 1e-6) continue;
    const LocalFrame f = face_frame(v1, v2, v3);
    const Mat3 gram = f.A.transpose() * f.A;
    CHECK_LT((gram - f.sigma * f.sigma * Mat3::Identity()).norm(), 1e-9);
    CHECK_GT(f.A.determinant(), 0.0);
  }
}

TEST_CASE("face_frame rotation equivariance") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec3 v1(rng.normal(), rng.normal(), rng.normal());
    const Vec3 v2 = v1 + Vec3(rng.normal(), rng.normal(), rng.normal());
    const Vec3 v3 = v1 + Vec3(rng.normal(), rng.normal(), rng.normal());
    if (0.5 * ((v2 - v1).cross(v3 - v1)).norm() < 1e-6) continue;
    const Mat3 r = random_rotation(rng);
    const Vec3 t(rng.normal(), rng.normal(), rng.normal());
    const LocalFrame base = face_frame(v1, v2, v3);
    const LocalFrame moved = face_frame(r * v1 + t, r * v2 + t, r * v3 + t);
    CHECK_LT((moved.A - r * base.A).norm(), 1e-9);
  }
}

TEST_CASE("face_frame rejects a degenerate face") {
  CHECK_THROWS_AS(face_frame({0, 0, 0}, {1, 0, 0}, {2, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("face_frame VJP matches finite differences") {
  Rng rng(5);
  Mat3 w;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) w(i, j) = rng.normal();
  const std::vector<double> x0{0.1, -0.2, 0.05, 1.1, 0.2, -0.1, -0.3, 0.9, 0.4};
  auto f = [&w](const std::vector<double>& x) {
    const LocalFrame frame =
        face_frame(Vec3(x[0], x[1], x[2]), Vec3(x[3], x[4], x[5]),
                   Vec3(x[6], x[7], x[8]));
    return (w.array() * frame.A.array()).sum();
  };
  Vec3 g1, g2, g3;
  face_frame_vjp(Vec3(x0[0], x0[1], x0[2]), Vec3(x0[3], x0[4], x0[5]),
                 Vec3(x0[6], x0[7], x0[8]), w, g1, g2, g3);
  const std::vector<double> analytic{g1.x(), g1.y(), g1.z(), g2.x(), g2.y(),
                                     g2.z(), g3.x(), g3.y(), g3.z()};
  CHECK_LT(gradcheck(f, x0, analytic, 1e-5), 1e-6);
}

TEST_CASE("laplacian_vectors on the regular tetrahedron") {
  const TriMesh tet = make_tetrahedron();
  const auto lap = laplacian_vectors(tet, tet.vertices);
  for (int i = 0; i < 4; ++i) {
    Vec3 mean = Vec3::Zero();
    for (int j = 0; j < 4; ++j)
      if (j != i) mean += tet.vertices[j];
    mean /= 3.0;
    const Vec3 expected = mean - tet.vertices[i];
    CHECK_LT((lap[i] - expected).norm(), 1e-14);
    CHECK_EQ(lap[i].norm(),
             doctest::Approx((tet.vertices[i] - mean).norm()));
  }
}

TEST_CASE("laplacian_vectors fixed point and invariances") {
  const TriMesh oct = make_octahedron();
  // Each octahedron vertex is the mean of its 4 neighbors only at the origin
  // mesh scaled arbitrarily? Check translation/rotation invariances instead,
  // plus the explicit all-zero fixed point on a flat strip.
  TriMesh strip;
  strip.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  strip.faces = {};
  // Isolated vertices: zero vectors.
  const auto lone = laplacian_vectors(strip, strip.vertices);
  for (const auto& v : lone) CHECK_EQ(v.norm(), 0.0);

  Rng rng(9);
  std::vector<Vec3> pos(oct.vertices);
  const auto base = laplacian_vectors(oct, pos);
  const Vec3 t(rng.normal(), rng.normal(), rng.normal());
  std::vector<Vec3> shifted(pos);
  for (auto& v : shifted) v += t;
  const auto lap_shifted = laplacian_vectors(oct, shifted);
  for (size_t i = 0; i < pos.size(); ++i)
    CHECK_LT((lap_shifted[i] - base[i]).norm(), 1e-12);

  const Mat3 r = random_rotation(rng);
  std::vector<Vec3> rotated(pos);
  for (auto& v : rotated) v = r * v;
  const auto lap_rotated = laplacian_vectors(oct, rotated);
  for (size_t i = 0; i < pos.size(); ++i)
    CHECK_LT((lap_rotated[i] - r * base[i]).norm(), 1e-9);
}

TEST_CASE("vertex equal to neighbor mean gives zero laplacian") {
  // Octahedron poles: each vertex's 4 neighbors average to the origin-mirrored
  // point; build a configuration where every vertex equals its neighbor mean
  // (all vertices coincident).
  const TriMesh oct = make_octahedron();
  std::vector<Vec3> coincident(oct.vertices.size(), Vec3(0.3, -0.2, 0.7));
  const auto lap = laplacian_vectors(oct, coincident);
  for (const auto& v : lap) CHECK_EQ(v.norm(), 0.0);
}

TEST_CASE("laplacian adjoint identity") {
  const TriMesh ico = make_icosahedron();
  Rng rng(21);
  std::vector<Vec3> x(ico.vertices.size()), y(ico.vertices.size());
  for (auto& v : x) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  for (auto& v : y) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  const auto lx = laplacian_vectors(ico, x);
  const auto lty = laplacian_vectors_vjp(ico, y);
  double lhs = 0.0, rhs = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    lhs += lx[i].dot(y[i]);
    rhs += x[i].dot(lty[i]);
  }
  CHECK_EQ(lhs, doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("obj round trip") {
  const TriMesh ico = make_icosahedron();
  const std::string path = "test_geometry_ico.obj";
  write_obj(path, ico);
  const TriMesh back = read_obj(path);
  REQUIRE_EQ(back.vertex_count(), ico.vertex_count());
  REQUIRE_EQ(back.face_count(), ico.face_count());
  for (int i = 0; i < ico.vertex_count(); ++i)
    CHECK_EQ((back.vertices[i] - ico.vertices[i]).norm(), 0.0);
  for (int f = 0; f < ico.face_count(); ++f) CHECK(back.faces[f] == ico.faces[f]);
  std::remove(path.c_str());
}
