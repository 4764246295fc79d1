#include "lgom/gom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lgom/container.hpp"

namespace lgom {

Vec3 decode_scale(const Vec3& s) {
  Vec3 out;
  for (int k = 0; k < 3; ++k)
    out[k] = std::clamp(std::exp(s[k]), kScaleMin, kScaleMax);
  return out;
}

Vec3 decode_scale_vjp(const Vec3& s, const Vec3& grad_decoded) {
  Vec3 g = Vec3::Zero();
  for (int k = 0; k < 3; ++k) {
    const double e = std::exp(s[k]);
    if (e > kScaleMin && e < kScaleMax) g[k] = grad_decoded[k] * e;
  }
  return g;
}

Vec3 decode_offset(const Vec3& o) {
  Vec3 out;
  for (int k = 0; k < 3; ++k)
    out[k] = kOffsetBound * std::tanh(o[k] / kOffsetBound);
  return out;
}

Vec3 decode_offset_vjp(const Vec3& o, const Vec3& grad_decoded) {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    const double t = std::tanh(o[k] / kOffsetBound);
    g[k] = grad_decoded[k] * (1.0 - t * t);
  }
  return g;
}

Vec3 decode_color(const Vec3& c) {
  return Vec3(sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2]));
}

Vec3 decode_color_vjp(const Vec3& c, const Vec3& grad_decoded) {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    const double s = sigmoid(c[k]);
    g[k] = grad_decoded[k] * s * (1.0 - s);
  }
  return g;
}

double decode_opacity(double alpha) { return sigmoid(alpha); }

double decode_opacity_vjp(double alpha, double grad_decoded) {
  const double s = sigmoid(alpha);
  return grad_decoded * s * (1.0 - s);
}

FaceGaussian default_face_gaussian(const GomDefaults& d) {
  FaceGaussian g;
  g.r = Vec3::Zero();
  g.s = Vec3::Constant(std::log(d.scale));
  g.c = Vec3::Zero();  // decodes to 0.5 gray
  g.o = Vec3::Zero();
  g.alpha = logit(d.opacity);
  return g;
}

CanonicalGoM build_canonical(TriMesh low_mesh, std::vector<VertexWeights> weights,
                             int k, const GomDefaults& defaults) {
  if (k < 0 || k > 3)
    throw std::invalid_argument("build_canonical: subdivision level must be in "
                                "{0,1,2,3}, got " + std::to_string(k));
  const ValidationReport report = validate_mesh(low_mesh);
  if (!report.ok) {
    std::string msg = "build_canonical: invalid low mesh:";
    for (const auto& v : report.violations) msg += " [" + v + "]";
    throw std::invalid_argument(msg);
  }
  if (int(weights.size()) != low_mesh.vertex_count())
    throw std::invalid_argument("build_canonical: weight count mismatch");

  CanonicalGoM gom;
  gom.low_mesh = std::move(low_mesh);
  gom.weights = std::move(weights);
  gom.subdivision_levels = k;

  TriMesh current = gom.low_mesh;
  Prolongation total = Prolongation::identity(current.vertex_count());
  for (int level = 0; level < k; ++level) {
    auto [next, p] = subdivide_midpoint(current);
    total = p.compose_after(total);
    current = std::move(next);
  }
  gom.high_mesh = std::move(current);
  gom.prolongation = std::move(total);
  gom.face_gaussians.assign(size_t(gom.high_mesh.face_count()),
                            default_face_gaussian(defaults));
  return gom;
}

CanonicalGoM init_canonical(const Rig& rig, int k, const GomDefaults& defaults) {
  validate_rig(rig);
  return build_canonical(rig.template_mesh, rig.weights, k, defaults);
}

PosedGoM articulate(const CanonicalGoM& gom, const Pose& pose) {
  PosedGoM posed;
  posed.canonical = &gom;
  bool is_identity = true;
  for (int j = 0; j < pose.joint_count() && is_identity; ++j) {
    const Quat& q = pose.rotations[j];
    is_identity = pose.translations[j].isZero(0.0) && q.w() == 1.0 &&
                  q.x() == 0.0 && q.y() == 0.0 && q.z() == 0.0;
  }
  if (is_identity) {
    posed.low_vertices = gom.low_mesh.vertices;
    posed.high_vertices = gom.high_mesh.vertices;
    return posed;
  }
  posed.low_vertices.resize(gom.low_mesh.vertices.size());
  for (size_t i = 0; i < posed.low_vertices.size(); ++i) {
    try {
      posed.low_vertices[i] =
          lbs_point(gom.low_mesh.vertices[i], gom.weights[i], pose);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("articulate: zero weight sum at vertex " +
                                  std::to_string(i));
    }
  }
  posed.high_vertices = prolong(gom.prolongation, posed.low_vertices);
  return posed;
}

PosedGoM rest_pose(const CanonicalGoM& gom) {
  PosedGoM posed;
  posed.canonical = &gom;
  posed.low_vertices = gom.low_mesh.vertices;
  posed.high_vertices = gom.high_mesh.vertices;
  return posed;
}

std::vector<WorldGaussian> gaussians_world(const PosedGoM& posed) {
  const CanonicalGoM& gom = *posed.canonical;
  return gaussians_world_raw(gom.high_mesh, gom.face_gaussians,
                             posed.high_vertices);
}

std::vector<WorldGaussian> gaussians_world_raw(
    const TriMesh& high_mesh, const std::vector<FaceGaussian>& face_gaussians,
    const std::vector<Vec3>& high_vertices) {
  std::vector<WorldGaussian> out(size_t(high_mesh.face_count()));
  for (int j = 0; j < high_mesh.face_count(); ++j) {
    const auto& face = high_mesh.faces[j];
    const Vec3& v1 = high_vertices[face[0]];
    const Vec3& v2 = high_vertices[face[1]];
    const Vec3& v3 = high_vertices[face[2]];
    LocalFrame frame;
    try {
      frame = face_frame(v1, v2, v3);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("gaussians_world: degenerate high face " +
                                  std::to_string(j));
    }
    const FaceGaussian& g = face_gaussians[j];
    const Mat3 rot = rodrigues(g.r);
    const Vec3 scale = decode_scale(g.s);
    const Mat3 m_local =
        rot * scale.array().square().matrix().asDiagonal() * rot.transpose();
    WorldGaussian w;
    w.mu = (v1 + v2 + v3) / 3.0 + frame.A * decode_offset(g.o);
    w.sigma = frame.A * m_local * frame.A.transpose();
    w.color = decode_color(g.c);
    w.opacity = decode_opacity(g.alpha);
    out[j] = w;
  }
  return out;
}

void gaussians_world_vjp(const PosedGoM& posed,
                         const std::vector<WorldGaussianGrad>& grads,
                         std::vector<Vec3>& grad_high_vertices,
                         std::vector<FaceGaussian>& grad_face_gaussians) {
  const CanonicalGoM& gom = *posed.canonical;
  gaussians_world_raw_vjp(gom.high_mesh, gom.face_gaussians, posed.high_vertices,
                          grads, grad_high_vertices, grad_face_gaussians);
}

void gaussians_world_raw_vjp(const TriMesh& high_mesh,
                             const std::vector<FaceGaussian>& face_gaussians,
                             const std::vector<Vec3>& high_vertices,
                             const std::vector<WorldGaussianGrad>& grads,
                             std::vector<Vec3>& grad_high_vertices,
                             std::vector<FaceGaussian>& grad_face_gaussians) {
  if (int(grads.size()) != high_mesh.face_count())
    throw std::invalid_argument("gaussians_world_vjp: gradient count mismatch");
  grad_high_vertices.assign(high_vertices.size(), Vec3::Zero());
  grad_face_gaussians.assign(size_t(high_mesh.face_count()), FaceGaussian{});

  for (int j = 0; j < high_mesh.face_count(); ++j) {
    const auto& face = high_mesh.faces[j];
    const Vec3& v1 = high_vertices[face[0]];
    const Vec3& v2 = high_vertices[face[1]];
    const Vec3& v3 = high_vertices[face[2]];
    const LocalFrame frame = face_frame(v1, v2, v3);
    const FaceGaussian& g = face_gaussians[j];
    const Mat3 rot = rodrigues(g.r);
    const Vec3 scale = decode_scale(g.s);
    const Mat3 diag2 = scale.array().square().matrix().asDiagonal();
    const Mat3 m_local = rot * diag2 * rot.transpose();
    const Vec3 o_dec = decode_offset(g.o);

    const WorldGaussianGrad& gr = grads[j];
    const Mat3 g_sigma = 0.5 * (gr.d_sigma + gr.d_sigma.transpose());

    // mu = centroid + A o_dec.
    const Vec3 g_centroid = gr.d_mu / 3.0;
    grad_high_vertices[face[0]] += g_centroid;
    grad_high_vertices[face[1]] += g_centroid;
    grad_high_vertices[face[2]] += g_centroid;

    Mat3 g_A = gr.d_mu * o_dec.transpose();
    const Vec3 g_o_dec = frame.A.transpose() * gr.d_mu;

    // Sigma = A M A^T with M symmetric.
    g_A += 2.0 * g_sigma * frame.A * m_local;
    const Mat3 g_M = frame.A.transpose() * g_sigma * frame.A;

    // M = R D R^T, D = diag(scale^2).
    const Mat3 g_R = 2.0 * g_M * rot * diag2;
    const Mat3 rtgr = rot.transpose() * g_M * rot;
    Vec3 g_scale_dec;
    for (int k = 0; k < 3; ++k) g_scale_dec[k] = 2.0 * scale[k] * rtgr(k, k);

    FaceGaussian& dst = grad_face_gaussians[j];
    dst.r = rodrigues_vjp(g.r, g_R);
    dst.s = decode_scale_vjp(g.s, g_scale_dec);
    dst.c = decode_color_vjp(g.c, gr.d_color);
    dst.o = decode_offset_vjp(g.o, g_o_dec);
    dst.alpha = decode_opacity_vjp(g.alpha, gr.d_opacity);

    Vec3 g1, g2, g3;
    face_frame_vjp(v1, v2, v3, g_A, g1, g2, g3);
    grad_high_vertices[face[0]] += g1;
    grad_high_vertices[face[1]] += g2;
    grad_high_vertices[face[2]] += g3;
  }
}

namespace {

std::vector<int32_t> faces_to_i32(const TriMesh& mesh) {
  std::vector<int32_t> out;
  out.reserve(mesh.faces.size() * 3);
  for (const auto& f : mesh.faces) {
    out.push_back(f[0]);
    out.push_back(f[1]);
    out.push_back(f[2]);
  }
  return out;
}

std::vector<double> vec3s_to_flat(const std::vector<Vec3>& v) {
  std::vector<double> out;
  out.reserve(v.size() * 3);
  for (const auto& x : v) {
    out.push_back(x.x());
    out.push_back(x.y());
    out.push_back(x.z());
  }
  return out;
}

}  // namespace

void save_gom(const std::string& path, const CanonicalGoM& gom) {
  TensorContainer tc;
  const int nv = gom.low_mesh.vertex_count();
  tc.add_f64_as_f32("low_vertices", {nv, 3}, vec3s_to_flat(gom.low_mesh.vertices));
  tc.add_i32("faces_low", {gom.low_mesh.face_count(), 3},
             faces_to_i32(gom.low_mesh));

  std::vector<int32_t> widx(size_t(nv) * 4, -1);
  std::vector<float> wval(size_t(nv) * 4, 0.0f);
  for (int i = 0; i < nv; ++i)
    for (size_t k = 0; k < gom.weights[i].size(); ++k) {
      widx[size_t(i) * 4 + k] = gom.weights[i][k].first;
      wval[size_t(i) * 4 + k] = float(gom.weights[i][k].second);
    }
  tc.add_i32("weights_idx", {nv, 4}, std::move(widx));
  tc.add_f32("weights_val", {nv, 4}, std::move(wval));

  size_t pw = 1;
  for (const auto& row : gom.prolongation.entries) pw = std::max(pw, row.size());
  const int rows = gom.prolongation.rows;
  std::vector<int32_t> pidx(size_t(rows) * pw, -1);
  std::vector<float> pval(size_t(rows) * pw, 0.0f);
  for (int r = 0; r < rows; ++r)
    for (size_t k = 0; k < gom.prolongation.entries[r].size(); ++k) {
      pidx[size_t(r) * pw + k] = gom.prolongation.entries[r][k].first;
      pval[size_t(r) * pw + k] = float(gom.prolongation.entries[r][k].second);
    }
  tc.add_i32("prolongation_idx", {rows, int64_t(pw)}, std::move(pidx));
  tc.add_f32("prolongation_val", {rows, int64_t(pw)}, std::move(pval));

  tc.add_i32("faces_high", {gom.high_mesh.face_count(), 3},
             faces_to_i32(gom.high_mesh));

  const int nf = gom.high_face_count();
  std::vector<double> r, s, c, o, alpha;
  for (const auto& g : gom.face_gaussians) {
    for (int k = 0; k < 3; ++k) r.push_back(g.r[k]);
    for (int k = 0; k < 3; ++k) s.push_back(g.s[k]);
    for (int k = 0; k < 3; ++k) c.push_back(g.c[k]);
    for (int k = 0; k < 3; ++k) o.push_back(g.o[k]);
    alpha.push_back(g.alpha);
  }
  tc.add_f64_as_f32("gauss_r", {nf, 3}, r);
  tc.add_f64_as_f32("gauss_s", {nf, 3}, s);
  tc.add_f64_as_f32("gauss_c", {nf, 3}, c);
  tc.add_f64_as_f32("gauss_o", {nf, 3}, o);
  tc.add_f64_as_f32("gauss_alpha", {nf, 1}, alpha);
  tc.add_i32("subdivision_levels", {1}, {gom.subdivision_levels});
  tc.save(path);
}

CanonicalGoM load_gom(const std::string& path) {
  const TensorContainer tc = TensorContainer::load(path);

  TriMesh low;
  const auto& lv = tc.at("low_vertices");
  const int nv = int(lv.shape.at(0));
  for (int i = 0; i < nv; ++i)
    low.vertices.emplace_back(lv.f32[i * 3 + 0], lv.f32[i * 3 + 1],
                              lv.f32[i * 3 + 2]);
  const auto& lf = tc.at("faces_low");
  for (int f = 0; f < int(lf.shape.at(0)); ++f)
    low.faces.push_back({lf.i32[f * 3 + 0], lf.i32[f * 3 + 1], lf.i32[f * 3 + 2]});

  const auto& widx = tc.at("weights_idx");
  const auto& wval = tc.at("weights_val");
  std::vector<VertexWeights> weights(static_cast<size_t>(nv));
  for (int i = 0; i < nv; ++i)
    for (int k = 0; k < 4; ++k) {
      const int32_t joint = widx.i32[size_t(i) * 4 + k];
      if (joint >= 0)
        weights[i].emplace_back(joint, double(wval.f32[size_t(i) * 4 + k]));
    }

  const int k = tc.at("subdivision_levels").i32.at(0);
  CanonicalGoM gom = build_canonical(std::move(low), std::move(weights), k,
                                     GomDefaults{});

  const auto& fh = tc.at("faces_high");
  if (int(fh.shape.at(0)) != gom.high_mesh.face_count())
    throw std::runtime_error("load_gom: stored high-res face count disagrees "
                             "with rebuilt subdivision: " + path);

  const auto& gr = tc.at("gauss_r");
  const auto& gs = tc.at("gauss_s");
  const auto& gc = tc.at("gauss_c");
  const auto& go = tc.at("gauss_o");
  const auto& ga = tc.at("gauss_alpha");
  for (int j = 0; j < gom.high_face_count(); ++j) {
    FaceGaussian& g = gom.face_gaussians[j];
    for (int d = 0; d < 3; ++d) {
      g.r[d] = gr.f32[j * 3 + d];
      g.s[d] = gs.f32[j * 3 + d];
      g.c[d] = gc.f32[j * 3 + d];
      g.o[d] = go.f32[j * 3 + d];
    }
    g.alpha = ga.f32[j];
  }
  return gom;
}

}  // namespace lgom
