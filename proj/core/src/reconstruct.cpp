#include "lgom/reconstruct.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "lgom/rng.hpp"

namespace lgom {

void validate_sources(const SourceSet& sources) {
  if (sources.empty())
    throw std::invalid_argument("sources: need at least one view");
  const int h = sources[0].image.height;
  const int w = sources[0].image.width;
  for (const auto& s : sources) {
    if (s.image.height != h || s.image.width != w || s.image.channels != 3)
      throw std::invalid_argument("sources: images must share one resolution");
    if (s.mask.height != h || s.mask.width != w || s.mask.channels != 1)
      throw std::invalid_argument("sources: mask shape mismatch");
    if (s.camera.width != w || s.camera.height != h)
      throw std::invalid_argument("sources: camera size disagrees with image");
  }
}

void init_feedback_params(ParamStore& store, const ReconConfig& cfg,
                          int low_vertex_count, uint64_t seed) {
  const int c = kFeatureWidth;
  linear_init(store, "enc.lift", kEncoderConcatChannels, c, seed, false);
  linear_init(store, "feat.pair", 2 * c, c, seed, false);
  for (const char* round : {"fuse.r1", "fuse.r2"})
    for (const char* part : {".q", ".k", ".v"})
      linear_init(store, std::string(round) + part, c, c, seed, false);
  for (const char* round : {"agg.r1", "agg.r2"}) {
    for (const char* part : {".q", ".k", ".v"})
      linear_init(store, std::string(round) + part, c, c, seed, false);
    linear_init(store, std::string(round) + ".p", 3, c, seed, false);
  }
  mlp_init(store, "head.vertex", MLPSpec{{c, 64, 64, 3}, true}, seed);
  const int gauss_in = 3 * c + cfg.sources * c;
  mlp_init(store, "head.gauss", MLPSpec{{gauss_in, 64, 64, 13}, true}, seed);
  linear_init(store, "emb.update", c, c, seed, true);

  auto& emb = store.add("emb.init", {low_vertex_count, c});
  Rng rng = named_stream(seed, "emb.init");
  for (auto& x : emb.value) x = rng.normal(0.0, 0.1);
}

FeedbackState init_feedback_state(const Rig& rig, const ParamStore& params,
                                  const ReconConfig& cfg) {
  FeedbackState state;
  state.gom = init_canonical(rig, cfg.subdivision, cfg.defaults);
  const auto& emb = params.at("emb.init");
  if (emb.shape.at(0) != rig.template_mesh.vertex_count())
    throw std::invalid_argument(
        "init_feedback_state: embedding table size does not match the rig "
        "template");
  state.embeddings = emb.value;
  state.step = 0;
  return state;
}

namespace {

constexpr int kC = kFeatureWidth;
const MLPSpec kVertexHead{{kC, 64, 64, 3}, true};

MLPSpec gauss_head_spec(int n_sources) {
  return MLPSpec{{3 * kC + n_sources * kC, 64, 64, 13}, true};
}

/// Pinhole projection of a world point with the camera-space depth clamped at
/// the near plane so outputs stay finite for points behind the camera.
Vec2 project_point(const CameraModel& cam, const Vec3& world, double near) {
  Vec3 m = cam.to_camera(world);
  const double z = std::max(m.z(), near);
  return Vec2(cam.fx() * m.x() / z + cam.cx(), cam.fy() * m.y() / z + cam.cy());
}

void project_point_vjp(const CameraModel& cam, const Vec3& world, double near,
                       const Vec2& g_uv, Vec3& g_world) {
  const Vec3 m = cam.to_camera(world);
  const bool clamped = m.z() <= near;
  const double z = std::max(m.z(), near);
  Vec3 g_m;
  g_m.x() = g_uv.x() * cam.fx() / z;
  g_m.y() = g_uv.y() * cam.fy() / z;
  g_m.z() = clamped ? 0.0
                    : -(g_uv.x() * cam.fx() * m.x() + 0.0) / (z * z) -
                          (g_uv.y() * cam.fy() * m.y()) / (z * z);
  g_world += cam.rotation().transpose() * g_m;
}

std::vector<Vec3> skin_positions(const std::vector<Vec3>& canonical,
                                 const std::vector<VertexWeights>& weights,
                                 const Pose& pose) {
  std::vector<Vec3> out(canonical.size());
  for (size_t i = 0; i < canonical.size(); ++i)
    out[i] = lbs_point(canonical[i], weights[i], pose);
  return out;
}

void skin_positions_vjp(const std::vector<VertexWeights>& weights,
                        const Pose& pose, const std::vector<Vec3>& grad_posed,
                        std::vector<Vec3>& grad_canonical) {
  for (size_t i = 0; i < grad_posed.size(); ++i)
    grad_canonical[i] +=
        lbs_point_jacobian(weights[i], pose).transpose() * grad_posed[i];
}

/// Prolongation applied to feature rows.
std::vector<double> prolong_features(const Prolongation& p,
                                     const std::vector<double>& low) {
  std::vector<double> out(size_t(p.rows) * kC, 0.0);
  for (int r = 0; r < p.rows; ++r)
    for (const auto& [col, w] : p.entries[r])
      for (int d = 0; d < kC; ++d)
        out[size_t(r) * kC + d] += w * low[size_t(col) * kC + d];
  return out;
}

void prolong_features_vjp(const Prolongation& p,
                          const std::vector<double>& grad_high,
                          std::vector<double>& grad_low) {
  for (int r = 0; r < p.rows; ++r)
    for (const auto& [col, w] : p.entries[r])
      for (int d = 0; d < kC; ++d)
        grad_low[size_t(col) * kC + d] += w * grad_high[size_t(r) * kC + d];
}

void pack_face_grad(const FaceGaussian& g, double* out13) {
  for (int d = 0; d < 3; ++d) {
    out13[d] = g.r[d];
    out13[3 + d] = g.s[d];
    out13[6 + d] = g.c[d];
    out13[9 + d] = g.o[d];
  }
  out13[12] = g.alpha;
}

FaceGaussian unpack_face(const double* raw13, const FaceGaussian& base) {
  FaceGaussian g;
  for (int d = 0; d < 3; ++d) {
    g.r[d] = base.r[d] + raw13[d];
    g.s[d] = base.s[d] + raw13[3 + d];
    g.c[d] = base.c[d] + raw13[6 + d];
    g.o[d] = base.o[d] + raw13[9 + d];
  }
  g.alpha = base.alpha + raw13[12];
  return g;
}

struct SourceFeatures {
  std::vector<EncodeCache> enc;
  std::vector<Image> maps;
};

SourceFeatures encode_sources(const ParamStore& params, const SourceSet& sources,
                              bool keep_caches) {
  SourceFeatures out;
  out.enc.resize(sources.size());
  out.maps.reserve(sources.size());
  for (size_t n = 0; n < sources.size(); ++n)
    out.maps.push_back(encode_image(params, sources[n].image,
                                    keep_caches ? &out.enc[n] : nullptr));
  return out;
}

/// Per-step forward caches. Everything the reverse sweep needs and nothing it
/// can cheaply recompute.
struct StepCache {
  std::vector<Vec3> lcan_prev;
  std::vector<FaceGaussian> faces_prev;
  std::vector<double> emb_prev;

  std::vector<std::vector<Vec3>> fb_low;   // per source, posed with GoM_{t-1}
  std::vector<std::vector<Vec3>> fb_high;
  std::vector<EncodeCache> fb_enc;
  std::vector<Image> fb_maps;  // encoded predicted source renders

  std::vector<Vec2> uvs;          // [i * N + n]
  std::vector<double> pair_in;    // (V*N) x 2C
  std::vector<double> pair_out;   // (V*N) x C, vertex-major
  std::vector<FusionCache> fusion;
  std::vector<double> fused;      // V x C
  AggregateCache agg;
  std::vector<double> feedback;   // V x C

  MLPCache vertex_mlp;
  std::vector<double> vertex_raw;  // V x 3
  std::vector<Vec3> lcan_new;

  std::vector<double> high_feats;  // Vh x C
  std::vector<std::vector<Vec3>> cur_low;   // per source, posed with lcan_new
  std::vector<std::vector<Vec3>> cur_high;
  std::vector<Vec2> gauss_uvs;     // [j * N + n]
  std::vector<double> gauss_in;    // F x (3C + N*C)
  MLPCache gauss_mlp;
  std::vector<FaceGaussian> faces_new;

  std::vector<double> emb_new;
};

struct Pipeline {
  const SourceSet& sources;
  const ParamStore& params;
  const ReconConfig& cfg;
  const CanonicalGoM& topology;  // meshes/prolongation/weights shared by all steps
  const std::vector<std::vector<int>>& adjacency;
  const SourceFeatures& src_feat;

  int vcount() const { return topology.low_mesh.vertex_count(); }
  int fcount() const { return topology.high_mesh.face_count(); }
  int nsrc() const { return int(sources.size()); }

  RenderOutput render(const std::vector<FaceGaussian>& faces,
                      const std::vector<Vec3>& high, const CameraModel& cam) const {
    return rasterize(gaussians_world_raw(topology.high_mesh, faces, high), cam,
                     cfg.raster);
  }

  /// Stages A-C: feedback features for the state (lcan_prev, faces_prev,
  /// emb_prev).
  std::vector<double> features_forward(const std::vector<Vec3>& lcan_prev,
                                       const std::vector<FaceGaussian>& faces_prev,
                                       const std::vector<double>& emb_prev,
                                       StepCache* cache) const {
    const int v = vcount();
    const int n_src = nsrc();

    // A: render each source view from GoM_{t-1} and encode.
    std::vector<std::vector<Vec3>> fb_low(n_src), fb_high(n_src);
    std::vector<EncodeCache> fb_enc(n_src);
    std::vector<Image> fb_maps;
    fb_maps.reserve(n_src);
    for (int n = 0; n < n_src; ++n) {
      fb_low[n] = skin_positions(lcan_prev, topology.weights, sources[n].pose);
      fb_high[n] = prolong(topology.prolongation, fb_low[n]);
      const RenderOutput render_out =
          rasterize(gaussians_world_raw(topology.high_mesh, faces_prev, fb_high[n]),
                    sources[n].camera, cfg.raster);
      fb_maps.push_back(encode_image(params, render_out.image,
                                     cache ? &fb_enc[n] : nullptr));
    }

    // Pixel-aligned sampling from both maps, concatenated and lifted.
    std::vector<Vec2> uvs(size_t(v) * n_src);
    std::vector<double> pair_in(size_t(v) * n_src * 2 * kC);
    for (int i = 0; i < v; ++i)
      for (int n = 0; n < n_src; ++n) {
        const Vec2 uv = project_point(sources[n].camera, fb_low[n][i],
                                      cfg.raster.near_plane);
        uvs[size_t(i) * n_src + n] = uv;
        const auto g_src = sample_pixel_aligned(src_feat.maps[n], uv);
        const auto g_pred = sample_pixel_aligned(fb_maps[n], uv);
        double* row = pair_in.data() + (size_t(i) * n_src + n) * 2 * kC;
        for (int d = 0; d < kC; ++d) {
          row[d] = g_src[d];
          row[kC + d] = g_pred[d];
        }
      }
    std::vector<double> pair_out = linear_forward(params, "feat.pair", pair_in,
                                                  v * n_src, 2 * kC, kC);

    // B: multi-source fusion per vertex with the embedding as round-2 query.
    std::vector<FusionCache> fusion(cache ? v : 0);
    std::vector<double> fused(size_t(v) * kC);
    std::vector<double> per_vertex(size_t(n_src) * kC);
    std::vector<double> emb(kC);
    for (int i = 0; i < v; ++i) {
      std::copy(pair_out.begin() + size_t(i) * n_src * kC,
                pair_out.begin() + size_t(i + 1) * n_src * kC,
                per_vertex.begin());
      std::copy(emb_prev.begin() + size_t(i) * kC,
                emb_prev.begin() + size_t(i + 1) * kC, emb.begin());
      const auto out = fuse_multi_source(params, per_vertex, n_src, emb,
                                         cache ? &fusion[i] : nullptr);
      std::copy(out.begin(), out.end(), fused.begin() + size_t(i) * kC);
    }

    // C: 1-ring mesh attention over the canonical low mesh.
    AggregateCache agg;
    std::vector<double> feedback =
        mesh_aggregate(params, fused, lcan_prev, adjacency,
                       cache ? &agg : nullptr);

    if (cache) {
      cache->lcan_prev = lcan_prev;
      cache->faces_prev = faces_prev;
      cache->emb_prev = emb_prev;
      cache->fb_low = std::move(fb_low);
      cache->fb_high = std::move(fb_high);
      cache->fb_enc = std::move(fb_enc);
      cache->fb_maps = std::move(fb_maps);
      cache->uvs = std::move(uvs);
      cache->pair_in = std::move(pair_in);
      cache->pair_out = std::move(pair_out);
      cache->fusion = std::move(fusion);
      cache->fused = std::move(fused);
      cache->agg = std::move(agg);
      cache->feedback = feedback;
    }
    return feedback;
  }

  /// Stage D: bounded residual vertex update.
  std::vector<Vec3> vertices_forward(const std::vector<Vec3>& lcan_prev,
                                     const std::vector<double>& feedback,
                                     StepCache* cache) const {
    const int v = vcount();
    MLPCache mlp_cache;
    std::vector<double> raw =
        mlp_forward(params, "head.vertex", kVertexHead, feedback, v,
                    cache ? &mlp_cache : nullptr);
    std::vector<Vec3> out(static_cast<size_t>(v));
    const double bound = cfg.vertex_step_bound;
    for (int i = 0; i < v; ++i)
      for (int d = 0; d < 3; ++d)
        out[i][d] = lcan_prev[i][d] +
                    bound * std::tanh(raw[size_t(i) * 3 + d] / bound);
    if (cache) {
      cache->vertex_mlp = std::move(mlp_cache);
      cache->vertex_raw = std::move(raw);
      cache->lcan_new = out;
    }
    return out;
  }

  /// Stage E: absolute Gaussian update from corner feedback features plus
  /// per-source encoder features at the projected current means.
  std::vector<FaceGaussian> gaussians_forward(
      const std::vector<Vec3>& lcan_new,
      const std::vector<FaceGaussian>& faces_prev,
      const std::vector<double>& feedback, StepCache* cache) const {
    const int f = fcount();
    const int n_src = nsrc();
    const int in_w = 3 * kC + n_src * kC;

    std::vector<double> high_feats =
        prolong_features(topology.prolongation, feedback);

    std::vector<std::vector<Vec3>> cur_low(n_src), cur_high(n_src);
    for (int n = 0; n < n_src; ++n) {
      cur_low[n] = skin_positions(lcan_new, topology.weights, sources[n].pose);
      cur_high[n] = prolong(topology.prolongation, cur_low[n]);
    }

    std::vector<Vec2> gauss_uvs(size_t(f) * n_src);
    std::vector<double> gauss_in(size_t(f) * in_w);
    for (int j = 0; j < f; ++j) {
      const auto& face = topology.high_mesh.faces[j];
      double* row = gauss_in.data() + size_t(j) * in_w;
      for (int k = 0; k < 3; ++k)
        for (int d = 0; d < kC; ++d)
          row[k * kC + d] = high_feats[size_t(face[k]) * kC + d];
      const Vec3 o_dec = decode_offset(faces_prev[j].o);
      for (int n = 0; n < n_src; ++n) {
        const Vec3& v1 = cur_high[n][face[0]];
        const Vec3& v2 = cur_high[n][face[1]];
        const Vec3& v3 = cur_high[n][face[2]];
        const LocalFrame frame = face_frame(v1, v2, v3);
        const Vec3 mu = (v1 + v2 + v3) / 3.0 + frame.A * o_dec;
        const Vec2 uv =
            project_point(sources[n].camera, mu, cfg.raster.near_plane);
        gauss_uvs[size_t(j) * n_src + n] = uv;
        const auto feat = sample_pixel_aligned(src_feat.maps[n], uv);
        for (int d = 0; d < kC; ++d) row[3 * kC + n * kC + d] = feat[d];
      }
    }

    MLPCache mlp_cache;
    std::vector<double> raw =
        mlp_forward(params, "head.gauss", gauss_head_spec(n_src), gauss_in, f,
                    cache ? &mlp_cache : nullptr);
    const FaceGaussian base = default_face_gaussian(cfg.defaults);
    std::vector<FaceGaussian> out(static_cast<size_t>(f));
    for (int j = 0; j < f; ++j) out[j] = unpack_face(raw.data() + size_t(j) * 13, base);

    if (cache) {
      cache->high_feats = std::move(high_feats);
      cache->cur_low = std::move(cur_low);
      cache->cur_high = std::move(cur_high);
      cache->gauss_uvs = std::move(gauss_uvs);
      cache->gauss_in = std::move(gauss_in);
      cache->gauss_mlp = std::move(mlp_cache);
      cache->faces_new = out;
    }
    return out;
  }

  /// Stage F: residual embedding update.
  std::vector<double> embeddings_forward(const std::vector<double>& emb_prev,
                                         const std::vector<double>& feedback,
                                         StepCache* cache) const {
    const int v = vcount();
    std::vector<double> delta =
        linear_forward(params, "emb.update", feedback, v, kC, kC);
    std::vector<double> out(emb_prev.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = emb_prev[i] + delta[i];
    if (cache) cache->emb_new = out;
    return out;
  }
};

}  // namespace

std::vector<double> compute_feedback_features(const FeedbackState& state,
                                              const SourceSet& sources,
                                              const ParamStore& params,
                                              const ReconConfig& cfg) {
  validate_sources(sources);
  const SourceFeatures src_feat = encode_sources(params, sources, false);
  const auto adjacency = vertex_adjacency(state.gom.low_mesh);
  Pipeline pipe{sources, params, cfg, state.gom, adjacency, src_feat};
  return pipe.features_forward(state.gom.low_mesh.vertices,
                               state.gom.face_gaussians, state.embeddings,
                               nullptr);
}

std::vector<Vec3> update_vertices(const FeedbackState& state,
                                  const std::vector<double>& feedback,
                                  const ParamStore& params,
                                  const ReconConfig& cfg) {
  if (feedback.size() != size_t(state.gom.low_vertex_count()) * kFeatureWidth)
    throw std::invalid_argument("update_vertices: feedback width mismatch");
  static const SourceSet kEmpty;
  static const std::vector<std::vector<int>> kNoAdj;
  static const SourceFeatures kNoFeat;
  Pipeline pipe{kEmpty, params, cfg, state.gom, kNoAdj, kNoFeat};
  return pipe.vertices_forward(state.gom.low_mesh.vertices, feedback, nullptr);
}

std::vector<FaceGaussian> update_gaussians(const FeedbackState& state,
                                           const std::vector<Vec3>& updated_low,
                                           const std::vector<double>& feedback,
                                           const SourceSet& sources,
                                           const ParamStore& params,
                                           const ReconConfig& cfg) {
  validate_sources(sources);
  const SourceFeatures src_feat = encode_sources(params, sources, false);
  static const std::vector<std::vector<int>> kNoAdj;
  Pipeline pipe{sources, params, cfg, state.gom, kNoAdj, src_feat};
  return pipe.gaussians_forward(updated_low, state.gom.face_gaussians, feedback,
                                nullptr);
}

FeedbackState feedback_step(const FeedbackState& state, const SourceSet& sources,
                            const ParamStore& params, const ReconConfig& cfg) {
  validate_sources(sources);
  const SourceFeatures src_feat = encode_sources(params, sources, false);
  const auto adjacency = vertex_adjacency(state.gom.low_mesh);
  Pipeline pipe{sources, params, cfg, state.gom, adjacency, src_feat};

  const auto feedback =
      pipe.features_forward(state.gom.low_mesh.vertices,
                            state.gom.face_gaussians, state.embeddings, nullptr);
  const auto lcan_new =
      pipe.vertices_forward(state.gom.low_mesh.vertices, feedback, nullptr);
  const auto faces_new = pipe.gaussians_forward(
      lcan_new, state.gom.face_gaussians, feedback, nullptr);
  const auto emb_new =
      pipe.embeddings_forward(state.embeddings, feedback, nullptr);

  FeedbackState next;
  next.gom = state.gom;
  next.gom.low_mesh.vertices = lcan_new;
  next.gom.high_mesh.vertices = prolong(next.gom.prolongation, lcan_new);
  next.gom.face_gaussians = faces_new;
  next.embeddings = emb_new;
  next.step = state.step + 1;
  return next;
}

ReconResult reconstruct(const SourceSet& sources, const Rig& rig, int steps,
                        const ParamStore& params, const ReconConfig& cfg) {
  if (steps < 1) throw std::invalid_argument("reconstruct: steps must be >= 1");
  validate_sources(sources);
  FeedbackState state = init_feedback_state(rig, params, cfg);
  ReconResult result;
  for (int t = 0; t < steps; ++t) {
    const auto start = std::chrono::steady_clock::now();
    state = feedback_step(state, sources, params, cfg);
    const auto stop = std::chrono::steady_clock::now();
    result.step_ms.push_back(
        std::chrono::duration<double, std::milli>(stop - start).count());

    double psnr_sum = 0.0;
    for (const auto& view : sources) {
      const PosedGoM posed = articulate(state.gom, view.pose);
      const RenderOutput out =
          rasterize(gaussians_world(posed), view.camera, cfg.raster);
      psnr_sum += psnr(out.image, view.image);
    }
    result.step_source_psnr.push_back(psnr_sum / double(sources.size()));
  }
  result.gom = std::move(state.gom);
  return result;
}

// ---------------------------------------------------------------------------
// Training tape
// ---------------------------------------------------------------------------

namespace {

struct RenderPass {
  int t = 0;
  Pose pose;
  CameraModel camera;
  std::vector<Vec3> posed_low, posed_high;
  RenderOutput output;
  Image grad_image, grad_alpha;
  bool has_grad = false;
};

}  // namespace

struct ReconTape::Impl {
  const SourceSet& sources;
  const Rig& rig;
  const ParamStore& params;
  ReconConfig cfg;

  std::vector<std::vector<int>> adjacency;
  SourceFeatures src_feat;
  std::vector<FeedbackState> states;  // 0..T
  std::vector<StepCache> steps;       // per step t (1-based: steps[t-1])
  std::vector<RenderPass> passes;
  std::vector<std::vector<Vec3>> extra_low_grads;  // per state t

  Impl(const SourceSet& src, const Rig& r, const ParamStore& p,
       const ReconConfig& c)
      : sources(src), rig(r), params(p), cfg(c) {}

  const CanonicalGoM& topology() const { return states[0].gom; }

  void run(int T) {
    validate_sources(sources);
    if (int(sources.size()) != cfg.sources)
      throw std::invalid_argument(
          "ReconTape: source count disagrees with the configured head width");
    states.clear();
    steps.clear();
    passes.clear();
    states.push_back(init_feedback_state(rig, params, cfg));
    adjacency = vertex_adjacency(states[0].gom.low_mesh);
    src_feat = encode_sources(params, sources, true);
    extra_low_grads.assign(size_t(T) + 1, {});

    for (int t = 1; t <= T; ++t) {
      const FeedbackState& prev = states.back();
      Pipeline pipe{sources, params, cfg, topology(), adjacency, src_feat};
      StepCache cache;
      const auto feedback = pipe.features_forward(
          prev.gom.low_mesh.vertices, prev.gom.face_gaussians, prev.embeddings,
          &cache);
      const auto lcan_new =
          pipe.vertices_forward(prev.gom.low_mesh.vertices, feedback, &cache);
      const auto faces_new = pipe.gaussians_forward(
          lcan_new, prev.gom.face_gaussians, feedback, &cache);
      const auto emb_new =
          pipe.embeddings_forward(prev.embeddings, feedback, &cache);

      FeedbackState next;
      next.gom = prev.gom;
      next.gom.low_mesh.vertices = lcan_new;
      next.gom.high_mesh.vertices = prolong(next.gom.prolongation, lcan_new);
      next.gom.face_gaussians = faces_new;
      next.embeddings = emb_new;
      next.step = t;
      steps.push_back(std::move(cache));
      states.push_back(std::move(next));
    }
  }

  int render_state(int t, const Pose& pose, const CameraModel& camera) {
    RenderPass pass;
    pass.t = t;
    pass.pose = pose;
    pass.camera = camera;
    const FeedbackState& st = states.at(size_t(t));
    pass.posed_low = skin_positions(st.gom.low_mesh.vertices, topology().weights,
                                    pose);
    pass.posed_high = prolong(topology().prolongation, pass.posed_low);
    pass.output = rasterize(
        gaussians_world_raw(topology().high_mesh, st.gom.face_gaussians,
                            pass.posed_high),
        camera, cfg.raster);
    pass.grad_image = Image(camera.height, camera.width, 3);
    pass.grad_alpha = Image(camera.height, camera.width, 1);
    passes.push_back(std::move(pass));
    return int(passes.size()) - 1;
  }

  void backward(GradStore& grads) {
    const int T = int(steps.size());
    const int v = topology().low_mesh.vertex_count();
    const int f = topology().high_mesh.face_count();
    const int n_src = int(sources.size());

    std::vector<StateGrad> sg(size_t(T) + 1);
    for (auto& g : sg) {
      g.d_low.assign(size_t(v), Vec3::Zero());
      g.d_faces.assign(size_t(f), FaceGaussian{});
      g.d_embeddings.assign(size_t(v) * kC, 0.0);
    }
    std::vector<Image> d_src_maps;
    for (int n = 0; n < n_src; ++n)
      d_src_maps.emplace_back(sources[n].image.height, sources[n].image.width,
                              kFeatureWidth);

    // Render passes attached by the trainer.
    for (const RenderPass& pass : passes) {
      if (!pass.has_grad) continue;
      const auto gaussians = gaussians_world_raw(
          topology().high_mesh, states[pass.t].gom.face_gaussians,
          pass.posed_high);
      const auto wg = rasterize_backward(gaussians, pass.camera, pass.grad_image,
                                         pass.grad_alpha, cfg.raster);
      std::vector<Vec3> d_high;
      std::vector<FaceGaussian> d_faces;
      gaussians_world_raw_vjp(topology().high_mesh,
                              states[pass.t].gom.face_gaussians,
                              pass.posed_high, wg, d_high, d_faces);
      for (int j = 0; j < f; ++j) accumulate_face(sg[pass.t].d_faces[j], d_faces[j]);
      const auto d_low_posed = prolong_vjp(topology().prolongation, d_high);
      skin_positions_vjp(topology().weights, pass.pose, d_low_posed,
                         sg[pass.t].d_low);
    }
    for (int t = 0; t <= T; ++t)
      if (!extra_low_grads[t].empty())
        for (int i = 0; i < v; ++i) sg[t].d_low[i] += extra_low_grads[t][i];

    for (int t = T; t >= 1; --t)
      step_backward(steps[t - 1], sg[t], sg[t - 1], d_src_maps, grads);

    // Source encodings (shared across steps).
    for (int n = 0; n < n_src; ++n)
      encode_image_vjp(params, src_feat.enc[n], d_src_maps[n], nullptr, grads);

    // The t=0 embedding is the learnable table itself.
    auto& g_emb = grads.of("emb.init", sg[0].d_embeddings.size());
    for (size_t i = 0; i < g_emb.size(); ++i) g_emb[i] += sg[0].d_embeddings[i];
  }

  static void accumulate_face(FaceGaussian& dst, const FaceGaussian& src) {
    dst.r += src.r;
    dst.s += src.s;
    dst.c += src.c;
    dst.o += src.o;
    dst.alpha += src.alpha;
  }

  void step_backward(const StepCache& cache, StateGrad& g_t, StateGrad& g_prev,
                     std::vector<Image>& d_src_maps, GradStore& grads) {
    const int v = topology().low_mesh.vertex_count();
    const int f = topology().high_mesh.face_count();
    const int n_src = int(sources.size());
    std::vector<double> d_feedback(size_t(v) * kC, 0.0);

    // --- F: embeddings. emb_new = emb_prev + linear(feedback).
    {
      for (size_t i = 0; i < g_t.d_embeddings.size(); ++i)
        g_prev.d_embeddings[i] += g_t.d_embeddings[i];
      const auto g_fb = linear_vjp(params, "emb.update", cache.feedback, v, kC,
                                   kC, g_t.d_embeddings, grads);
      for (size_t i = 0; i < g_fb.size(); ++i) d_feedback[i] += g_fb[i];
    }

    // --- E: gaussian head.
    {
      const int in_w = 3 * kC + n_src * kC;
      std::vector<double> d_raw(size_t(f) * 13);
      for (int j = 0; j < f; ++j)
        pack_face_grad(g_t.d_faces[j], d_raw.data() + size_t(j) * 13);
      const auto d_gauss_in =
          mlp_backward(params, "head.gauss", gauss_head_spec(n_src),
                       cache.gauss_mlp, d_raw, grads);

      std::vector<double> d_high_feats(size_t(topology().prolongation.rows) * kC,
                                       0.0);
      std::vector<std::vector<Vec3>> d_cur_high(n_src);
      for (int n = 0; n < n_src; ++n)
        d_cur_high[n].assign(cache.cur_high[n].size(), Vec3::Zero());

      for (int j = 0; j < f; ++j) {
        const auto& face = topology().high_mesh.faces[j];
        const double* row = d_gauss_in.data() + size_t(j) * in_w;
        for (int k = 0; k < 3; ++k)
          for (int d = 0; d < kC; ++d)
            d_high_feats[size_t(face[k]) * kC + d] += row[k * kC + d];

        const Vec3 o_dec = decode_offset(cache.faces_prev[j].o);
        for (int n = 0; n < n_src; ++n) {
          Vec2 d_uv = Vec2::Zero();
          std::vector<double> d_feat(row + 3 * kC + n * kC,
                                     row + 3 * kC + (n + 1) * kC);
          sample_pixel_aligned_vjp(src_feat.maps[n],
                                   cache.gauss_uvs[size_t(j) * n_src + n], d_feat,
                                   &d_src_maps[n], &d_uv);
          if (d_uv.isZero(0.0)) continue;
          const Vec3& v1 = cache.cur_high[n][face[0]];
          const Vec3& v2 = cache.cur_high[n][face[1]];
          const Vec3& v3 = cache.cur_high[n][face[2]];
          const LocalFrame frame = face_frame(v1, v2, v3);
          const Vec3 mu = (v1 + v2 + v3) / 3.0 + frame.A * o_dec;
          Vec3 d_mu = Vec3::Zero();
          project_point_vjp(sources[n].camera, mu, cfg.raster.near_plane, d_uv,
                            d_mu);
          const Vec3 d_centroid = d_mu / 3.0;
          d_cur_high[n][face[0]] += d_centroid;
          d_cur_high[n][face[1]] += d_centroid;
          d_cur_high[n][face[2]] += d_centroid;
          const Mat3 d_A = d_mu * o_dec.transpose();
          Vec3 g1, g2, g3;
          face_frame_vjp(v1, v2, v3, d_A, g1, g2, g3);
          d_cur_high[n][face[0]] += g1;
          d_cur_high[n][face[1]] += g2;
          d_cur_high[n][face[2]] += g3;
          const Vec3 d_o_dec = frame.A.transpose() * d_mu;
          g_prev.d_faces[j].o +=
              decode_offset_vjp(cache.faces_prev[j].o, d_o_dec);
        }
      }
      // Projected means used the *updated* vertices: route into g_t.d_low so
      // stage D folds them into the residual chain.
      for (int n = 0; n < n_src; ++n) {
        const auto d_cur_low =
            prolong_vjp(topology().prolongation, d_cur_high[n]);
        skin_positions_vjp(topology().weights, sources[n].pose, d_cur_low,
                           g_t.d_low);
      }
      prolong_features_vjp(topology().prolongation, d_high_feats, d_feedback);
    }

    // --- D: vertex residual. lcan_new = lcan_prev + b*tanh(raw/b).
    {
      const double bound = cfg.vertex_step_bound;
      std::vector<double> d_raw(size_t(v) * 3);
      for (int i = 0; i < v; ++i)
        for (int d = 0; d < 3; ++d) {
          g_prev.d_low[i][d] += g_t.d_low[i][d];
          const double th = std::tanh(cache.vertex_raw[size_t(i) * 3 + d] / bound);
          d_raw[size_t(i) * 3 + d] = g_t.d_low[i][d] * (1.0 - th * th);
        }
      const auto g_fb = mlp_backward(params, "head.vertex", kVertexHead,
                                     cache.vertex_mlp, d_raw, grads);
      for (size_t i = 0; i < g_fb.size(); ++i) d_feedback[i] += g_fb[i];
    }

    // --- C: mesh aggregation (relative positions are the previous canonical).
    std::vector<double> d_fused(size_t(v) * kC, 0.0);
    mesh_aggregate_vjp(params, cache.agg, cache.lcan_prev, adjacency, d_feedback,
                       &d_fused, &g_prev.d_low, grads);

    // --- B: fusion per vertex.
    std::vector<double> d_pair_out(cache.pair_out.size(), 0.0);
    {
      std::vector<double> d_block(size_t(n_src) * kC);
      std::vector<double> d_emb(kC);
      std::vector<double> g_out(kC);
      for (int i = 0; i < v; ++i) {
        std::fill(d_block.begin(), d_block.end(), 0.0);
        std::fill(d_emb.begin(), d_emb.end(), 0.0);
        std::copy(d_fused.begin() + size_t(i) * kC,
                  d_fused.begin() + size_t(i + 1) * kC, g_out.begin());
        fuse_multi_source_vjp(params, cache.fusion[i], g_out, &d_block, &d_emb,
                              grads);
        for (size_t d = 0; d < d_block.size(); ++d)
          d_pair_out[size_t(i) * n_src * kC + d] += d_block[d];
        for (int d = 0; d < kC; ++d)
          g_prev.d_embeddings[size_t(i) * kC + d] += d_emb[d];
      }
    }

    // --- A: pair lift, sampling, feedback renders, articulation.
    {
      const auto d_pair_in =
          linear_vjp(params, "feat.pair", cache.pair_in, v * n_src, 2 * kC, kC,
                     d_pair_out, grads);
      std::vector<std::vector<Vec3>> d_fb_low(n_src);
      std::vector<Image> d_pred_maps;
      for (int n = 0; n < n_src; ++n) {
        d_fb_low[n].assign(cache.fb_low[n].size(), Vec3::Zero());
        d_pred_maps.emplace_back(cache.fb_maps[n].height, cache.fb_maps[n].width,
                                 kFeatureWidth);
      }
      std::vector<double> d_src_feat(kC), d_pred_feat(kC);
      for (int i = 0; i < v; ++i)
        for (int n = 0; n < n_src; ++n) {
          const double* row = d_pair_in.data() + (size_t(i) * n_src + n) * 2 * kC;
          std::copy(row, row + kC, d_src_feat.begin());
          std::copy(row + kC, row + 2 * kC, d_pred_feat.begin());
          Vec2 d_uv = Vec2::Zero();
          const Vec2 uv = cache.uvs[size_t(i) * n_src + n];
          sample_pixel_aligned_vjp(src_feat.maps[n], uv, d_src_feat,
                                   &d_src_maps[n], &d_uv);
          sample_pixel_aligned_vjp(cache.fb_maps[n], uv, d_pred_feat,
                                   &d_pred_maps[n], &d_uv);
          project_point_vjp(sources[n].camera, cache.fb_low[n][i],
                            cfg.raster.near_plane, d_uv, d_fb_low[n][i]);
        }

      for (int n = 0; n < n_src; ++n) {
        // Through the predicted-image encoder into the feedback render.
        Image d_pred_image(cache.fb_maps[n].height, cache.fb_maps[n].width, 3);
        encode_image_vjp(params, cache.fb_enc[n], d_pred_maps[n], &d_pred_image,
                         grads);
        const auto gaussians = gaussians_world_raw(
            topology().high_mesh, cache.faces_prev, cache.fb_high[n]);
        Image zero_alpha(d_pred_image.height, d_pred_image.width, 1);
        const auto wg =
            rasterize_backward(gaussians, sources[n].camera, d_pred_image,
                               zero_alpha, cfg.raster);
        std::vector<Vec3> d_high;
        std::vector<FaceGaussian> d_faces;
        gaussians_world_raw_vjp(topology().high_mesh, cache.faces_prev,
                                cache.fb_high[n], wg, d_high, d_faces);
        for (int j = 0; j < f; ++j)
          accumulate_face(g_prev.d_faces[j], d_faces[j]);
        const auto d_low_from_high =
            prolong_vjp(topology().prolongation, d_high);
        for (int i = 0; i < v; ++i) d_fb_low[n][i] += d_low_from_high[i];
        skin_positions_vjp(topology().weights, sources[n].pose, d_fb_low[n],
                           g_prev.d_low);
      }
    }
  }
};

ReconTape::ReconTape(const SourceSet& sources, const Rig& rig,
                     const ParamStore& params, const ReconConfig& cfg)
    : impl_(std::make_unique<Impl>(sources, rig, params, cfg)) {}

ReconTape::~ReconTape() = default;

void ReconTape::run(int steps) { impl_->run(steps); }

const std::vector<FeedbackState>& ReconTape::states() const {
  return impl_->states;
}

int ReconTape::render_state(int t, const Pose& pose, const CameraModel& camera) {
  return impl_->render_state(t, pose, camera);
}

const RenderOutput& ReconTape::render_output(int render_id) const {
  return impl_->passes.at(size_t(render_id)).output;
}

void ReconTape::add_render_grad(int render_id, const Image& grad_image,
                                const Image& grad_alpha) {
  RenderPass& pass = impl_->passes.at(size_t(render_id));
  for (size_t i = 0; i < grad_image.data.size(); ++i)
    pass.grad_image.data[i] += grad_image.data[i];
  for (size_t i = 0; i < grad_alpha.data.size(); ++i)
    pass.grad_alpha.data[i] += grad_alpha.data[i];
  pass.has_grad = true;
}

void ReconTape::add_state_grad(int t, const std::vector<Vec3>& grad_low) {
  auto& dst = impl_->extra_low_grads.at(size_t(t));
  if (dst.empty()) dst.assign(grad_low.size(), Vec3::Zero());
  for (size_t i = 0; i < grad_low.size(); ++i) dst[i] += grad_low[i];
}

}  // namespace lgom
