#pragma once

#include <vector>

#include "lgom/diff.hpp"
#include "lgom/image.hpp"
#include "lgom/vecmath.hpp"

namespace lgom {

constexpr int kPyramidLevels = 4;                    // blur/downsample levels
constexpr int kEncoderConcatChannels = 3 * kPyramidLevels;  // 12
constexpr int kFeatureWidth = 32;                    // C'

/// Image encoder: a 4-level blur pyramid (Gaussian sigma 1, 2x downsample per
/// level, each level upsampled back bilinearly), channel-concatenated and
/// lifted per pixel by a learned affine map to kFeatureWidth channels.
struct EncodeCache {
  Image concat;  // H x W x 12, kept for the lift VJP
};

Image encode_image(const ParamStore& params, const Image& image,
                   EncodeCache* cache = nullptr);

/// VJP; grad_image may be null when the input is a constant (source images).
void encode_image_vjp(const ParamStore& params, const EncodeCache& cache,
                      const Image& grad_out, Image* grad_image,
                      GradStore& grads);

/// Bilinear lookup at pixel coordinates uv (pixel centers at integers).
/// Out-of-range coordinates clamp to the border.
std::vector<double> sample_pixel_aligned(const Image& fm, const Vec2& uv);

void sample_pixel_aligned_vjp(const Image& fm, const Vec2& uv,
                              const std::vector<double>& grad_feat,
                              Image* grad_fm, Vec2* grad_uv);

/// Two rounds of single-head scaled dot-product attention over the N source
/// slots: self-attention across sources, then single-query cross-attention
/// with the learnable vertex embedding as query. Permutation-invariant in the
/// source order.
struct FusionCache {
  int n = 0;
  int width = 0;
  std::vector<double> sources;  // n x c
  std::vector<double> embedding;
  std::vector<double> q1, k1, v1;  // n x c
  std::vector<double> attn1;       // n x n
  std::vector<double> h1;          // n x c
  std::vector<double> q2;          // c
  std::vector<double> k2, v2;      // n x c
  std::vector<double> attn2;       // n
};

std::vector<double> fuse_multi_source(const ParamStore& params,
                                      const std::vector<double>& source_features,
                                      int n, const std::vector<double>& embedding,
                                      FusionCache* cache = nullptr);

void fuse_multi_source_vjp(const ParamStore& params, const FusionCache& cache,
                           const std::vector<double>& grad_out,
                           std::vector<double>* grad_sources,
                           std::vector<double>* grad_embedding,
                           GradStore& grads);

/// Two rounds of 1-ring neighborhood attention on the low-res mesh graph with
/// a learned relative-position encoding added to keys and values, residual
/// connection per round. Differentiable in features and positions.
struct AggregateRoundCache {
  std::vector<double> input;                    // v x c
  std::vector<std::vector<double>> attn;        // per vertex, |nb|
  std::vector<std::vector<double>> keys;        // per vertex, |nb| x c
  std::vector<std::vector<double>> values;      // per vertex, |nb| x c
  std::vector<double> queries;                  // v x c
};

struct AggregateCache {
  AggregateRoundCache rounds[2];
};

std::vector<double> mesh_aggregate(const ParamStore& params,
                                   const std::vector<double>& vertex_features,
                                   const std::vector<Vec3>& positions,
                                   const std::vector<std::vector<int>>& adjacency,
                                   AggregateCache* cache = nullptr);

void mesh_aggregate_vjp(const ParamStore& params, const AggregateCache& cache,
                        const std::vector<Vec3>& positions,
                        const std::vector<std::vector<int>>& adjacency,
                        const std::vector<double>& grad_out,
                        std::vector<double>* grad_features,
                        std::vector<Vec3>* grad_positions, GradStore& grads);

/// Plain affine map y = W x + b applied row-wise, with VJP. Used for the
/// encoder lift, the source/predicted pair lift and the embedding update.
std::vector<double> linear_forward(const ParamStore& params,
                                   const std::string& prefix,
                                   const std::vector<double>& x, int rows,
                                   int in_w, int out_w);

std::vector<double> linear_vjp(const ParamStore& params, const std::string& prefix,
                               const std::vector<double>& x, int rows, int in_w,
                               int out_w, const std::vector<double>& grad_y,
                               GradStore& grads);

void linear_init(ParamStore& store, const std::string& prefix, int in_w,
                 int out_w, uint64_t seed, bool zero);

}  // namespace lgom
