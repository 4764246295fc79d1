#include "lgom/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "lgom/rng.hpp"

namespace lgom {

namespace {

// 5-tap Gaussian (sigma 1), replicate border.
const std::array<double, 5>& blur_taps() {
  static const auto taps = [] {
    std::array<double, 5> t{};
    double sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
      t[i + 2] = std::exp(-0.5 * i * i);
      sum += t[i + 2];
    }
    for (double& v : t) v /= sum;
    return t;
  }();
  return taps;
}

Image blur5(const Image& img) {
  const auto& taps = blur_taps();
  Image tmp(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t) {
          const int xx = std::clamp(x + t, 0, img.width - 1);
          acc += taps[t + 2] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t) {
          const int yy = std::clamp(y + t, 0, img.height - 1);
          acc += taps[t + 2] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = acc;
      }
  return out;
}

// Adjoint of blur5: scatter with clamped indices, reverse axis order.
Image blur5_adjoint(const Image& g) {
  const auto& taps = blur_taps();
  Image tmp(g.height, g.width, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c) {
        const double v = g.at(y, x, c);
        for (int t = -2; t <= 2; ++t) {
          const int yy = std::clamp(y + t, 0, g.height - 1);
          tmp.at(yy, x, c) += taps[t + 2] * v;
        }
      }
  Image out(g.height, g.width, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c) {
        const double v = tmp.at(y, x, c);
        for (int t = -2; t <= 2; ++t) {
          const int xx = std::clamp(x + t, 0, g.width - 1);
          out.at(y, xx, c) += taps[t + 2] * v;
        }
      }
  return out;
}

Image decimate2(const Image& img) {
  Image out((img.height + 1) / 2, (img.width + 1) / 2, img.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(2 * y, 2 * x, c);
  return out;
}

Image decimate2_adjoint(const Image& g, int src_h, int src_w) {
  Image out(src_h, src_w, g.channels);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int c = 0; c < g.channels; ++c)
        out.at(2 * y, 2 * x, c) = g.at(y, x, c);
  return out;
}

struct ResizeTap {
  int i0, i1;
  double f;  // weight of i1
};

ResizeTap resize_tap(int dst, int dst_size, int src_size) {
  const double scale = double(src_size) / double(dst_size);
  double s = (dst + 0.5) * scale - 0.5;
  s = std::clamp(s, 0.0, double(src_size - 1));
  ResizeTap tap;
  tap.i0 = int(std::floor(s));
  tap.i1 = std::min(tap.i0 + 1, src_size - 1);
  tap.f = s - tap.i0;
  return tap;
}

Image resize_bilinear(const Image& img, int dst_h, int dst_w) {
  Image out(dst_h, dst_w, img.channels);
  for (int y = 0; y < dst_h; ++y) {
    const ResizeTap ty = resize_tap(y, dst_h, img.height);
    for (int x = 0; x < dst_w; ++x) {
      const ResizeTap tx = resize_tap(x, dst_w, img.width);
      for (int c = 0; c < img.channels; ++c) {
        const double v00 = img.at(ty.i0, tx.i0, c);
        const double v01 = img.at(ty.i0, tx.i1, c);
        const double v10 = img.at(ty.i1, tx.i0, c);
        const double v11 = img.at(ty.i1, tx.i1, c);
        out.at(y, x, c) = (1 - ty.f) * ((1 - tx.f) * v00 + tx.f * v01) +
                          ty.f * ((1 - tx.f) * v10 + tx.f * v11);
      }
    }
  }
  return out;
}

Image resize_bilinear_adjoint(const Image& g, int src_h, int src_w) {
  Image out(src_h, src_w, g.channels);
  for (int y = 0; y < g.height; ++y) {
    const ResizeTap ty = resize_tap(y, g.height, src_h);
    for (int x = 0; x < g.width; ++x) {
      const ResizeTap tx = resize_tap(x, g.width, src_w);
      for (int c = 0; c < g.channels; ++c) {
        const double v = g.at(y, x, c);
        out.at(ty.i0, tx.i0, c) += (1 - ty.f) * (1 - tx.f) * v;
        out.at(ty.i0, tx.i1, c) += (1 - ty.f) * tx.f * v;
        out.at(ty.i1, tx.i0, c) += ty.f * (1 - tx.f) * v;
        out.at(ty.i1, tx.i1, c) += ty.f * tx.f * v;
      }
    }
  }
  return out;
}

void softmax_inplace(double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

// g_logits[i] = a[i] * (g_a[i] - sum_j a[j] g_a[j])
void softmax_vjp(const double* a, const double* g_a, double* g_logits, int n) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += a[i] * g_a[i];
  for (int i = 0; i < n; ++i) g_logits[i] = a[i] * (g_a[i] - dot);
}

}  // namespace

void linear_init(ParamStore& store, const std::string& prefix, int in_w,
                 int out_w, uint64_t seed, bool zero) {
  auto& w = store.add(prefix + ".w", {out_w, in_w});
  store.add(prefix + ".b", {out_w});
  if (!zero) {
    Rng rng = named_stream(seed, prefix + ".w");
    const double bound = std::sqrt(6.0 / double(in_w));
    for (auto& x : w.value) x = rng.uniform(-bound, bound);
  }
}

std::vector<double> linear_forward(const ParamStore& params,
                                   const std::string& prefix,
                                   const std::vector<double>& x, int rows,
                                   int in_w, int out_w) {
  if (int(x.size()) != rows * in_w)
    throw std::invalid_argument("linear_forward: shape mismatch for " + prefix);
  const auto& w = params.at(prefix + ".w").value;
  const auto& b = params.at(prefix + ".b").value;
  std::vector<double> y(size_t(rows) * out_w);
  for (int r = 0; r < rows; ++r) {
    const double* xin = x.data() + size_t(r) * in_w;
    double* yout = y.data() + size_t(r) * out_w;
    for (int o = 0; o < out_w; ++o) {
      double acc = b[o];
      const double* wrow = w.data() + size_t(o) * in_w;
      for (int i = 0; i < in_w; ++i) acc += wrow[i] * xin[i];
      yout[o] = acc;
    }
  }
  return y;
}

std::vector<double> linear_vjp(const ParamStore& params, const std::string& prefix,
                               const std::vector<double>& x, int rows, int in_w,
                               int out_w, const std::vector<double>& grad_y,
                               GradStore& grads) {
  const auto& w = params.at(prefix + ".w").value;
  auto& gw = grads.of(prefix + ".w", w.size());
  auto& gb = grads.of(prefix + ".b", size_t(out_w));
  std::vector<double> gx(size_t(rows) * in_w, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* xin = x.data() + size_t(r) * in_w;
    const double* gout = grad_y.data() + size_t(r) * out_w;
    double* gin = gx.data() + size_t(r) * in_w;
    for (int o = 0; o < out_w; ++o) {
      const double g = gout[o];
      gb[o] += g;
      double* gwrow = gw.data() + size_t(o) * in_w;
      const double* wrow = w.data() + size_t(o) * in_w;
      for (int i = 0; i < in_w; ++i) {
        gwrow[i] += g * xin[i];
        gin[i] += g * wrow[i];
      }
    }
  }
  return gx;
}

Image encode_image(const ParamStore& params, const Image& image,
                   EncodeCache* cache) {
  const int h = image.height, w = image.width;
  Image concat(h, w, kEncoderConcatChannels);
  Image level = image;
  for (int l = 0; l < kPyramidLevels; ++l) {
    if (l > 0) level = decimate2(blur5(level));
    const Image up = (l == 0) ? level : resize_bilinear(level, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) concat.at(y, x, c + 3 * l) = up.at(y, x, c);
  }
  std::vector<double> lifted =
      linear_forward(params, "enc.lift", concat.data, h * w,
                     kEncoderConcatChannels, kFeatureWidth);
  Image out(h, w, kFeatureWidth);
  out.data = std::move(lifted);
  if (cache) cache->concat = std::move(concat);
  return out;
}

void encode_image_vjp(const ParamStore& params, const EncodeCache& cache,
                      const Image& grad_out, Image* grad_image,
                      GradStore& grads) {
  const int h = cache.concat.height, w = cache.concat.width;
  const std::vector<double> g_concat_flat =
      linear_vjp(params, "enc.lift", cache.concat.data, h * w,
                 kEncoderConcatChannels, kFeatureWidth, grad_out.data, grads);
  if (!grad_image) return;

  // Walk each pyramid level's linear chain backwards. Level sizes replay the
  // forward recurrence.
  for (int l = 0; l < kPyramidLevels; ++l) {
    std::vector<std::pair<int, int>> sizes{{h, w}};
    for (int k = 0; k < l; ++k)
      sizes.emplace_back((sizes.back().first + 1) / 2,
                         (sizes.back().second + 1) / 2);
    Image g_level(sizes[l].first, sizes[l].second, 3);
    if (l == 0) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c)
            g_level.at(y, x, c) =
                g_concat_flat[(size_t(y) * w + x) * kEncoderConcatChannels + c];
    } else {
      Image g_up(h, w, 3);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c)
            g_up.at(y, x, c) =
                g_concat_flat[(size_t(y) * w + x) * kEncoderConcatChannels + c +
                              3 * l];
      g_level = resize_bilinear_adjoint(g_up, sizes[l].first, sizes[l].second);
    }
    for (int k = l; k > 0; --k) {
      const Image g_blurred =
          decimate2_adjoint(g_level, sizes[k - 1].first, sizes[k - 1].second);
      g_level = blur5_adjoint(g_blurred);
    }
    for (size_t i = 0; i < grad_image->data.size(); ++i)
      grad_image->data[i] += g_level.data[i];
  }
}

std::vector<double> sample_pixel_aligned(const Image& fm, const Vec2& uv) {
  const double u = std::clamp(uv.x(), 0.0, double(fm.width - 1));
  const double v = std::clamp(uv.y(), 0.0, double(fm.height - 1));
  const int x0 = int(std::floor(u));
  const int y0 = int(std::floor(v));
  const int x1 = std::min(x0 + 1, fm.width - 1);
  const int y1 = std::min(y0 + 1, fm.height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  std::vector<double> out(size_t(fm.channels));
  for (int c = 0; c < fm.channels; ++c)
    out[c] = (1 - fy) * ((1 - fx) * fm.at(y0, x0, c) + fx * fm.at(y0, x1, c)) +
             fy * ((1 - fx) * fm.at(y1, x0, c) + fx * fm.at(y1, x1, c));
  return out;
}

void sample_pixel_aligned_vjp(const Image& fm, const Vec2& uv,
                              const std::vector<double>& grad_feat,
                              Image* grad_fm, Vec2* grad_uv) {
  const bool clamped_u = uv.x() < 0.0 || uv.x() > double(fm.width - 1);
  const bool clamped_v = uv.y() < 0.0 || uv.y() > double(fm.height - 1);
  const double u = std::clamp(uv.x(), 0.0, double(fm.width - 1));
  const double v = std::clamp(uv.y(), 0.0, double(fm.height - 1));
  const int x0 = int(std::floor(u));
  const int y0 = int(std::floor(v));
  const int x1 = std::min(x0 + 1, fm.width - 1);
  const int y1 = std::min(y0 + 1, fm.height - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  double gu = 0.0, gv = 0.0;
  for (int c = 0; c < fm.channels; ++c) {
    const double g = grad_feat[c];
    const double v00 = fm.at(y0, x0, c), v01 = fm.at(y0, x1, c);
    const double v10 = fm.at(y1, x0, c), v11 = fm.at(y1, x1, c);
    if (grad_fm) {
      grad_fm->at(y0, x0, c) += g * (1 - fy) * (1 - fx);
      grad_fm->at(y0, x1, c) += g * (1 - fy) * fx;
      grad_fm->at(y1, x0, c) += g * fy * (1 - fx);
      grad_fm->at(y1, x1, c) += g * fy * fx;
    }
    gu += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
    gv += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
  }
  if (grad_uv) {
    grad_uv->x() += clamped_u ? 0.0 : gu;
    grad_uv->y() += clamped_v ? 0.0 : gv;
  }
}

std::vector<double> fuse_multi_source(const ParamStore& params,
                                      const std::vector<double>& source_features,
                                      int n, const std::vector<double>& embedding,
                                      FusionCache* cache) {
  const int c = kFeatureWidth;
  if (int(source_features.size()) != n * c || int(embedding.size()) != c)
    throw std::invalid_argument("fuse_multi_source: width mismatch");
  const double inv_sqrt = 1.0 / std::sqrt(double(c));

  std::vector<double> q1 = linear_forward(params, "fuse.r1.q", source_features, n, c, c);
  std::vector<double> k1 = linear_forward(params, "fuse.r1.k", source_features, n, c, c);
  std::vector<double> v1 = linear_forward(params, "fuse.r1.v", source_features, n, c, c);

  std::vector<double> attn1(size_t(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int d = 0; d < c; ++d) dot += q1[i * c + d] * k1[j * c + d];
      attn1[i * n + j] = dot * inv_sqrt;
    }
    softmax_inplace(attn1.data() + size_t(i) * n, n);
  }
  std::vector<double> h1(size_t(n) * c, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double a = attn1[i * n + j];
      for (int d = 0; d < c; ++d) h1[i * c + d] += a * v1[j * c + d];
    }

  std::vector<double> q2 = linear_forward(params, "fuse.r2.q", embedding, 1, c, c);
  std::vector<double> k2 = linear_forward(params, "fuse.r2.k", h1, n, c, c);
  std::vector<double> v2 = linear_forward(params, "fuse.r2.v", h1, n, c, c);
  std::vector<double> attn2(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    double dot = 0.0;
    for (int d = 0; d < c; ++d) dot += q2[d] * k2[j * c + d];
    attn2[j] = dot * inv_sqrt;
  }
  softmax_inplace(attn2.data(), n);
  std::vector<double> out(size_t(c), 0.0);
  for (int j = 0; j < n; ++j)
    for (int d = 0; d < c; ++d) out[d] += attn2[j] * v2[j * c + d];

  if (cache) {
    cache->n = n;
    cache->width = c;
    cache->sources = source_features;
    cache->embedding = embedding;
    cache->q1 = std::move(q1);
    cache->k1 = std::move(k1);
    cache->v1 = std::move(v1);
    cache->attn1 = std::move(attn1);
    cache->h1 = std::move(h1);
    cache->q2 = std::move(q2);
    cache->k2 = std::move(k2);
    cache->v2 = std::move(v2);
    cache->attn2 = std::move(attn2);
  }
  return out;
}

void fuse_multi_source_vjp(const ParamStore& params, const FusionCache& cache,
                           const std::vector<double>& grad_out,
                           std::vector<double>* grad_sources,
                           std::vector<double>* grad_embedding,
                           GradStore& grads) {
  const int n = cache.n;
  const int c = cache.width;
  const double inv_sqrt = 1.0 / std::sqrt(double(c));

  // Round 2 backward.
  std::vector<double> g_attn2(n, 0.0), g_v2(size_t(n) * c, 0.0);
  for (int j = 0; j < n; ++j) {
    double dot = 0.0;
    for (int d = 0; d < c; ++d) {
      dot += grad_out[d] * cache.v2[j * c + d];
      g_v2[j * c + d] = cache.attn2[j] * grad_out[d];
    }
    g_attn2[j] = dot;
  }
  std::vector<double> g_logits2(n);
  softmax_vjp(cache.attn2.data(), g_attn2.data(), g_logits2.data(), n);
  std::vector<double> g_q2(c, 0.0), g_k2(size_t(n) * c, 0.0);
  for (int j = 0; j < n; ++j)
    for (int d = 0; d < c; ++d) {
      g_q2[d] += g_logits2[j] * cache.k2[j * c + d] * inv_sqrt;
      g_k2[j * c + d] = g_logits2[j] * cache.q2[d] * inv_sqrt;
    }

  std::vector<double> g_h1(size_t(n) * c, 0.0);
  {
    const auto g = linear_vjp(params, "fuse.r2.k", cache.h1, n, c, c, g_k2, grads);
    for (size_t i = 0; i < g.size(); ++i) g_h1[i] += g[i];
    const auto g2 = linear_vjp(params, "fuse.r2.v", cache.h1, n, c, c, g_v2, grads);
    for (size_t i = 0; i < g2.size(); ++i) g_h1[i] += g2[i];
    const auto ge = linear_vjp(params, "fuse.r2.q", cache.embedding, 1, c, c,
                               g_q2, grads);
    if (grad_embedding)
      for (int d = 0; d < c; ++d) (*grad_embedding)[d] += ge[d];
  }

  // Round 1 backward.
  std::vector<double> g_attn1(size_t(n) * n, 0.0), g_v1(size_t(n) * c, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int d = 0; d < c; ++d) {
        dot += g_h1[i * c + d] * cache.v1[j * c + d];
        g_v1[j * c + d] += cache.attn1[i * n + j] * g_h1[i * c + d];
      }
      g_attn1[i * n + j] = dot;
    }
  std::vector<double> g_q1(size_t(n) * c, 0.0), g_k1(size_t(n) * c, 0.0);
  std::vector<double> g_logits1(n);
  for (int i = 0; i < n; ++i) {
    softmax_vjp(cache.attn1.data() + size_t(i) * n, g_attn1.data() + size_t(i) * n,
                g_logits1.data(), n);
    for (int j = 0; j < n; ++j)
      for (int d = 0; d < c; ++d) {
        g_q1[i * c + d] += g_logits1[j] * cache.k1[j * c + d] * inv_sqrt;
        g_k1[j * c + d] += g_logits1[j] * cache.q1[i * c + d] * inv_sqrt;
      }
  }

  std::vector<double> g_src(size_t(n) * c, 0.0);
  const auto gq = linear_vjp(params, "fuse.r1.q", cache.sources, n, c, c, g_q1, grads);
  const auto gk = linear_vjp(params, "fuse.r1.k", cache.sources, n, c, c, g_k1, grads);
  const auto gv = linear_vjp(params, "fuse.r1.v", cache.sources, n, c, c, g_v1, grads);
  for (size_t i = 0; i < g_src.size(); ++i) g_src[i] = gq[i] + gk[i] + gv[i];
  if (grad_sources)
    for (size_t i = 0; i < g_src.size(); ++i) (*grad_sources)[i] += g_src[i];
}

namespace {

std::vector<double> aggregate_round(const ParamStore& params,
                                    const std::string& prefix,
                                    const std::vector<double>& x,
                                    const std::vector<Vec3>& positions,
                                    const std::vector<std::vector<int>>& adjacency,
                                    AggregateRoundCache* cache) {
  const int c = kFeatureWidth;
  const int nv = int(positions.size());
  const double inv_sqrt = 1.0 / std::sqrt(double(c));
  const auto& wq = params.at(prefix + ".q.w").value;
  const auto& bq = params.at(prefix + ".q.b").value;
  const auto& wk = params.at(prefix + ".k.w").value;
  const auto& bk = params.at(prefix + ".k.b").value;
  const auto& wv = params.at(prefix + ".v.w").value;
  const auto& bv = params.at(prefix + ".v.b").value;
  const auto& wp = params.at(prefix + ".p.w").value;
  const auto& bp = params.at(prefix + ".p.b").value;

  std::vector<double> out(size_t(nv) * c, 0.0);
  if (cache) {
    cache->input = x;
    cache->attn.assign(nv, {});
    cache->keys.assign(nv, {});
    cache->values.assign(nv, {});
    cache->queries.assign(size_t(nv) * c, 0.0);
  }
  std::vector<double> q(c), logits, key, val;
  for (int i = 0; i < nv; ++i) {
    for (int d = 0; d < c; ++d) {
      double acc = bq[d];
      for (int e = 0; e < c; ++e) acc += wq[size_t(d) * c + e] * x[size_t(i) * c + e];
      q[d] = acc;
    }
    // Self first, then the sorted 1-ring.
    std::vector<int> nb{i};
    nb.insert(nb.end(), adjacency[i].begin(), adjacency[i].end());
    const int deg = int(nb.size());
    logits.assign(deg, 0.0);
    key.assign(size_t(deg) * c, 0.0);
    val.assign(size_t(deg) * c, 0.0);
    for (int s = 0; s < deg; ++s) {
      const int j = nb[s];
      const Vec3 rel = positions[j] - positions[i];
      for (int d = 0; d < c; ++d) {
        double delta = bp[d];
        for (int e = 0; e < 3; ++e) delta += wp[size_t(d) * 3 + e] * rel[e];
        double kk = bk[d] + delta;
        double vv = bv[d] + delta;
        for (int e = 0; e < c; ++e) {
          kk += wk[size_t(d) * c + e] * x[size_t(j) * c + e];
          vv += wv[size_t(d) * c + e] * x[size_t(j) * c + e];
        }
        key[size_t(s) * c + d] = kk;
        val[size_t(s) * c + d] = vv;
        logits[s] += q[d] * kk;
      }
      logits[s] *= inv_sqrt;
    }
    softmax_inplace(logits.data(), deg);
    for (int d = 0; d < c; ++d) {
      double acc = x[size_t(i) * c + d];  // residual
      for (int s = 0; s < deg; ++s) acc += logits[s] * val[size_t(s) * c + d];
      out[size_t(i) * c + d] = acc;
    }
    if (cache) {
      cache->attn[i] = logits;
      cache->keys[i] = key;
      cache->values[i] = val;
      for (int d = 0; d < c; ++d) cache->queries[size_t(i) * c + d] = q[d];
    }
  }
  return out;
}

void aggregate_round_vjp(const ParamStore& params, const std::string& prefix,
                         const AggregateRoundCache& cache,
                         const std::vector<Vec3>& positions,
                         const std::vector<std::vector<int>>& adjacency,
                         const std::vector<double>& grad_out,
                         std::vector<double>& grad_x,
                         std::vector<Vec3>* grad_positions, GradStore& grads) {
  const int c = kFeatureWidth;
  const int nv = int(positions.size());
  const double inv_sqrt = 1.0 / std::sqrt(double(c));
  const auto& x = cache.input;
  const auto& wq = params.at(prefix + ".q.w").value;
  const auto& wk = params.at(prefix + ".k.w").value;
  const auto& wv = params.at(prefix + ".v.w").value;
  const auto& wp = params.at(prefix + ".p.w").value;
  auto& gwq = grads.of(prefix + ".q.w", wq.size());
  auto& gbq = grads.of(prefix + ".q.b", size_t(c));
  auto& gwk = grads.of(prefix + ".k.w", wk.size());
  auto& gbk = grads.of(prefix + ".k.b", size_t(c));
  auto& gwv = grads.of(prefix + ".v.w", wv.size());
  auto& gbv = grads.of(prefix + ".v.b", size_t(c));
  auto& gwp = grads.of(prefix + ".p.w", wp.size());
  auto& gbp = grads.of(prefix + ".p.b", size_t(c));

  grad_x.assign(size_t(nv) * c, 0.0);
  std::vector<double> g_attn, g_logits, g_q(c), g_key, g_val, g_delta(c);
  for (int i = 0; i < nv; ++i) {
    std::vector<int> nb{i};
    nb.insert(nb.end(), adjacency[i].begin(), adjacency[i].end());
    const int deg = int(nb.size());
    const auto& attn = cache.attn[i];
    const auto& key = cache.keys[i];
    const auto& val = cache.values[i];
    const double* gout = grad_out.data() + size_t(i) * c;

    // Residual path.
    for (int d = 0; d < c; ++d) grad_x[size_t(i) * c + d] += gout[d];

    g_attn.assign(deg, 0.0);
    g_val.assign(size_t(deg) * c, 0.0);
    for (int s = 0; s < deg; ++s)
      for (int d = 0; d < c; ++d) {
        g_attn[s] += gout[d] * val[size_t(s) * c + d];
        g_val[size_t(s) * c + d] = attn[s] * gout[d];
      }
    g_logits.assign(deg, 0.0);
    softmax_vjp(attn.data(), g_attn.data(), g_logits.data(), deg);

    std::fill(g_q.begin(), g_q.end(), 0.0);
    g_key.assign(size_t(deg) * c, 0.0);
    for (int s = 0; s < deg; ++s)
      for (int d = 0; d < c; ++d) {
        g_q[d] += g_logits[s] * key[size_t(s) * c + d] * inv_sqrt;
        g_key[size_t(s) * c + d] =
            g_logits[s] * cache.queries[size_t(i) * c + d] * inv_sqrt;
      }

    // Query linear.
    for (int d = 0; d < c; ++d) {
      gbq[d] += g_q[d];
      for (int e = 0; e < c; ++e) {
        gwq[size_t(d) * c + e] += g_q[d] * x[size_t(i) * c + e];
        grad_x[size_t(i) * c + e] += g_q[d] * wq[size_t(d) * c + e];
      }
    }

    // Key/value linears plus the shared relative-position encoding.
    for (int s = 0; s < deg; ++s) {
      const int j = nb[s];
      const Vec3 rel = positions[j] - positions[i];
      for (int d = 0; d < c; ++d) {
        const double gk = g_key[size_t(s) * c + d];
        const double gv = g_val[size_t(s) * c + d];
        gbk[d] += gk;
        gbv[d] += gv;
        g_delta[d] = gk + gv;
        for (int e = 0; e < c; ++e) {
          gwk[size_t(d) * c + e] += gk * x[size_t(j) * c + e];
          gwv[size_t(d) * c + e] += gv * x[size_t(j) * c + e];
          grad_x[size_t(j) * c + e] +=
              gk * wk[size_t(d) * c + e] + gv * wv[size_t(d) * c + e];
        }
      }
      Vec3 g_rel = Vec3::Zero();
      for (int d = 0; d < c; ++d) {
        gbp[d] += g_delta[d];
        for (int e = 0; e < 3; ++e) {
          gwp[size_t(d) * 3 + e] += g_delta[d] * rel[e];
          g_rel[e] += g_delta[d] * wp[size_t(d) * 3 + e];
        }
      }
      if (grad_positions) {
        (*grad_positions)[j] += g_rel;
        (*grad_positions)[i] -= g_rel;
      }
    }
  }
}

}  // namespace

std::vector<double> mesh_aggregate(const ParamStore& params,
                                   const std::vector<double>& vertex_features,
                                   const std::vector<Vec3>& positions,
                                   const std::vector<std::vector<int>>& adjacency,
                                   AggregateCache* cache) {
  if (vertex_features.size() != positions.size() * kFeatureWidth)
    throw std::invalid_argument("mesh_aggregate: feature count mismatch");
  std::vector<double> h =
      aggregate_round(params, "agg.r1", vertex_features, positions, adjacency,
                      cache ? &cache->rounds[0] : nullptr);
  return aggregate_round(params, "agg.r2", h, positions, adjacency,
                         cache ? &cache->rounds[1] : nullptr);
}

void mesh_aggregate_vjp(const ParamStore& params, const AggregateCache& cache,
                        const std::vector<Vec3>& positions,
                        const std::vector<std::vector<int>>& adjacency,
                        const std::vector<double>& grad_out,
                        std::vector<double>* grad_features,
                        std::vector<Vec3>* grad_positions, GradStore& grads) {
  std::vector<double> g_h;
  aggregate_round_vjp(params, "agg.r2", cache.rounds[1], positions, adjacency,
                      grad_out, g_h, grad_positions, grads);
  std::vector<double> g_x;
  aggregate_round_vjp(params, "agg.r1", cache.rounds[0], positions, adjacency,
                      g_h, g_x, grad_positions, grads);
  if (grad_features)
    for (size_t i = 0; i < g_x.size(); ++i) (*grad_features)[i] += g_x[i];
}

}  // namespace lgom
