#include "lgom/diff.hpp"

#include <cmath>
#include <stdexcept>

#include "lgom/container.hpp"
#include "lgom/rng.hpp"

namespace lgom {

ParamStore::Tensor& ParamStore::add(const std::string& name,
                                    std::vector<int> shape) {
  if (tensors_.count(name))
    throw std::invalid_argument("ParamStore: duplicate name '" + name + "'");
  size_t n = 1;
  for (int d : shape) n *= size_t(d);
  Tensor t;
  t.shape = std::move(shape);
  t.value.assign(n, 0.0);
  t.adam_m.assign(n, 0.0);
  t.adam_v.assign(n, 0.0);
  return tensors_.emplace(name, std::move(t)).first->second;
}

ParamStore::Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw std::invalid_argument("ParamStore: missing '" + name + "'");
  return it->second;
}

const ParamStore::Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw std::invalid_argument("ParamStore: missing '" + name + "'");
  return it->second;
}

size_t ParamStore::total_parameters() const {
  size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

void ParamStore::save(const std::string& path) const {
  TensorContainer tc;
  for (const auto& [name, t] : tensors_) {
    std::vector<int64_t> shape(t.shape.begin(), t.shape.end());
    tc.add_f64_as_f32(name, shape, t.value);
    tc.add_f64_as_f32(name + "#m", shape, t.adam_m);
    tc.add_f64_as_f32(name + "#v", shape, t.adam_v);
    tc.add_i32(name + "#t", {1}, {int32_t(t.step)});
  }
  tc.save(path);
}

ParamStore ParamStore::load(const std::string& path) {
  const TensorContainer tc = TensorContainer::load(path);
  ParamStore store;
  for (const auto& e : tc.entries) {
    if (e.name.find('#') != std::string::npos) continue;
    std::vector<int> shape(e.shape.begin(), e.shape.end());
    Tensor& t = store.add(e.name, shape);
    for (size_t i = 0; i < e.f32.size(); ++i) t.value[i] = e.f32[i];
    const auto& m = tc.at(e.name + "#m");
    const auto& v = tc.at(e.name + "#v");
    for (size_t i = 0; i < m.f32.size(); ++i) t.adam_m[i] = m.f32[i];
    for (size_t i = 0; i < v.f32.size(); ++i) t.adam_v[i] = v.f32[i];
    t.step = tc.at(e.name + "#t").i32.at(0);
  }
  return store;
}

std::vector<double>& GradStore::of(const std::string& name, size_t n) {
  auto it = grads_.find(name);
  if (it == grads_.end())
    it = grads_.emplace(name, std::vector<double>(n, 0.0)).first;
  if (it->second.size() != n)
    throw std::invalid_argument("GradStore: size mismatch for '" + name + "'");
  return it->second;
}

void GradStore::accumulate(const std::string& name, size_t i, double g) {
  grads_.at(name)[i] += g;
}

const std::vector<double>& GradStore::at(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end())
    throw std::invalid_argument("GradStore: missing '" + name + "'");
  return it->second;
}

void mlp_init(ParamStore& store, const std::string& prefix, const MLPSpec& spec,
              uint64_t seed) {
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    const std::string wname = prefix + ".l" + std::to_string(l) + ".w";
    const std::string bname = prefix + ".l" + std::to_string(l) + ".b";
    auto& w = store.add(wname, {fan_out, fan_in});
    store.add(bname, {fan_out});
    const bool zero = spec.zero_init_final && l == spec.layer_count() - 1;
    if (!zero) {
      Rng rng = named_stream(seed, wname);
      const double bound = std::sqrt(6.0 / double(fan_in));
      for (auto& x : w.value) x = rng.uniform(-bound, bound);
    }
  }
}

std::vector<double> mlp_forward(const ParamStore& store, const std::string& prefix,
                                const MLPSpec& spec, const std::vector<double>& x,
                                int rows, MLPCache* cache) {
  if (int(x.size()) != rows * spec.input_width())
    throw std::invalid_argument("mlp_forward: input shape mismatch for " + prefix);
  if (cache) {
    cache->rows = rows;
    cache->activations.clear();
    cache->activations.push_back(x);
  }
  std::vector<double> cur = x;
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int in_w = spec.widths[l];
    const int out_w = spec.widths[l + 1];
    const auto& w = store.at(prefix + ".l" + std::to_string(l) + ".w").value;
    const auto& b = store.at(prefix + ".l" + std::to_string(l) + ".b").value;
    std::vector<double> next(size_t(rows) * out_w);
    const bool last = l == spec.layer_count() - 1;
    for (int r = 0; r < rows; ++r) {
      const double* xin = cur.data() + size_t(r) * in_w;
      double* xout = next.data() + size_t(r) * out_w;
      for (int o = 0; o < out_w; ++o) {
        double acc = b[o];
        const double* wrow = w.data() + size_t(o) * in_w;
        for (int i = 0; i < in_w; ++i) acc += wrow[i] * xin[i];
        xout[o] = (!last && acc < 0.0) ? kLeakySlope * acc : acc;
      }
    }
    cur = std::move(next);
    if (cache) cache->activations.push_back(cur);
  }
  return cur;
}

std::vector<double> mlp_backward(const ParamStore& store,
                                 const std::string& prefix, const MLPSpec& spec,
                                 const MLPCache& cache,
                                 const std::vector<double>& grad_y,
                                 GradStore& grads) {
  const int rows = cache.rows;
  if (int(grad_y.size()) != rows * spec.output_width())
    throw std::invalid_argument("mlp_backward: grad shape mismatch for " + prefix);
  std::vector<double> grad = grad_y;
  for (int l = spec.layer_count() - 1; l >= 0; --l) {
    const int in_w = spec.widths[l];
    const int out_w = spec.widths[l + 1];
    const std::string wname = prefix + ".l" + std::to_string(l) + ".w";
    const std::string bname = prefix + ".l" + std::to_string(l) + ".b";
    const auto& w = store.at(wname).value;
    auto& gw = grads.of(wname, w.size());
    auto& gb = grads.of(bname, size_t(out_w));
    const auto& input = cache.activations[l];
    const auto& output = cache.activations[l + 1];
    const bool last = l == spec.layer_count() - 1;

    std::vector<double> grad_in(size_t(rows) * in_w, 0.0);
    for (int r = 0; r < rows; ++r) {
      const double* xin = input.data() + size_t(r) * in_w;
      const double* out = output.data() + size_t(r) * out_w;
      const double* gout = grad.data() + size_t(r) * out_w;
      double* gin = grad_in.data() + size_t(r) * in_w;
      for (int o = 0; o < out_w; ++o) {
        // Post-activation value < 0 implies the pre-activation was negative.
        const double g = (!last && out[o] < 0.0) ? gout[o] * kLeakySlope : gout[o];
        gb[o] += g;
        double* gwrow = gw.data() + size_t(o) * in_w;
        const double* wrow = w.data() + size_t(o) * in_w;
        for (int i = 0; i < in_w; ++i) {
          gwrow[i] += g * xin[i];
          gin[i] += g * wrow[i];
        }
      }
    }
    grad = std::move(grad_in);
  }
  return grad;
}

void adam_step(ParamStore& store, const GradStore& grads, const AdamConfig& cfg) {
  for (auto& [name, t] : store.tensors()) {
    if (!grads.has(name)) continue;
    const auto& g = grads.at(name);
    if (g.size() != t.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch for '" +
                                  name + "'");
    double lr = cfg.lr;
    size_t best = 0;
    for (const auto& [prefix, v] : cfg.lr_overrides)
      if (name.rfind(prefix, 0) == 0 && prefix.size() >= best) {
        best = prefix.size();
        lr = v;
      }
    t.step++;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(t.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(t.step));
    for (size_t i = 0; i < t.size(); ++i) {
      t.adam_m[i] = cfg.beta1 * t.adam_m[i] + (1.0 - cfg.beta1) * g[i];
      t.adam_v[i] = cfg.beta2 * t.adam_v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = t.adam_m[i] / bc1;
      const double vhat = t.adam_v[i] / bc2;
      t.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double gradcheck(const std::function<double(const std::vector<double>&)>& f,
                 const std::vector<double>& x,
                 const std::vector<double>& analytic_grad, double h) {
  if (x.size() != analytic_grad.size())
    throw std::invalid_argument("gradcheck: gradient size mismatch");
  double max_err = 0.0;
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = analytic_grad[i];
    const double denom =
        std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    max_err = std::max(max_err, std::abs(numeric - analytic) / denom);
  }
  return max_err;
}

}  // namespace lgom
