#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace lgom {

/// Named flat parameter arrays with per-array Adam state. Values are held in
/// double precision; checkpoints serialize as f32. Iteration order is the
/// sorted name order, which fixes every reduction and update order.
class ParamStore {
 public:
  struct Tensor {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    int64_t step = 0;

    size_t size() const { return value.size(); }
  };

  Tensor& add(const std::string& name, std::vector<int> shape);
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  size_t total_parameters() const;

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Gradient accumulator keyed like a ParamStore.
class GradStore {
 public:
  std::vector<double>& of(const std::string& name, size_t n);
  void accumulate(const std::string& name, size_t i, double g);
  bool has(const std::string& name) const { return grads_.count(name) > 0; }
  const std::vector<double>& at(const std::string& name) const;
  std::map<std::string, std::vector<double>>& grads() { return grads_; }
  const std::map<std::string, std::vector<double>>& grads() const {
    return grads_;
  }
  void clear() { grads_.clear(); }

 private:
  std::map<std::string, std::vector<double>> grads_;
};

/// Fully connected net: affine + leaky rectifier (slope 0.01) per hidden
/// layer, affine output. widths = {in, hidden..., out}.
struct MLPSpec {
  std::vector<int> widths;
  bool zero_init_final = false;

  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  int layer_count() const { return int(widths.size()) - 1; }
};

constexpr double kLeakySlope = 0.01;

/// Registers the MLP's weights under "<prefix>.l<i>.w|b". Non-final layers
/// use uniform Kaiming fan-in init on a stream derived from (seed, name);
/// the final layer is zeroed when spec.zero_init_final is set.
void mlp_init(ParamStore& store, const std::string& prefix, const MLPSpec& spec,
              uint64_t seed);

struct MLPCache {
  int rows = 0;
  std::vector<std::vector<double>> activations;  // input + post-activation per layer
};

/// Row-batched forward: x is rows x input_width, returns rows x output_width.
std::vector<double> mlp_forward(const ParamStore& store, const std::string& prefix,
                                const MLPSpec& spec, const std::vector<double>& x,
                                int rows, MLPCache* cache);

/// Exact VJP; accumulates parameter gradients and returns grad_x.
std::vector<double> mlp_backward(const ParamStore& store,
                                 const std::string& prefix, const MLPSpec& spec,
                                 const MLPCache& cache,
                                 const std::vector<double>& grad_y,
                                 GradStore& grads);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Longest matching prefix wins; empty means the base lr.
  std::vector<std::pair<std::string, double>> lr_overrides;
};

/// Standard bias-corrected Adam over every tensor in the store. Tensors with
/// no gradient entry are left untouched (their step does not advance).
void adam_step(ParamStore& store, const GradStore& grads, const AdamConfig& cfg);

/// Central-difference gradient check: returns the max relative error with
/// denominator max(|analytic|, |numeric|, 1e-8).
double gradcheck(const std::function<double(const std::vector<double>&)>& f,
                 const std::vector<double>& x,
                 const std::vector<double>& analytic_grad, double h = 1e-4);

}  // namespace lgom
