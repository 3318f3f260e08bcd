#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fsdnet/ops.hpp"
#include "fsdnet/rng.hpp"
#include "fsdnet/tensor.hpp"

namespace fsd {

// Ordered registry of named parameters and buffers. Registration order is the
// checkpoint order; gradients accumulate into parameters until zero_grad.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = true;
  };

  Tensor add_param(const std::string& name, Shape s) {
    Tensor t(s, 0.0);
    t.set_requires_grad(true);
    entries_.push_back({name, t, true});
    return t;
  }

  Tensor add_buffer(const std::string& name, Shape s, double fill = 0.0) {
    Tensor t(s, fill);
    entries_.push_back({name, t, false});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Entry>& entries() { return entries_; }

  const Tensor* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.trainable) e.tensor.zero_grad();
  }

  int64_t count_trainable() const {
    int64_t total = 0;
    for (const auto& e : entries_)
      if (e.trainable) total += e.tensor.numel();
    return total;
  }

 private:
  std::vector<Entry> entries_;
};

namespace init {

// Uniform He-style fan-in scaling.
inline void conv_weight(Tensor& w, Rng& rng) {
  const Shape s = w.shape();
  const double bound = std::sqrt(2.0 / static_cast<double>(s.c * s.h * s.w));
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
}

}  // namespace init

struct Conv2dLayer {
  Tensor weight, bias;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& store, const std::string& name, int in_c, int out_c,
              int k, int stride_, Rng& rng)
      : stride(stride_), pad(k / 2) {
    weight = store.add_param(name + ".weight", Shape{out_c, in_c, k, k});
    bias = store.add_param(name + ".bias", Shape{1, out_c, 1, 1});
    init::conv_weight(weight, rng);
  }

  Tensor operator()(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, pad);
  }

  int64_t out_channels() const { return weight.shape().n; }
};

struct BatchNormLayer {
  Tensor gamma, beta;
  Tensor running_mean, running_var;

  BatchNormLayer() = default;
  BatchNormLayer(ParamStore& store, const std::string& name, int channels) {
    gamma = store.add_param(name + ".gamma", Shape{1, channels, 1, 1});
    beta = store.add_param(name + ".beta", Shape{1, channels, 1, 1});
    running_mean = store.add_buffer(name + ".running_mean",
                                    Shape{1, channels, 1, 1}, 0.0);
    running_var = store.add_buffer(name + ".running_var",
                                   Shape{1, channels, 1, 1}, 1.0);
    std::fill(gamma.data().begin(), gamma.data().end(), 1.0);
  }

  Tensor operator()(const Tensor& x, bool training) const {
    Tensor rm = running_mean, rv = running_var;
    return batch_norm(x, gamma, beta, rm, rv, training);
  }
};

// conv -> BN -> leaky_relu, the standard block in every stack here.
struct ConvBnLeaky {
  Conv2dLayer conv;
  BatchNormLayer bn;
  double slope = 0.1;

  ConvBnLeaky() = default;
  ConvBnLeaky(ParamStore& store, const std::string& name, int in_c, int out_c,
              int k, int stride, Rng& rng)
      : conv(store, name + ".conv", in_c, out_c, k, stride, rng),
        bn(store, name + ".bn", out_c) {}

  Tensor operator()(const Tensor& x, bool training) const {
    return leaky_relu(bn(conv(x), training), slope);
  }

  int64_t out_channels() const { return conv.out_channels(); }
};

// SGD with momentum: v = beta*v - lr*grad; theta += v.
class SgdOptimizer {
 public:
  SgdOptimizer(ParamStore& store, double lr, double momentum,
               double grad_clip = 0.0)
      : store_(store), lr_(lr), momentum_(momentum), grad_clip_(grad_clip) {
    for (const auto& e : store.entries())
      velocity_.emplace_back(e.trainable ? e.tensor.numel() : 0, 0.0);
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    auto& entries = store_.entries();
    for (size_t i = 0; i < entries.size(); ++i) {
      if (!entries[i].trainable) continue;
      Tensor& t = entries[i].tensor;
      if (!t.has_grad()) continue;
      std::vector<double>& v = velocity_[i];
      const std::vector<double>& g = t.grad();
      std::vector<double>& d = t.data();
      for (size_t j = 0; j < d.size(); ++j) {
        const double gj =
            grad_clip_ > 0.0 ? std::clamp(g[j], -grad_clip_, grad_clip_) : g[j];
        v[j] = momentum_ * v[j] - lr_ * gj;
        d[j] += v[j];
      }
    }
  }

 private:
  ParamStore& store_;
  double lr_, momentum_, grad_clip_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace fsd
