#pragma once

#include <vector>

#include "fsdnet/box.hpp"
#include "fsdnet/nn.hpp"

namespace fsd {

// Fire/Normal head on the deepest backbone tap: GAP -> FC(1) -> sigmoid.
struct ClassifierHead {
  Tensor weight, bias;

  ClassifierHead() = default;
  ClassifierHead(ParamStore& store, const std::string& name, int in_c,
                 Rng& rng) {
    weight = store.add_param(name + ".fc.weight", Shape{1, in_c, 1, 1});
    bias = store.add_param(name + ".fc.bias", Shape{1, 1, 1, 1});
    const double bound = std::sqrt(1.0 / static_cast<double>(in_c));
    for (double& v : weight.data()) v = rng.uniform(-bound, bound);
  }

  // p_fire per batch element, shape [n,1,1,1]
  Tensor operator()(const Tensor& small_tap) const {
    return sigmoid(dense_fc(global_avg_pool(small_tap), weight, bias));
  }
};

// Binary cross-entropy against the Fire (1) / Normal (0) label.
inline double classifier_loss(double p_fire, int label) {
  if (label != 0 && label != 1)
    throw std::invalid_argument("classifier_loss: label must be 0 or 1");
  return bce(p_fire, static_cast<double>(label));
}

// Mean BCE over a batch of head outputs [n,1,1,1], as a graph node.
inline Tensor classifier_batch_loss(const Tensor& probs,
                                    const std::vector<int>& labels) {
  const int64_t n = probs.shape().n;
  if (static_cast<int64_t>(labels.size()) != n || probs.numel() != n)
    throw std::invalid_argument("classifier_batch_loss: label count mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i)
    acc += bce(probs.data()[i], static_cast<double>(labels[i]));
  acc /= static_cast<double>(n);
  auto pnode = probs.node();
  return Tensor::make_op(
      Shape{1, 1, 1, 1}, {acc}, {probs},
      [pnode, labels](detail::TensorNode& self) {
        if (!pnode->requires_grad) return;
        std::vector<double>& dp = detail::ensure_grad(*pnode);
        const double g = self.grad[0] / static_cast<double>(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) {
          const double p = pnode->data[i];
          if (p <= 1e-7 || p >= 1.0 - 1e-7) continue;
          dp[i] += g * (p - labels[i]) / (p * (1.0 - p));
        }
      });
}

inline bool is_fire(double p_fire, double threshold = 0.5) {
  return p_fire >= threshold;
}

}  // namespace fsd
