#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fsd {

struct Shape {
  int64_t n = 0, c = 0, h = 0, w = 0;

  int64_t numel() const { return n * c * h * w; }

  bool operator==(const Shape& o) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
};

inline std::vector<double>& ensure_grad(TensorNode& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

}  // namespace detail

// NCHW tensor of 64-bit reals with reverse-mode differentiation. Copies are
// shallow (shared node); ops build a graph when any input requires grad.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0) {
    check_shape(s);
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = s;
    node_->data.assign(static_cast<size_t>(s.numel()), fill);
  }

  static Tensor from_data(Shape s, std::vector<double> data) {
    check_shape(s);
    if (static_cast<int64_t>(data.size()) != s.numel())
      throw std::invalid_argument("tensor: data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + s.str());
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = s;
    t.node_->data = std::move(data);
    return t;
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->shape.numel(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  double* ptr() { return node_->data.data(); }
  const double* ptr() const { return node_->data.data(); }

  double at(int64_t n, int64_t c, int64_t y, int64_t x) const {
    const Shape& s = node_->shape;
    return node_->data[((n * s.c + c) * s.h + y) * s.w + x];
  }
  double& at(int64_t n, int64_t c, int64_t y, int64_t x) {
    const Shape& s = node_->shape;
    return node_->data[((n * s.c + c) * s.h + y) * s.w + x];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  std::vector<double>& grad() { return detail::ensure_grad(*node_); }
  const std::vector<double>& grad() const { return detail::ensure_grad(*node_); }
  bool has_grad() const { return node_ && !node_->grad.empty(); }

  void zero_grad() {
    if (node_ && !node_->grad.empty())
      std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Reverse-mode pass from a scalar. Gradients accumulate into every
  // reachable node with requires_grad set.
  void backward() const {
    if (!node_) throw std::invalid_argument("backward: undefined tensor");
    if (numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape().str());
    std::vector<detail::TensorNode*> order = topo_order();
    detail::ensure_grad(*node_)[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::TensorNode* node = *it;
      if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  static Tensor make_op(Shape s, std::vector<double> data,
                        const std::vector<Tensor>& parents,
                        std::function<void(detail::TensorNode&)> fn) {
    Tensor t = from_data(s, std::move(data));
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    t.node_->requires_grad = rg;
    if (rg) {
      for (const auto& p : parents) t.node_->parents.push_back(p.node_);
      t.node_->backprop = std::move(fn);
    }
    return t;
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
      throw std::invalid_argument("tensor: invalid shape " + s.str());
  }

  std::vector<detail::TensorNode*> topo_order() const {
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<std::pair<detail::TensorNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        detail::TensorNode* p = node->parents[idx++].get();
        if (p && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;  // parents before children; root last
  }

  std::shared_ptr<detail::TensorNode> node_;
};

}  // namespace fsd
