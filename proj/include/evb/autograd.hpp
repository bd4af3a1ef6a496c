#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "evb/tensor.hpp"

namespace evb::nn {

/// Thread-local switch for graph recording; inference runs with it off.
class GradMode {
 public:
  static bool enabled();
  static void set(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Tensor<T>& ensure_grad() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Shared handle to a graph node. Copies alias the same node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  void zero_grad();

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node<T>> node);

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode sweep from a single-element root.
template <typename T>
void backward(const Var<T>& root);

// Operations. Activations are single images (n = 1).

/// Same-padded stride-1 convolution; `bias` may be undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> exp(const Var<T>& x);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);

/// Channel concatenation.
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(const Var<T>& x, int begin, int count);

/// 2x2 average pooling with stride 2 (odd trailing rows/cols are dropped).
template <typename T> Var<T> avg_pool2(const Var<T>& x);
template <typename T> Var<T> max_pool2(const Var<T>& x);
/// Nearest-neighbour 2x upsampling.
template <typename T> Var<T> upsample2(const Var<T>& x);

/// mean(|a - b|) as a scalar; the subgradient at 0 is 0.
template <typename T> Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b);
/// sum((a - b)^2) as a scalar.
template <typename T> Var<T> sum_squared_error(const Var<T>& a, const Var<T>& b);
/// Sum of scalars.
template <typename T> Var<T> add_scalars(const std::vector<Var<T>>& terms);

}  // namespace evb::nn
