#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fdb/tensor.hpp"

namespace fdb {

// Reverse-mode automatic differentiation over Tensor values.
//
// Every operation produces a Node holding its forward value. When at least
// one input requires a gradient, the node keeps its inputs alive and records
// a closure that pushes the node's gradient back into them. Constant-only
// subgraphs record nothing and release their inputs immediately.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Returns the gradient buffer, allocating zeros on first use.
  Tensor<T>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void accumulate(const Tensor<T>& g);
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value);
  static Var leaf(Tensor<T> value, bool requires_grad = true);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  // Gradient after backward(); zeros if the node never received one.
  Tensor<T> grad() const;
  void zero_grad() { node_->grad = Tensor<T>(); }
  T item() const { return node_->value.item(); }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds the result node of an operation. `fn` is only recorded when some
// input requires a gradient.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn);

// Seeds d(root)/d(root) = 1 and propagates through the recorded graph.
// Gradients of interior nodes are released once consumed; leaf gradients
// accumulate across calls until zero_grad().
template <typename T>
void backward(const Var<T>& root);

// RAII guard that disables graph recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

extern template struct Node<float>;
extern template struct Node<double>;
extern template class Var<float>;
extern template class Var<double>;

}  // namespace fdb
