#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "tap/tensor.hpp"

namespace tap {

// Reverse-mode tape. Each Var owns a node; ops record parents and a backward
// closure only when grad mode is on and some input requires a gradient.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(Tensor<T> g) {
    if (grad.empty())
      grad = std::move(g);
    else
      grad += g;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t dim(int i) const { return node_->value.dim(i); }

  std::shared_ptr<Node<T>>& node() { return node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  // Detached copy sharing no graph history.
  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Thread-local switch; inference runs with recording disabled.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Builds the output Var of an op. `fn` is attached only when recording.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  bool needs = false;
  if (GradMode::enabled())
    for (const auto& in : inputs)
      if (in.requires_grad()) needs = true;
  Var<T> out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    node.parents.reserve(inputs.size());
    for (auto& in : inputs) node.parents.push_back(in.node());
    node.backward_fn = std::move(fn);
  }
  return out;
}

// Seeds d(root)/d(root) = 1 (root must be a scalar) or the given gradient.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr);

}  // namespace tap
