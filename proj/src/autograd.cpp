#include "tap/autograd.hpp"

#include <unordered_set>

#include "tap/errors.hpp"

namespace tap {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed) {
  if (!root.requires_grad()) return;
  auto* root_node = root.node().get();
  if (seed) {
    if (seed->shape() != root.shape()) throw ConfigError("backward: seed shape mismatch");
    root_node->accumulate(*seed);
  } else {
    if (root.value().numel() != 1) throw ConfigError("backward: root must be a scalar without a seed");
    root_node->accumulate(Tensor<T>(root.shape(), T(1)));
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root_node, 0}};
  seen.insert(root_node);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
      // Interior gradients are not needed once propagated.
      node->grad = Tensor<T>();
    }
  }
}

template void backward(const Var<float>&, const Tensor<float>*);
template void backward(const Var<double>&, const Tensor<double>*);

}  // namespace tap
