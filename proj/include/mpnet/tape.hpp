#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mpnet/errors.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

/// One value slot in the computation graph. Gradients accumulate by
/// summation into `grad`, which is allocated only when the node
/// participates in differentiation.
template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool needs_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
  }
  void zero_grad() { grad.fill(T(0)); }
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// Leaf with no gradient (inputs, labels-as-data).
template <class T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

/// Leaf that wants a gradient. Parameters and synthesis inputs.
template <class T>
Var<T> leaf(Tensor<T> value, bool needs_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->needs_grad = needs_grad;
  if (needs_grad) n->ensure_grad();
  return n;
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  return leaf(std::move(value), true);
}

/// Ordered record of executed primitives. Each entry is the backward rule
/// of one op, closing over the input/output nodes it touches. Replaying
/// entries in reverse yields gradients for every reachable parameter.
/// Cleared between minibatches.
template <class T>
class Tape {
 public:
  void record(std::function<void()> backward_rule) {
    entries_.push_back(std::move(backward_rule));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs all backward rules in reverse op
  /// order. `loss` must be a single-element tensor.
  void backward(const Var<T>& loss) {
    if (loss->value.size() != 1)
      throw ShapeError("backward: loss must be a single element, got shape " +
                       shape_string(loss->value.shape()));
    if (!loss->needs_grad)
      throw Error("backward: loss does not depend on any differentiable leaf");
    loss->ensure_grad();
    loss->grad[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void clear() { entries_.clear(); }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<std::function<void()>> entries_;
};

}  // namespace mpnet
