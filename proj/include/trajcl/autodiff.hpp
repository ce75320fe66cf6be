#pragma once

#include <deque>
#include <functional>
#include <utility>

#include "trajcl/tensor.hpp"

namespace trajcl {

template <typename S>
class Tape;

template <typename S>
struct Node {
  Tensor<S> owned;                   // value storage for interior nodes
  const Tensor<S>* value = nullptr;  // points at owned or at external (leaf) storage
  Tensor<S> grad;                    // allocated on first accumulation
  Tensor<S>* grad_sink = nullptr;    // leaves accumulate here (ParamStore slot)
  bool requires_grad = false;
  std::function<void(Tape<S>&, Node&)> back;

  const Tensor<S>& val() const { return *value; }
};

template <typename S>
struct Var {
  Node<S>* n = nullptr;
  Tape<S>* tape = nullptr;
  const Tensor<S>& val() const { return n->val(); }
  bool defined() const { return n != nullptr; }
};

/// Reverse-mode tape over Tensor values. Nodes are appended in evaluation
/// order, which is already a topological order, so backpropagation is a
/// single reverse sweep. One tape per forward pass; reset() between batches.
template <typename S>
class Tape {
 public:
  /// If set, every op output is scanned for NaN/Inf (on by default; the
  /// training hot path turns it off and checks the loss per batch instead).
  bool check_finite = true;

  /// Trainable leaf whose gradient accumulates into an external slot.
  Var<S> leaf(const Tensor<S>& value, Tensor<S>* grad_sink) {
    Node<S>& n = nodes_.emplace_back();
    n.value = &value;
    n.grad_sink = grad_sink;
    n.requires_grad = true;
    return {&n, this};
  }

  /// Non-differentiable input (data, noise, constants).
  Var<S> constant(Tensor<S> value) {
    Node<S>& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.value = &n.owned;
    return {&n, this};
  }

  /// Interior node produced by an op.
  Var<S> make(Tensor<S> value, bool requires_grad,
              std::function<void(Tape&, Node<S>&)> back) {
    if (check_finite && !value.all_finite())
      throw NumericError("non-finite value produced by a forward op, shape " + value.shape());
    Node<S>& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.value = &n.owned;
    n.requires_grad = requires_grad;
    if (requires_grad) n.back = std::move(back);
    return {&n, this};
  }

  /// Gradient accumulator for `n`, allocated lazily at the value's shape.
  Tensor<S>& grad_of(Node<S>& n) {
    Tensor<S>& g = n.grad_sink ? *n.grad_sink : n.grad;
    if (g.numel() == 0) g = Tensor<S>::zeros(n.value->dims);
    return g;
  }

  bool has_grad(const Node<S>& n) const {
    const Tensor<S>& g = n.grad_sink ? *n.grad_sink : n.grad;
    return g.numel() != 0;
  }

  /// Seeds d(root)/d(root)=1 and runs the reverse sweep. Root must be scalar.
  void backward(Var<S> root) {
    if (root.n->val().numel() != 1)
      throw ShapeError("backward: root must be a scalar, got shape " + root.n->val().shape());
    grad_of(*root.n).v[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<S>& n = *it;
      if (n.requires_grad && n.back && has_grad(n)) n.back(*this, n);
    }
  }

  void reset() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node<S>> nodes_;
};

}  // namespace trajcl
