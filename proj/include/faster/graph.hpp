#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "faster/tensor.hpp"

namespace faster {

template <typename Scalar>
class Graph;

/// A tensor value plus its gradient slot. Copies share the same node, so a
/// parameter held by a cell and the Var returned from an op refer to one
/// buffer.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node>(Node{std::move(value), {}, requires_grad, nullptr})) {}

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Accumulated gradient; empty tensor until a backward pass reaches this var.
  const Tensor<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  friend class Graph<Scalar>;

  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad;
    const Graph<Scalar>* producer;
  };

  Tensor<Scalar>& grad_buffer() {
    if (node_->grad.empty()) node_->grad = Tensor<Scalar>(node_->value.shape());
    return node_->grad;
  }

  std::shared_ptr<Node> node_;
};

/// Tape of executed ops. Ops append a record only when some input requires a
/// gradient, so a graph over frozen tensors costs nothing beyond the forward
/// pass. A graph supports exactly one backward pass.
template <typename Scalar>
class Graph {
 public:
  /// Receives the gradient flowing into the op's output and must add the
  /// input gradients into the provided buffers (null when not required).
  using BackwardFn =
      std::function<void(const Tensor<Scalar>& out_grad, std::vector<Tensor<Scalar>*>& in_grads)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Wraps `out` as the result of an op on `inputs`. Scans for NaN/Inf when
  /// numeric checks are enabled.
  Var<Scalar> record(const char* op, Tensor<Scalar> out, std::vector<Var<Scalar>> inputs, BackwardFn backward);

  /// Populates grads of every requires_grad var reachable from `loss`.
  void backward(const Var<Scalar>& loss);

  std::size_t tape_size() const { return tape_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Record {
    const char* op;
    Var<Scalar> output;
    std::vector<Var<Scalar>> inputs;
    BackwardFn backward;
  };

  std::vector<Record> tape_;
  bool consumed_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace faster
