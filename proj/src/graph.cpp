#include "faster/graph.hpp"

namespace faster {

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(const char* op, Tensor<Scalar> out, std::vector<Var<Scalar>> inputs,
                                  BackwardFn backward) {
  if (consumed_) throw GraphError(std::string("op '") + op + "' recorded on a graph after backward");
  if (numeric_checks_enabled() && !out.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();

  Var<Scalar> result(std::move(out), needs_grad);
  if (needs_grad) {
    result.node_->producer = this;
    tape_.push_back(Record{op, result, std::move(inputs), std::move(backward)});
  }
  return result;
}

template <typename Scalar>
void Graph<Scalar>::backward(const Var<Scalar>& loss) {
  if (consumed_) throw GraphError("backward called twice on the same graph");
  if (loss.value().size() != 1) {
    throw GraphError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw GraphError("loss does not depend on any tensor requiring grad");
  if (loss.node_->producer != this) throw GraphError("loss is not on this graph's tape");
  consumed_ = true;

  Var<Scalar> seed = loss;
  seed.grad_buffer()[0] += Scalar(1);

  std::vector<Tensor<Scalar>*> in_grads;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Record& rec = *it;
    if (!rec.output.has_grad()) continue;
    in_grads.assign(rec.inputs.size(), nullptr);
    for (std::size_t i = 0; i < rec.inputs.size(); ++i) {
      if (rec.inputs[i].requires_grad()) in_grads[i] = &rec.inputs[i].grad_buffer();
    }
    rec.backward(rec.output.grad(), in_grads);
    if (numeric_checks_enabled()) {
      for (auto* g : in_grads) {
        if (g && !g->all_finite()) throw NumericError(std::string("non-finite gradient in ") + rec.op);
      }
    }
  }
  // Release intermediate buffers and closures.
  tape_.clear();
}

template class Graph<float>;
template class Graph<double>;

}  // namespace faster
