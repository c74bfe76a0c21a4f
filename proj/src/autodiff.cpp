#include "kdc2/autodiff.hpp"

#include "kdc2/errors.hpp"

namespace kdc2 {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("var: use of an unbound variable");
  return tape_->value(id_);
}

Tape& Var::tape() const {
  if (!tape_) throw ContractError("var: use of an unbound variable");
  return *tape_;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.op = "leaf";
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in output of shape " + to_string(value.shape()));
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw ContractError(std::string(op) + ": input recorded on a different tape");
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("backward: loss recorded on a different tape");
  const Node& root = nodes_[loss.id_];
  if (root.value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
  }
  if (backward_done_) throw ContractError("backward: already run on this tape");
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad_buffer(loss.id_)[0] += 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor::zeros(n.value.shape());
}

}  // namespace kdc2
