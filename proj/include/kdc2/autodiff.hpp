#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kdc2/tensor.hpp"

namespace kdc2 {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive ops in creation order. Creation order is a topological
/// order, so backward replays nodes from the loss down to id 0.
///
/// A tape belongs to one thread. Independent tapes may run concurrently.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input. Receives a gradient on backward().
  Var leaf(Tensor value);
  /// Non-differentiable input.
  Var constant(Tensor value);

  /// Appends an op result. `fn` is dropped when no input requires a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator for node `id`, zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);

  /// Reverse pass from a scalar loss. Allowed once per tape.
  void backward(const Var& loss);

  /// Gradient of `v` after backward(). Zeros when `v` was unreachable.
  Tensor grad(const Var& v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Smallest distance of any relu input or max-pool winner from a kink seen so far.
  double kink_margin() const noexcept { return kink_margin_; }
  void note_kink(double margin) noexcept {
    if (margin < kink_margin_) kink_margin_ = margin;
  }

  /// When on, relu and max-pool fold their active pattern into a hash, so two
  /// evaluations can be checked for landing on the same linear piece.
  void trace_branches(bool on) noexcept { trace_branches_ = on; }
  bool tracing_branches() const noexcept { return trace_branches_; }
  void note_branch(std::uint64_t word) noexcept { branch_signature_ = (branch_signature_ ^ word) * 1099511628211ull; }
  std::uint64_t branch_signature() const noexcept { return branch_signature_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    const char* op = "";
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  bool backward_done_ = false;
  bool trace_branches_ = false;
  std::uint64_t branch_signature_ = 1469598103934665603ull;
};

}  // namespace kdc2
