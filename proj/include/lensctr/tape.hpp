#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>

#include "lensctr/tensor.hpp"

namespace lensctr::num {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Records forward operations in evaluation order; backward() replays their
/// gradient rules in reverse. Gradients of leaves bound to a Tensor are added
/// into that tensor's gradient slot, so callers zero them between steps.
class Tape {
 public:
  /// Invoked with the tape and the id of the node being differentiated.
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to an external tensor. Its gradient flows back only when
  /// `bound.requires_grad()` is set.
  Var param(Tensor& bound);
  /// Appends an op result. `fn` is kept only when some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  void backward(Var loss);

  /// Every forward value is scanned for NaN/Inf unless disabled. The training
  /// loop turns it off and checks the loss and gradients instead.
  void set_finite_checks(bool on) noexcept { check_finite_ = on; }
  bool finite_checks() const noexcept { return check_finite_; }

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  bool has_grad(std::uint32_t id) const { return !nodes_[id].grad.empty(); }
  /// Gradient buffer of a node, allocated as zeros on first access.
  std::span<double> grad(std::uint32_t id);
  std::span<double> grad(Var v) { return grad(v.id()); }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Tensor* bound = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool check_finite_ = true;
};

}  // namespace lensctr::num
