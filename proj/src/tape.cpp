#include "lensctr/tape.hpp"

#include <algorithm>
#include <stdexcept>

namespace lensctr::num {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(*this);
}

Var Tape::constant(Tensor value) {
  if (check_finite_ && !value.all_finite()) throw std::runtime_error("non-finite value entered the tape");
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Tensor& bound) {
  Tensor copy = Tensor::uninitialized(bound.shape());
  std::copy(bound.values().begin(), bound.values().end(), copy.values().begin());
  nodes_.push_back(Node{std::move(copy), {}, bound.requires_grad() ? &bound : nullptr, bound.requires_grad(), {}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (check_finite_ && !value.all_finite()) throw std::runtime_error("non-finite value produced by forward op");
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw std::logic_error("op mixes values from different tapes");
    needs = needs || nodes_[in.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

std::span<double> Tape::grad(std::uint32_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.numel(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw std::logic_error("loss belongs to another tape");
  if (nodes_[loss.id()].value.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_str(nodes_[loss.id()].value.shape()));
  }
  grad(loss.id())[0] += 1.0;
  for (std::int64_t i = loss.id(); i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.grad.empty()) continue;
    if (node.backward) node.backward(*this, static_cast<std::uint32_t>(i));
    if (node.bound) {
      auto dst = node.bound->grad();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += node.grad[k];
    }
  }
}

}  // namespace lensctr::num
