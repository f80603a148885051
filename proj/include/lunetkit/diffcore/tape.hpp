#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "lunetkit/diffcore/tensor.hpp"

namespace lunetkit::diffcore {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape.
template <std::floating_point T>
class Var {
 public:
  Var() = default;

  std::size_t id() const noexcept { return id_; }
  Tape<T>* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed operations. Each recorded op carries the ids
/// of its inputs (all recorded earlier) and a closure that pushes the
/// node's adjoint into its inputs' adjoints.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf referencing an external tensor. When t.requires_grad(), backward()
  /// accumulates into t.grad(). t must outlive the tape.
  Var<T> leaf(Tensor<T>& t) {
    Node& n = nodes_.emplace_back();
    n.external = &t;
    if (t.requires_grad()) {
      n.sink = &t;
      n.needs_grad = true;
    }
    return {this, nodes_.size() - 1};
  }

  /// Read-only reference to an external tensor; no gradient is tracked.
  Var<T> input(const Tensor<T>& t) {
    Node& n = nodes_.emplace_back();
    n.external = &t;
    return {this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> t) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(t);
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    for (const Var<T>& in : inputs) {
      check_owned(in);
      n.inputs.push_back(in.id());
      n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    return n.external ? *n.external : n.owned;
  }
  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id()].needs_grad;
  }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  /// Adjoint of a node after backward(); empty if nothing reached it.
  std::span<const T> grad(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id()].adjoint;
  }
  std::span<const T> grad(std::size_t id) const { return nodes_.at(id).adjoint; }

  /// Zero-initialised adjoint buffer for use inside backward closures.
  std::span<T> accumulator(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.adjoint.empty()) n.adjoint.assign(value(id).size(), T{0});
    return n.adjoint;
  }
  std::span<T> accumulator(Var<T> v) { return accumulator(v.id()); }

  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse-order adjoint accumulation from a scalar loss. Adjoints from a
  /// previous call are discarded first, so calling twice after zeroing leaf
  /// gradients yields identical results.
  void backward(Var<T> loss) {
    check_owned(loss);
    require(value(loss).size() == 1, ErrorCode::NotScalarLoss,
            "backward() needs a scalar loss, got shape " + shape_string(value(loss).shape()));
    for (Node& n : nodes_) n.adjoint.clear();
    accumulator(loss.id())[0] = T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.adjoint.empty() || !n.needs_grad) continue;
      if (n.backward) n.backward(*this, i);
    }
    for (Node& n : nodes_) {
      if (n.sink == nullptr || n.adjoint.empty()) continue;
      auto g = n.sink->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.adjoint[k];
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T>* sink = nullptr;
    std::vector<std::size_t> inputs;
    bool needs_grad = false;
    Buffer<T> adjoint;
    BackwardFn backward;
  };

  void check_owned(const Var<T>& v) const {
    require(v.tape() == this && v.id() < nodes_.size(), ErrorCode::InvalidArgument,
            "variable does not belong to this tape");
  }

  std::deque<Node> nodes_;
};

}  // namespace lunetkit::diffcore
