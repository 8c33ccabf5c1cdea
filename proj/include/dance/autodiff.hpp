// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over a linear tape.
//
// A Tape owns every value produced during one forward pass. Ops append a
// node holding the output and, when any input participates in
// differentiation, a closure that propagates the output gradient to its
// inputs. backward() walks the nodes once in reverse order and then releases
// intermediate values; a tape supports exactly one backward pass.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>

#include "dance/tensor.hpp"

namespace dance {

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  /// Receives the gradient of the node's output; accumulates into inputs
  /// through grad_slot().
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input value. Only leaves with requires_grad receive gradients.
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Append an op output. The backward closure is kept only when at least
  /// one input participates. Throws NumericError on non-finite output.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                Backward backward);
  Var<T> record(std::string_view op, Tensor<T> value, std::span<const Var<T>> inputs,
                Backward backward);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return node(id).requires_grad; }

  /// Gradient buffer of a participating node, zero-initialized on first use.
  /// Returns nullptr for non-participating nodes.
  Tensor<T>* grad_slot(std::size_t id);

  /// Populate gradients for all participating leaves from a scalar loss.
  void backward(const Var<T>& loss);

  /// Gradient of a participating leaf after backward(). Leaves the loss did
  /// not depend on get zeros.
  const Tensor<T>& grad(const Var<T>& v) const;
  Tensor<T> take_grad(const Var<T>& v);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    std::string_view op;
    bool requires_grad = false;
    bool is_leaf = false;
    bool has_grad = false;
  };

  const Node& node(std::size_t id) const;
  Node& node(std::size_t id);
  void ensure_live(std::string_view what) const;
  void check_owner(const Var<T>& v, std::string_view what) const;

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dance
