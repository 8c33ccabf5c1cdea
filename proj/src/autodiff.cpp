// SPDX-License-Identifier: Apache-2.0
#include "dance/autodiff.hpp"

#include <string>

#include "dance/error.hpp"
#include "dance/kernels.hpp"

namespace dance {
namespace {

template <class T>
bool finite(const Tensor<T>& t) {
  return kernels::all_finite(t.data(), t.size());
}

}  // namespace

template <class T>
const typename Tape<T>::Node& Tape<T>::node(std::size_t id) const {
  if (id >= nodes_.size()) throw TapeError("tape: unknown node " + std::to_string(id));
  return nodes_[id];
}

template <class T>
typename Tape<T>::Node& Tape<T>::node(std::size_t id) {
  if (id >= nodes_.size()) throw TapeError("tape: unknown node " + std::to_string(id));
  return nodes_[id];
}

template <class T>
void Tape<T>::ensure_live(std::string_view what) const {
  if (consumed_)
    throw TapeError(std::string(what) + ": tape already consumed by backward(); start a new tape");
}

template <class T>
void Tape<T>::check_owner(const Var<T>& v, std::string_view what) const {
  if (!v.valid() || &v.tape() != this)
    throw TapeError(std::string(what) + ": variable belongs to a different tape");
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  ensure_live("leaf");
  if (!finite(value)) throw NumericError("leaf: non-finite input value");
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  n.op = "leaf";
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       Backward backward) {
  return record(op, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <class T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::span<const Var<T>> inputs,
                       Backward backward) {
  ensure_live(op);
  bool participates = false;
  for (const Var<T>& in : inputs) {
    check_owner(in, op);
    participates = participates || node(in.id()).requires_grad;
  }
  if (!finite(value)) throw NumericError(std::string(op) + ": non-finite output");
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = participates;
  n.op = op;
  if (participates) n.backward = std::move(backward);
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  return node(id).value;
}

template <class T>
Tensor<T>* Tape<T>::grad_slot(std::size_t id) {
  Node& n = node(id);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

template <class T>
void Tape<T>::backward(const Var<T>& loss) {
  ensure_live("backward");
  check_owner(loss, "backward");
  Node& root = node(loss.id());
  if (root.value.size() != 1)
    throw TapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
  consumed_ = true;
  if (root.requires_grad) {
    grad_slot(loss.id())->fill(T{1});
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    n.backward = nullptr;
    if (n.is_leaf) {
      if (n.requires_grad && !n.has_grad) grad_slot(id);
      continue;
    }
    n.grad = Tensor<T>();
    n.has_grad = false;
    if (id != loss.id()) n.value = Tensor<T>();
  }
}

template <class T>
const Tensor<T>& Tape<T>::grad(const Var<T>& v) const {
  check_owner(v, "grad");
  const Node& n = node(v.id());
  if (!n.is_leaf || !n.requires_grad)
    throw TapeError("grad: variable does not participate in differentiation");
  if (!consumed_) throw TapeError("grad: backward() has not run");
  return n.grad;
}

template <class T>
Tensor<T> Tape<T>::take_grad(const Var<T>& v) {
  grad(v);
  return std::move(node(v.id()).grad);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace dance
