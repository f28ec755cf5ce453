#pragma once

// Reverse-mode gradient tape. Every op appends one node; backward walks the
// nodes in strict reverse recording order and accumulates into leaves.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lccal/tensor.hpp"

namespace lccal::ad {

template <typename T>
class Tape;

/// Handle to one node of a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of the leaves that require them, keyed by node id.
template <typename T>
class Gradients {
 public:
  const Tensor<T>& operator[](const Var<T>& v) const { return at(v.id()); }

  const Tensor<T>& at(std::size_t id) const {
    auto it = grads_.find(id);
    if (it == grads_.end()) throw InvalidArgument("no gradient recorded for node " + std::to_string(id));
    return it->second;
  }

  bool contains(std::size_t id) const { return grads_.count(id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<std::size_t, Tensor<T>> grads_;
};

template <typename T>
class Tape {
 public:
  /// Receives the gradient of the node's output and scatters it into inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, true, nullptr); }
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, true, nullptr); }

  /// Appends an op output. Inputs are only used to decide whether the node
  /// needs a backward rule at all.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward, const char* op) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || requires_grad(in.id());
    return record_if(std::move(value), needs, std::move(backward), op);
  }

  Var<T> record_if(Tensor<T> value, bool needs_grad, BackwardFn backward, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string(op) + " produced non-finite values");
    return push(std::move(value), needs_grad, false, needs_grad ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator of a node, zero-allocated on first use.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  Gradients<T> backward(const Var<T>& loss) {
    if (&loss.tape() != this) throw InvalidArgument("loss does not belong to this tape");
    if (value(loss.id()).size() != 1)
      throw InvalidArgument("backward requires a scalar loss, got shape " + shape_str(value(loss.id()).shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    Gradients<T> out;
    if (requires_grad(loss.id())) {
      grad(loss.id()).fill(T(1));
      for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        // The rule may grow other nodes' grads, never this one.
        const Tensor<T> g = std::move(n.grad);
        n.grad = Tensor<T>();
        n.backward(*this, g);
      }
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (!n.leaf || !n.requires_grad) continue;
      out.grads_.emplace(i, n.grad.empty() ? Tensor<T>(n.value.shape()) : std::move(n.grad));
      n.grad = Tensor<T>();
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool leaf = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, bool leaf, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, leaf, std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // deque: references to node values stay valid as ops are recorded
};

}  // namespace lccal::ad
