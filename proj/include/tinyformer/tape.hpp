#pragma once

#include <cassert>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

#include "tinyformer/tensor.hpp"

namespace tinyformer {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

/// Append-only record of a forward computation. Node order is topological by
/// construction; backward walks it in strict reverse append order.
///
/// Leaves created with leaf() alias an external tensor: their value is read in
/// place and their gradient accumulates into that tensor's grad buffer, so
/// repeated backward passes add up until the caller zeroes it.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    Node node;
    node.own = std::move(value);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  /// Records `source` as a differentiable leaf. `source` must outlive the tape.
  Var<T> leaf(Tensor<T>& source) {
    Node node;
    node.external = &source;
    node.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  /// Records an op output. The backward rule is dropped when no input needs a
  /// gradient or when gradients are disabled.
  Var<T> record(Tensor<T> value, std::initializer_list<std::size_t> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const std::size_t>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  Var<T> record(Tensor<T> value, std::span<const std::size_t> inputs, BackwardFn fn) {
    Node node;
    node.own = std::move(value);
    bool needs = false;
    for (std::size_t in : inputs) {
      assert(in < nodes_.size() && "tape inputs must precede their consumer");
      needs = needs || nodes_[in].requires_grad;
    }
    node.requires_grad = grad_enabled_ && needs;
    if (node.requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& node = nodes_.at(id);
    return node.external ? *node.external : node.own;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient flowing into node `id` during backward.
  std::span<const T> grad(std::size_t id) const { return nodes_.at(id).grad; }

  /// Accumulation target for node `id`; empty when the node needs no gradient.
  std::span<T> grad_sink(std::size_t id) {
    Node& node = nodes_.at(id);
    if (!node.requires_grad) return {};
    if (node.external) return node.external->ensure_grad();
    if (node.grad.empty()) node.grad.assign(value(id).size(), T(0));
    return node.grad;
  }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (value(loss.id).shape() != Shape{1, 1, 1, 1}) {
      throw std::invalid_argument("backward: loss must have shape (1, 1, 1, 1), got " +
                                  value(loss.id).shape().str());
    }
    for (Node& node : nodes_) {
      if (!node.external) node.grad.clear();
    }
    auto seed = grad_sink(loss.id);
    if (seed.empty()) return;
    seed[0] += T(1);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.backward || node.grad.empty()) continue;
      node.backward(*this, id);
    }
  }

  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own;
    Tensor<T>* external = nullptr;
    AlignedVector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace tinyformer
