#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deflare/core/tensor.hpp"

namespace deflare {

template <class T>
class Tape;

// Handle to a value recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

// Reverse-mode differentiation record. Nodes are appended in execution order,
// so every input precedes its consumer; backward() walks them in reverse.
template <class T>
class Tape {
 public:
  // Accumulates d(loss)/d(input_i) into input_grads[i]; entries for inputs that
  // do not require a gradient are null.
  using BackwardFn =
      std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> input_grads)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{"leaf", std::move(value), {}, {}, {}, requires_grad});
    return Var<T>{this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> record(std::string_view op, Tensor<T> value, std::vector<Var<T>> inputs,
                BackwardFn backward) {
    if (!value.all_finite()) {
      throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
    }
    Node node;
    node.op = op;
    node.value = std::move(value);
    for (const auto& in : inputs) {
      if (in.tape != this) throw Error("op '" + std::string(op) + "' mixes tapes");
      node.inputs.push_back(in.id);
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  // Gradient buffer of v after backward(); zeros if nothing reached it.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() && !n.value.empty() ? Tensor<T>::zeros_like(n.value) : n.grad;
  }

  void backward(Var<T> output) {
    Node& out = nodes_.at(output.id);
    if (out.value.size() != 1) {
      throw DimensionError("backward() needs a scalar output, got " +
                           shape_str(out.value.shape()));
    }
    backward(output, Tensor<T>::full(out.value.shape(), T{1}));
  }

  void backward(Var<T> output, const Tensor<T>& seed) {
    Node& out = nodes_.at(output.id);
    if (seed.shape() != out.value.shape()) throw DimensionError("backward seed shape");
    if (!out.requires_grad) return;
    accumulate(out, seed);
    std::vector<Tensor<T>*> slots;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      slots.assign(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        Node& in = nodes_[n.inputs[k]];
        if (!in.requires_grad) continue;
        if (in.grad.empty()) in.grad = Tensor<T>::zeros_like(in.value);
        slots[k] = &in.grad;
      }
      n.backward(n.grad, slots);
    }
  }

 private:
  static void accumulate(Node& n, const Tensor<T>& g) {
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  // deque keeps node addresses stable, so backward closures may hold
  // references to input values.
  std::deque<Node> nodes_;
};

}  // namespace deflare
