#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rtify/diff/array.hpp"

namespace rtify::diff {

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const BasicArray<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Everything a backward rule may read or write while the tape is replayed.
template <class T>
struct BackwardContext {
  const BasicArray<T>& upstream;
  const BasicArray<T>& output;
  std::span<const BasicArray<T>* const> inputs;
  /// Gradient accumulators, one per input; null when the input needs no gradient.
  std::span<BasicArray<T>* const> grads;
};

template <class T>
using BackwardRule = std::function<void(const BackwardContext<T>&)>;

/// Gradients of a scalar loss keyed by trainable leaf.
template <class T>
class Gradients {
 public:
  const BasicArray<T>& operator[](const Var<T>& leaf) const {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) throw ShapeError("gradients: variable is not a trainable leaf");
    return it->second;
  }
  bool contains(const Var<T>& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<std::size_t, BasicArray<T>> grads_;
};

/// Linear record of primitive operations for one forward pass. Nodes are
/// appended in evaluation order, so operands always precede their results.
/// A tape is used for a single backward sweep and then discarded.
template <class T>
class Tape {
 public:
  using ArrayT = BasicArray<T>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> parameter(ArrayT value, std::string name = {}) {
    check_finite(value, name.empty() ? "parameter" : name);
    Node n;
    n.value = std::move(value);
    n.op = "parameter";
    n.name = std::move(name);
    n.trainable = true;
    n.needs_grad = true;
    return push(std::move(n));
  }

  Var<T> constant(ArrayT value) {
    check_finite(value, "constant");
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    return push(std::move(n));
  }

  /// Appends a primitive. The value must already be computed; `rule` is invoked
  /// during the backward sweep only if some input needs a gradient.
  Var<T> record(std::string_view op, ArrayT value, std::vector<Var<T>> inputs, BackwardRule<T> rule) {
    check_finite(value, op);
    Node n;
    n.value = std::move(value);
    n.op = std::string(op);
    n.rule = std::move(rule);
    n.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ShapeError(std::string(op) + ": operand recorded on a different tape");
      n.inputs.push_back(in.id());
      n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
    }
    return push(std::move(n));
  }

  const ArrayT& value(const Var<T>& v) const { return nodes_.at(v.id()).value; }
  std::size_t size() const { return nodes_.size(); }
  bool needs_grad(const Var<T>& v) const { return nodes_.at(v.id()).needs_grad; }

  /// Reverse sweep from a single-element loss.
  Gradients<T> backward(const Var<T>& loss) {
    if (nodes_.empty()) throw ShapeError("backward: empty tape");
    if (loss.value().size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));
    }
    for (auto& n : nodes_) n.grad = ArrayT();
    auto& root = nodes_[loss.id()];
    root.grad = ArrayT(root.value.shape(), T{1});

    std::vector<const ArrayT*> in_values;
    std::vector<ArrayT*> in_grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.size() == 0 || !n.rule || !n.needs_grad) continue;
      in_values.clear();
      in_grads.clear();
      for (auto id : n.inputs) {
        auto& in = nodes_[id];
        in_values.push_back(&in.value);
        if (in.needs_grad) {
          if (in.grad.size() != in.value.size()) in.grad = ArrayT(in.value.shape(), T{0});
          in_grads.push_back(&in.grad);
        } else {
          in_grads.push_back(nullptr);
        }
      }
      n.rule(BackwardContext<T>{n.grad, n.value, in_values, in_grads});
    }

    Gradients<T> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      if (!n.trainable) continue;
      if (n.grad.size() == n.value.size()) {
        out.grads_.emplace(i, std::move(n.grad));
      } else {
        out.grads_.emplace(i, ArrayT(n.value.shape(), T{0}));
      }
    }
    return out;
  }

 private:
  struct Node {
    ArrayT value;
    ArrayT grad;
    std::vector<std::size_t> inputs;
    BackwardRule<T> rule;
    std::string op;
    std::string name;
    bool trainable = false;
    bool needs_grad = false;
  };

  static void check_finite(const ArrayT& value, std::string_view what) {
    if (!value.all_finite()) throw NumericError(std::string(what) + ": non-finite result");
  }

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace rtify::diff
