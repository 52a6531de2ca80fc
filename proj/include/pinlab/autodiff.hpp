#pragma once

#include "pinlab/tensor.hpp"

#include <cassert>
#include <deque>
#include <functional>
#include <utility>

namespace pinlab {

template <typename Scalar>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

  const Tensor<Scalar>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records executed ops in order; backward() replays them in reverse exactly
// once, accumulating gradients additively into each input.
template <typename Scalar>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true) {
    check_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  // Adds the output of an op. The backward closure is kept only when at least
  // one input needs a gradient.
  Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                     Backward backward, const char* op = "op") {
    check_finite(value, op);
    bool needs = false;
    for (const auto& in : inputs) {
      assert(&in.tape() == this);
      needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  const Tensor<Scalar>& value(const Var<Scalar>& v) const { return nodes_[v.id()].value; }
  bool requires_grad(const Var<Scalar>& v) const { return nodes_[v.id()].requires_grad; }

  // Gradient of the last backward() root w.r.t. v; zeros if v was unreached.
  Tensor<Scalar> grad(const Var<Scalar>& v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? Tensor<Scalar>::zeros_like(n.value) : n.grad;
  }

  void accumulate(const Var<Scalar>& v, const Tensor<Scalar>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (g.shape() != n.value.shape())
      throw DimensionError("gradient shape " + shape_string(g.shape()) + " != value shape " +
                           shape_string(n.value.shape()));
    if (n.grad.empty())
      n.grad = g;
    else
      n.grad.array() += g.array();
  }

  void backward(const Var<Scalar>& root) {
    const Node& r = nodes_[root.id()];
    if (r.value.size() != 1) throw DimensionError("backward root must be a scalar");
    for (auto& n : nodes_) n.grad = Tensor<Scalar>();
    nodes_[root.id()].grad = Tensor<Scalar>::constant(r.value.shape(), Scalar(1));
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) {
        // Copy: the closure may accumulate into earlier nodes only, but keep
        // the upstream gradient stable regardless.
        const Tensor<Scalar> upstream = n.grad;
        n.backward(*this, upstream);
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad;
    Backward backward;
  };

  static void check_finite(const Tensor<Scalar>& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  }

  std::deque<Node> nodes_;
};

}  // namespace pinlab
