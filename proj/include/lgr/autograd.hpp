#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "lgr/tensor.hpp"

namespace lgr {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  bool needs_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Per-node view handed to a backward closure.
struct BackwardContext {
  const Tensor* output = nullptr;
  std::span<const double> grad_out;
  // One entry per recorded input; null when that input needs no gradient.
  std::vector<Buffer*> grad_in;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Gradients for the requires_grad leaves of a tape, keyed by leaf.
class Gradients {
 public:
  const Tensor& operator[](const Var& v) const;
  bool contains(const Var& v) const { return grads_.count(v.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Single-owner record of differentiable operations, replayed once in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf input; differentiable iff t.requires_grad().
  Var leaf(Tensor t);
  /// Leaf that never receives a gradient.
  Var constant(Tensor t);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar. A tape may be swept once; reset() re-arms it.
  Gradients backward(const Var& loss);
  void reset();

  /// Node ids visited by the last backward(), in visiting order.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

  /// When enabled, relu records the sign pattern of its inputs (true = strictly
  /// positive). Used by the finite-difference checker to detect kink crossings.
  void set_track_relu(bool on) noexcept { track_relu_ = on; }
  const std::vector<bool>& relu_signs() const { return relu_signs_; }
  void note_relu_inputs(std::span<const double> x);

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    bool is_leaf = false;
  };

  std::deque<Node> nodes_;
  std::vector<std::size_t> visit_order_;
  std::vector<bool> relu_signs_;
  bool consumed_ = false;
  bool track_relu_ = false;
};

}  // namespace lgr
