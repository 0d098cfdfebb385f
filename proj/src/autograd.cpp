#include "lgr/autograd.hpp"

#include "lgr/errors.hpp"

namespace lgr {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::needs_grad() const { return tape_ && tape_->needs_grad(id_); }

const Tensor& Gradients::operator[](const Var& v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) throw ContractError("no gradient recorded for this variable");
  return it->second;
}

Var Tape::leaf(Tensor t) {
  Node n;
  n.needs_grad = t.requires_grad();
  n.value = std::move(t);
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  t.set_requires_grad(false);
  return leaf(std::move(t));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ContractError("operands recorded on different tapes");
    n.inputs.push_back(in.id());
    n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::note_relu_inputs(std::span<const double> x) {
  if (!track_relu_) return;
  for (double v : x) relu_signs_.push_back(v > 0.0);
}

Gradients Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("loss was recorded on a different tape");
  if (consumed_) throw ContractError("backward() called twice on the same tape without reset()");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw ArgumentError("backward() needs a scalar loss, got " + shape_str(lv.shape()));
  consumed_ = true;
  visit_order_.clear();

  std::vector<Buffer> grads(nodes_.size());
  Gradients result;
  if (nodes_[loss.id()].needs_grad) grads[loss.id()].assign(1, 1.0);

  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || grads[id].empty()) continue;
    visit_order_.push_back(id);
    if (node.is_leaf) continue;
    BackwardContext ctx;
    ctx.output = &node.value;
    ctx.grad_out = grads[id];
    ctx.grad_in.reserve(node.inputs.size());
    for (std::size_t in : node.inputs) {
      if (nodes_[in].needs_grad) {
        if (grads[in].empty()) grads[in].assign(nodes_[in].value.size(), 0.0);
        ctx.grad_in.push_back(&grads[in]);
      } else {
        ctx.grad_in.push_back(nullptr);
      }
    }
    node.backward(ctx);
    // Interior gradients are not needed once propagated.
    Buffer().swap(grads[id]);
  }

  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.is_leaf || !node.needs_grad) continue;
    Buffer g = grads[id].empty() ? Buffer(node.value.size(), 0.0) : std::move(grads[id]);
    result.grads_.emplace(id, Tensor::from_buffer(node.value.shape(), std::move(g)));
  }
  return result;
}

void Tape::reset() {
  nodes_.clear();
  visit_order_.clear();
  relu_signs_.clear();
  consumed_ = false;
}

}  // namespace lgr
