#include "l2g/autodiff.hpp"

#include <algorithm>

namespace l2g {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    std::fill(grad.data().begin(), grad.data().end(), 0.0);
  }
}

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("constant: non-finite value");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  if (!p.value.all_finite()) throw NumericalError("parameter '" + p.name + "' is non-finite");
  Node n;
  n.op = "parameter:" + p.name;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Graph::input(Tensor value) {
  if (!value.all_finite()) throw NumericalError("input: non-finite value");
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Graph::record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                  BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Graph::record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
                  BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError(std::string(op) + ": non-finite output");
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.graph() != this) throw std::logic_error(n.op + ": input from another graph");
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) {
    if (backward) {
      n.backward = std::move(backward);
    } else {
      n.missing_rule = true;
    }
  }
  return push(std::move(n));
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id()].requires_grad) return;
  Tensor& buf = grad_buffer(v);
  require_same_shape(buf, g, "accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Graph::backward(Var loss, bool flush) {
  if (&loss.graph() != this) throw std::logic_error("backward: loss from another graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.missing_rule) {
      throw std::logic_error("backward: operation '" + n.op + "' has no backward rule");
    }
    // Rules only write into buffers of earlier nodes, so n.grad stays put.
    if (n.backward) n.backward(*this, n.grad);
  }
  if (flush) flush_gradients();
}

void Graph::flush_gradients() {
  for (Node& n : nodes_) {
    if (!n.param || !n.has_grad) continue;
    Parameter& p = *n.param;
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
  }
}

}  // namespace l2g
