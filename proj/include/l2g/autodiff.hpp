#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "l2g/tensor.hpp"

namespace l2g {

/// Trainable state: a value and its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

class Graph;

/// Handle to a node recorded on a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Each recorded operation stores its output and a rule that
/// maps the output gradient onto gradients of its inputs.
class Graph {
 public:
  /// Receives the gradient flowing into the node and accumulates into inputs.
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a Parameter; the same Parameter always maps to one node.
  Var parameter(Parameter& p);
  /// Free leaf whose gradient can be read back with grad().
  Var input(Tensor value);

  /// Records an operation. `backward` may be empty, in which case the node is
  /// marked as lacking a rule and backward() fails if gradient reaches it.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
             BackwardFn backward);
  Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs,
             BackwardFn backward);

  /// Propagates d(loss)/d(node) for every node. When `flush` is set, leaf
  /// gradients are added into their Parameters.
  void backward(Var loss, bool flush = true);
  /// Adds the leaf gradients of the last backward() into the bound Parameters.
  void flush_gradients();

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  /// Gradient of the last backward pass (zeros if none reached the node).
  Tensor grad(Var v) const;

  /// Accumulation target for backward rules; zero-initialised on first use.
  Tensor& grad_buffer(Var v);
  void accumulate(Var v, const Tensor& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    bool missing_rule = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, std::size_t> param_nodes_;
};

}  // namespace l2g
