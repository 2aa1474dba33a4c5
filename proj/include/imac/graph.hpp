#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "imac/tensor.hpp"

namespace imac {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode differentiation tape. Nodes are appended in execution order,
// which is already a topological order, so backward is a single reverse sweep.
// A graph is built fresh for every forward pass and is not thread-safe.
class Graph {
 public:
  // Receives the gradient of the loss w.r.t. this node's output and
  // accumulates into its inputs through grad_buffer().
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  // For op implementations: appends a node whose inputs are `inputs`.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  // Populates gradients for every node reachable from `loss`. The loss must be
  // a single-element tensor.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Gradient of the last backward() w.r.t. v; zeros if v did not influence
  // the loss.
  Tensor grad(Var v) const;

  // Accumulator for node `id`, allocated as zeros on first use.
  Tensor& grad_buffer(int id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable references while ops append
  std::vector<Tensor> grads_;
};

}  // namespace imac
