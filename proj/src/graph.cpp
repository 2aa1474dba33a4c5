#include "imac/graph.hpp"

#include "imac/error.hpp"

namespace imac {

const Tensor& Var::value() const {
  if (!graph) throw ContractError("Var: not bound to a graph");
  return graph->value(id);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  bool needs = false;
  for (int in : inputs) {
    if (in < 0 || in >= static_cast<int>(nodes_.size())) {
      throw ContractError("Graph::record: input id out of range");
    }
    needs = needs || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : nullptr, needs});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  const Tensor& lv = nodes_.at(loss.id).value;
  if (lv.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_to_string(lv.shape()));
  }
  grads_.assign(nodes_.size(), Tensor{});
  grads_[loss.id] = Tensor(lv.shape(), 1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (!node.backward || grads_[i].empty()) continue;
    node.backward(*this, grads_[i]);
  }
}

Tensor Graph::grad(Var v) const {
  if (v.graph != this) throw ContractError("grad: variable belongs to another graph");
  if (static_cast<std::size_t>(v.id) < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
  return Tensor(nodes_.at(v.id).value.shape(), 0.0);
}

Tensor& Graph::grad_buffer(int id) {
  Tensor& g = grads_.at(id);
  if (g.empty()) g = Tensor(nodes_[id].value.shape(), 0.0);
  return g;
}

}  // namespace imac
