#include "imac/params.hpp"

#include <cmath>

#include "imac/error.hpp"

namespace imac {

void ParamStore::set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("parameter '" + name + "' not found");
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("parameter '" + name + "' not found");
  return it->second;
}

void ParamStore::freeze(const std::string& name) {
  get(name);
  frozen_.insert(name);
}

void ParamStore::unfreeze(const std::string& name) { frozen_.erase(name); }

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

Var VarMap::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("parameter '" + name + "' not bound");
  return it->second;
}

VarMap bind(Graph& graph, const ParamStore& params, bool trainable) {
  VarMap out;
  for (const auto& [name, t] : params.tensors()) {
    out.insert(name, trainable && !params.frozen(name) ? graph.parameter(t) : graph.constant(t));
  }
  return out;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t({fan_in, fan_out});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = n(rng);
  return t;
}

}  // namespace imac
