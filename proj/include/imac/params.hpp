#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>

#include "imac/graph.hpp"

namespace imac {

using Rng = std::mt19937_64;

// Named parameter tensors. Ordered by name so iteration (binding, updates,
// serialisation) is deterministic.
class ParamStore {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  // Parameters excluded from optimisation (bound as constants).
  void freeze(const std::string& name);
  void unfreeze(const std::string& name);
  bool frozen(const std::string& name) const { return frozen_.count(name) != 0; }

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }
  std::size_t scalar_count() const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
  std::set<std::string> frozen_;
};

// Graph handles for a ParamStore.
class VarMap {
 public:
  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  const std::map<std::string, Var>& vars() const { return vars_; }
  void insert(const std::string& name, Var v) { vars_[name] = v; }

 private:
  std::map<std::string, Var> vars_;
};

// Frozen parameters, or all of them when `trainable` is false, become
// constants.
VarMap bind(Graph& graph, const ParamStore& params, bool trainable);

// Initialisers.
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);

}  // namespace imac
