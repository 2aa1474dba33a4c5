#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "imac/graph.hpp"

namespace imac {

// Builds a scalar loss from leaves bound in a fresh graph, in input order.
using LossBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Denominator floor for the relative error, so gradients that are zero up to
  // round-off are compared absolutely.
  double floor = 1e-6;
  // Coordinates probed per input; 0 probes all of them.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  // Input index and flat coordinate of the worst mismatch.
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // Per input: whether any probed coordinate had a nonzero analytic gradient.
  std::vector<bool> input_has_signal;

  std::string summary() const;
};

// Compares backward() against central finite differences. Errors are
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckResult check_gradients(const LossBuilder& build, std::vector<Tensor> inputs,
                                const GradCheckOptions& options = {});

}  // namespace imac
