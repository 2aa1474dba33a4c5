#include "imac/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "imac/error.hpp"

namespace imac {
namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  return build(g, vars).value()[0];
}

}  // namespace

std::string GradCheckResult::summary() const {
  std::ostringstream os;
  os << "max rel err " << max_rel_error << " over " << coords_checked << " coords (worst: input "
     << worst_input << " coord " << worst_coord << ", analytic " << worst_analytic << ", numeric "
     << worst_numeric << ")";
  return os.str();
}

GradCheckResult check_gradients(const LossBuilder& build, std::vector<Tensor> inputs,
                                const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.parameter(t));
    Var loss = build(g, vars);
    g.backward(loss);
    for (const Var& v : vars) analytic.push_back(g.grad(v));
  }

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  result.input_has_signal.assign(inputs.size(), false);
  const double eps = options.epsilon;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<std::size_t> coords(inputs[k].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_input && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const double orig = inputs[k][c];
      inputs[k][c] = orig + eps;
      const double up = evaluate(build, inputs);
      inputs[k][c] = orig - eps;
      const double down = evaluate(build, inputs);
      inputs[k][c] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][c];
      if (a != 0.0) result.input_has_signal[k] = true;
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      if (!std::isfinite(err)) throw NumericalError("check_gradients: non-finite gradient");
      ++result.coords_checked;
      if (err > result.max_rel_error || result.coords_checked == 1) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) {
          result.worst_input = k;
          result.worst_coord = c;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace imac
