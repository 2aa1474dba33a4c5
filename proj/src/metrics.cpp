#include "imac/metrics.hpp"

#include <string>

#include "imac/error.hpp"

namespace imac {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts)
    for (std::size_t c : row) n += c;
  return n;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw ContractError("confusion_matrix: " + std::to_string(truth.size()) + " labels vs " +
                        std::to_string(predicted.size()) + " predictions");
  }
  if (num_classes == 0) throw ContractError("confusion_matrix: no classes");
  ConfusionMatrix cm{num_classes, std::vector<std::vector<std::size_t>>(num_classes, std::vector<std::size_t>(num_classes))};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes)
      throw ContractError("confusion_matrix: label out of range at index " + std::to_string(i));
    ++cm.counts[t][p];
  }
  return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  ClassificationMetrics m;
  const std::size_t K = cm.classes;
  const double n = static_cast<double>(cm.total());
  if (n == 0) return m;
  double diag = 0.0, chance = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < K; ++j) row += cm.counts[k][j], col += cm.counts[j][k];
    const double tp = cm.counts[k][k];
    diag += tp;
    chance += row * col;
    const double p = col > 0 ? tp / col : 0.0;
    const double r = row > 0 ? tp / row : 0.0;
    m.precision += p;
    m.recall += r;
    m.f1 += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  m.precision /= K;
  m.recall /= K;
  m.f1 /= K;
  m.accuracy = diag / n;
  const double pe = chance / (n * n);
  // Chance agreement of 1 means both raters used a single class; agreement is
  // then perfect by construction.
  m.kappa = pe < 1.0 ? (m.accuracy - pe) / (1.0 - pe) : 1.0;
  return m;
}

ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                                             std::size_t num_classes) {
  return classification_metrics(confusion_matrix(truth, predicted, num_classes));
}

}  // namespace imac
