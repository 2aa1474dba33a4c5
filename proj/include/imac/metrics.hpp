#pragma once

#include <cstddef>
#include <vector>

namespace imac {

// counts[truth][prediction].
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 std::size_t num_classes);

// Precision, recall and F1 are macro averages over classes; a class with an
// empty denominator contributes 0.
struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double kappa = 0.0;
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);
ClassificationMetrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted,
                                             std::size_t num_classes);

}  // namespace imac
