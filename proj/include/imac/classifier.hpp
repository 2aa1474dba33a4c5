#pragma once

#include "imac/params.hpp"

namespace imac {

// Compact EEGNet-style head: temporal filters, depthwise spatial filters,
// a separable (depthwise temporal + pointwise) stage, two average pools and
// a dense softmax layer. No dropout or batch norm.
struct ClassifierConfig {
  std::size_t samples = 128;   // T
  std::size_t channels = 64;   // n
  std::size_t num_classes = 4;
  std::size_t temporal_filters = 4;  // F1
  std::size_t temporal_kernel = 32;
  std::size_t depth_multiplier = 2;  // D
  std::size_t separable_kernel = 16;
  std::size_t pointwise_filters = 8;  // F2
  std::size_t pool1 = 4;
  std::size_t pool2 = 8;

  std::size_t feature_dim() const;
  void validate() const;
};

void init_classifier(ParamStore& params, const ClassifierConfig& cfg, Rng& rng);

struct ClassifierOutput {
  Var features;  // flattened penultimate activations, 1 x feature_dim
  Var logits;    // 1 x num_classes
  Var probs;     // softmax(logits)
};

// signal is T x n.
ClassifierOutput classify(const VarMap& vars, const ClassifierConfig& cfg, Var signal);

// Value-level convenience: class probabilities.
Tensor classify(const Tensor& signal, const ParamStore& params, const ClassifierConfig& cfg);

// -log p[label], with p clamped below at 1e-12.
Var cross_entropy(Var probs, std::size_t label);

}  // namespace imac
