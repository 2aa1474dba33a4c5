#pragma once

#include <functional>
#include <string>
#include <vector>

#include "imac/metrics.hpp"
#include "imac/shiftlab.hpp"
#include "imac/trainer.hpp"

namespace imac {

// Recordings outside / inside the held-out domain.
struct Split {
  Dataset train;
  Dataset test;
};
Split split_domain(const Dataset& ds, const std::string& held_out = kHeldOutDomain);

// Fresh model sized for the dataset, trained for the configured epochs.
TrainerState fit(const Dataset& train, const TrainConfig& tc, const StepCallback& on_step = {});

struct Evaluation {
  std::vector<int> truth;
  std::vector<Prediction> predictions;
  ClassificationMetrics metrics;
};
Evaluation evaluate(const Model& model, const Dataset& ds);

struct ShiftRow {
  std::string shift;  // "clean" for the unmodified data
  double accuracy = 0.0;
  double delta = 0.0;      // accuracy minus clean accuracy
  double integrity = 1.0;  // of penultimate features against the clean run
};
// The clean row comes first, then one row per shift in order.
std::vector<ShiftRow> evaluate_shift(const Model& model, const Dataset& ds, const std::vector<ShiftSpec>& shifts);
Dataset shift_dataset(const Dataset& ds, const ShiftSpec& spec);

inline const std::vector<double> kDefaultMaskRatios{0.05, 0.10, 0.30, 0.50, 0.70, 0.80};

struct SweepRow {
  double ratio = 0.0;
  double accuracy = 0.0;
};
// One model per ratio, all from the same seed, scored on `test`. `on_model`
// sees each trained model with its row.
using SweepCallback = std::function<void(const SweepRow&, const TrainerState&)>;
std::vector<SweepRow> mask_sweep(const Dataset& train, const Dataset& test, const TrainConfig& tc,
                                 const std::vector<double>& ratios = kDefaultMaskRatios,
                                 const SweepCallback& on_model = {});

}  // namespace imac
