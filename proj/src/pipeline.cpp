#include "imac/pipeline.hpp"

#include "imac/error.hpp"

namespace imac {

Split split_domain(const Dataset& ds, const std::string& held_out) {
  Split s{select_domain(ds, held_out, false), select_domain(ds, held_out, true)};
  if (s.train.recordings.empty()) throw ConfigError("no training recordings outside domain '" + held_out + "'");
  if (s.test.recordings.empty()) throw ConfigError("no recordings in domain '" + held_out + "'");
  return s;
}

TrainerState fit(const Dataset& train, const TrainConfig& tc, const StepCallback& on_step) {
  TrainerState st = make_trainer(ModelConfig::for_dataset(train, tc.variant), tc);
  const std::vector<Sample> data = prepare_samples(train, st.model.config);
  imac::train(st, data, std::nullopt, on_step);
  return st;
}

Evaluation evaluate(const Model& model, const Dataset& ds) {
  Evaluation ev;
  ev.predictions = predict(model, prepare_samples(ds, model.config));
  std::vector<int> pred;
  for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
    ev.truth.push_back(ds.recordings[i].label);
    pred.push_back(ev.predictions[i].label);
  }
  ev.metrics = classification_metrics(ev.truth, pred, model.config.num_classes);
  return ev;
}

Dataset shift_dataset(const Dataset& ds, const ShiftSpec& spec) {
  spec.validate(ds.sample_rate_hz);
  Dataset out = ds;
  for (std::size_t i = 0; i < out.recordings.size(); ++i) {
    // Every recording draws its own noise and channel subset.
    ShiftSpec per = spec;
    per.seed = spec.seed * 1000003ULL + i;
    out.recordings[i] = apply_shift(ds.recordings[i], per);
  }
  return out;
}

std::vector<ShiftRow> evaluate_shift(const Model& model, const Dataset& ds, const std::vector<ShiftSpec>& shifts) {
  const Evaluation clean = evaluate(model, ds);
  std::vector<std::vector<double>> clean_features;
  for (const auto& p : clean.predictions) clean_features.push_back(p.features);
  std::vector<ShiftRow> rows{{"clean", clean.metrics.accuracy, 0.0, 1.0}};
  for (const ShiftSpec& spec : shifts) {
    const Evaluation ev = evaluate(model, shift_dataset(ds, spec));
    std::vector<std::vector<double>> features;
    for (const auto& p : ev.predictions) features.push_back(p.features);
    rows.push_back({spec.label(), ev.metrics.accuracy, ev.metrics.accuracy - clean.metrics.accuracy,
                    integrity_score(clean_features, features).score});
  }
  return rows;
}

std::vector<SweepRow> mask_sweep(const Dataset& train, const Dataset& test, const TrainConfig& tc,
                                 const std::vector<double>& ratios, const SweepCallback& on_model) {
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("mask ratio " + std::to_string(r) + " outside [0, 1]");
    TrainConfig c = tc;
    c.mask_ratio = r;
    const TrainerState st = fit(train, c);
    rows.push_back({r, evaluate(st.model, test).metrics.accuracy});
    if (on_model) on_model(rows.back(), st);
  }
  return rows;
}

}  // namespace imac
