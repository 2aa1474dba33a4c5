#include "imac/classifier.hpp"

#include "imac/error.hpp"
#include "imac/ops.hpp"

namespace imac {

std::size_t ClassifierConfig::feature_dim() const { return samples / (pool1 * pool2) * pointwise_filters; }

void ClassifierConfig::validate() const {
  if (samples == 0 || channels == 0 || num_classes < 2) throw ContractError("classifier: empty configuration");
  if (samples % (pool1 * pool2) != 0) {
    throw ContractError("classifier: T=" + std::to_string(samples) + " not divisible by pooling " +
                        std::to_string(pool1 * pool2));
  }
}

void init_classifier(ParamStore& params, const ClassifierConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t maps = cfg.temporal_filters * cfg.depth_multiplier;
  for (std::size_t f = 0; f < cfg.temporal_filters; ++f) {
    const std::string p = "cls.f" + std::to_string(f) + ".";
    params.set(p + "spatial", glorot_uniform(cfg.channels, cfg.depth_multiplier, rng));
    // Start each temporal kernel near a centred impulse so early training
    // sees the raw rhythm rather than noise-filtered signal.
    Tensor k = normal_tensor({cfg.temporal_kernel, 1}, 0.1, rng);
    k[cfg.temporal_kernel / 2] += 1.0;
    params.set(p + "temporal", std::move(k));
  }
  params.set("cls.b1", Tensor({maps}, 0.0));
  Tensor sep = normal_tensor({cfg.separable_kernel, maps}, 0.1, rng);
  for (std::size_t m = 0; m < maps; ++m) sep(cfg.separable_kernel / 2, m) += 1.0;
  params.set("cls.sep_depthwise", std::move(sep));
  params.set("cls.sep_pointwise", glorot_uniform(maps, cfg.pointwise_filters, rng));
  params.set("cls.b2", Tensor({cfg.pointwise_filters}, 0.0));
  params.set("cls.dense_w", glorot_uniform(cfg.feature_dim(), cfg.num_classes, rng));
  params.set("cls.dense_b", Tensor({cfg.num_classes}, 0.0));
}

ClassifierOutput classify(const VarMap& v, const ClassifierConfig& cfg, Var signal) {
  const Shape s = signal.shape();
  if (s.size() != 2 || s[0] != cfg.samples || s[1] != cfg.channels) {
    throw ContractError("classify: signal " + shape_to_string(s) + " but classifier expects [" +
                        std::to_string(cfg.samples) + "x" + std::to_string(cfg.channels) + "]");
  }
  // Temporal and depthwise spatial filtering are both linear per filter, so
  // the spatial projection runs first on the narrower T x D map.
  std::vector<Var> maps;
  for (std::size_t f = 0; f < cfg.temporal_filters; ++f) {
    const std::string p = "cls.f" + std::to_string(f) + ".";
    maps.push_back(ops::conv_rows(ops::matmul(signal, v[p + "spatial"]), v[p + "temporal"]));
  }
  Var x = ops::relu(ops::add(ops::concat_cols(maps), v["cls.b1"]));
  x = ops::avg_pool_rows(x, cfg.pool1);
  x = ops::conv_rows(x, v["cls.sep_depthwise"]);
  x = ops::relu(ops::add(ops::matmul(x, v["cls.sep_pointwise"]), v["cls.b2"]));
  x = ops::avg_pool_rows(x, cfg.pool2);
  Var features = ops::reshape(x, {1, cfg.feature_dim()});
  Var logits = ops::add(ops::matmul(features, v["cls.dense_w"]), v["cls.dense_b"]);
  return {features, logits, ops::softmax_rows(logits)};
}

Tensor classify(const Tensor& signal, const ParamStore& params, const ClassifierConfig& cfg) {
  Graph g;
  VarMap v = bind(g, params, false);
  return classify(v, cfg, g.constant(signal)).probs.value();
}

Var cross_entropy(Var probs, std::size_t label) {
  if (label >= probs.value().size()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " outside " +
                        std::to_string(probs.value().size()) + " classes");
  }
  return ops::scale(ops::log_clamped(ops::pick(probs, label), 1e-12), -1.0);
}

}  // namespace imac
