#include "imac/imputer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "imac/error.hpp"
#include "imac/ops.hpp"

namespace imac {
namespace {

Var row_indicator(Graph& g, const std::vector<bool>& rows, std::size_t cols) {
  Tensor m({rows.size(), cols}, 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i])
      for (std::size_t j = 0; j < cols; ++j) m(i, j) = 1.0;
  return g.constant(std::move(m));
}

Var zero_scalar(Graph& g) { return g.constant(Tensor::scalar(0.0)); }

}  // namespace

Tensor MaskSpec::matrix(std::size_t cols) const {
  Tensor m({rows, cols}, 1.0);
  for (std::size_t r : masked_rows)
    for (std::size_t j = 0; j < cols; ++j) m(r, j) = 0.0;
  return m;
}

MaskSpec make_mask(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ContractError("make_mask: ratio " + std::to_string(ratio) + " outside [0,1]");
  }
  const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  MaskSpec spec = mask_from_rows(n, std::move(idx));
  spec.ratio = ratio;
  spec.seed = seed;
  return spec;
}

MaskSpec mask_from_rows(std::size_t n, std::vector<std::size_t> rows) {
  MaskSpec spec;
  spec.rows = n;
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  spec.row_masked.assign(n, false);
  for (std::size_t r : rows) {
    if (r >= n) throw ContractError("mask_from_rows: row " + std::to_string(r) + " out of range");
    spec.row_masked[r] = true;
  }
  spec.ratio = n ? static_cast<double>(rows.size()) / static_cast<double>(n) : 0.0;
  spec.masked_rows = std::move(rows);
  return spec;
}

std::string imputer_block_prefix(std::size_t block) { return "imp.b" + std::to_string(block) + "."; }

void init_imputer(ParamStore& params, const ImputerConfig& cfg, const std::vector<GridCell>& cells, Rng& rng) {
  if (cfg.blocks == 0) throw ContractError("imputer: needs at least one block");
  if (cells.size() != cfg.channels) throw ContractError("imputer: one grid cell per channel required");
  params.set("imp.token", normal_tensor({cfg.d}, 0.02, rng));
  Tensor pos({cfg.channels, cfg.d});
  const std::size_t half = cfg.d / 2;
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    const auto er = sinusoidal_embedding(static_cast<std::size_t>(cells[c].row), half);
    const auto ec = sinusoidal_embedding(static_cast<std::size_t>(cells[c].col), cfg.d - half);
    for (std::size_t j = 0; j < half; ++j) pos(c, j) = cfg.row_pos_scale * er[j];
    for (std::size_t j = 0; j < cfg.d - half; ++j) pos(c, half + j) = cfg.row_pos_scale * ec[j];
  }
  params.set("imp.row_pos", std::move(pos));
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = imputer_block_prefix(b);
    params.set(p + "wq", glorot_uniform(cfg.d, cfg.d_k, rng));
    params.set(p + "wk", glorot_uniform(cfg.d, cfg.d_k, rng));
    params.set(p + "wv", glorot_uniform(cfg.d, cfg.d_k, rng));
    params.set(p + "wo", glorot_uniform(cfg.d_k, cfg.d, rng));
    params.set(p + "ln1_g", Tensor({cfg.d}, 1.0));
    params.set(p + "ln1_b", Tensor({cfg.d}, 0.0));
    params.set(p + "ff1_w", glorot_uniform(cfg.d, cfg.ffn_hidden, rng));
    params.set(p + "ff1_b", Tensor({cfg.ffn_hidden}, 0.0));
    params.set(p + "ff2_w", glorot_uniform(cfg.ffn_hidden, cfg.d, rng));
    params.set(p + "ff2_b", Tensor({cfg.d}, 0.0));
    params.set(p + "ln2_g", Tensor({cfg.d}, 1.0));
    params.set(p + "ln2_b", Tensor({cfg.d}, 0.0));
  }
}

Var apply_mask(Var features, const MaskSpec& spec, Var token) {
  const Shape s = features.shape();
  if (s.size() != 2 || s[0] != spec.rows) {
    throw DimensionError("apply_mask: features " + shape_to_string(s) + " vs mask over " +
                         std::to_string(spec.rows) + " rows");
  }
  if (token.value().size() != s[1]) {
    throw DimensionError("apply_mask: token " + shape_to_string(token.shape()) + " vs features " +
                         shape_to_string(s));
  }
  if (spec.masked_rows.empty()) return features;
  Graph& g = *features.graph;
  Var tokens = ops::add(g.constant(Tensor(s, 0.0)), ops::reshape(token, {s[1]}));
  return ops::select_rows(spec.row_masked, features, tokens);
}

Var context_attention(Var queries, Var context, const VarMap& v, const std::string& p, std::optional<Var> key_pos,
                      Tensor* attention, const std::vector<bool>* excluded_keys) {
  const Shape qs = queries.shape();
  const Shape cs = context.shape();
  if (qs.size() != 2 || cs.size() != 2 || qs[1] != cs[1]) {
    throw DimensionError("context_attention: queries " + shape_to_string(qs) + " vs context " +
                         shape_to_string(cs));
  }
  Var wq = v[p + "wq"];
  const double dk = static_cast<double>(wq.shape()[1]);
  Var keys_in = key_pos ? ops::add(context, *key_pos) : context;
  Var q = ops::matmul(ops::layer_norm(queries, v[p + "ln1_g"], v[p + "ln1_b"], 1e-5), wq);
  Var k = ops::matmul(keys_in, v[p + "wk"]);
  Var val = ops::matmul(context, v[p + "wv"]);
  Var logits = ops::scale(ops::matmul(q, ops::transpose(k)), 1.0 / std::sqrt(dk));
  if (excluded_keys) {
    if (excluded_keys->size() != cs[0]) throw DimensionError("context_attention: key mask size mismatch");
    Tensor bias({cs[0]}, 0.0);
    for (std::size_t j = 0; j < cs[0]; ++j)
      if ((*excluded_keys)[j]) bias[j] = -1e9;
    logits = ops::add(logits, queries.graph->constant(std::move(bias)));
  }
  Var weights = ops::softmax_rows(logits);
  if (attention) *attention = weights.value();
  Var x = ops::add(queries, ops::matmul(ops::matmul(weights, val), v[p + "wo"]));
  Var xn = ops::layer_norm(x, v[p + "ln2_g"], v[p + "ln2_b"], 1e-5);
  Var ff = ops::relu(ops::add(ops::matmul(xn, v[p + "ff1_w"]), v[p + "ff1_b"]));
  ff = ops::add(ops::matmul(ff, v[p + "ff2_w"]), v[p + "ff2_b"]);
  return ops::add(x, ff);
}

Var impute(Var masked_features, Var features, const VarMap& v, const ImputerConfig& cfg, const MaskSpec& spec) {
  if (cfg.blocks == 0) throw ContractError("impute: needs at least one block");
  if (masked_features.shape() != features.shape()) {
    throw DimensionError("impute: masked " + shape_to_string(masked_features.shape()) + " vs original " +
                         shape_to_string(features.shape()));
  }
  if (features.shape()[0] != spec.rows) throw DimensionError("impute: mask rows do not match features");
  if (spec.masked_rows.empty()) return features;
  Var pos = v["imp.row_pos"];
  Var q = ops::add(masked_features, pos);
  // Masked rows never serve as keys, otherwise a query could read back the
  // very row it is meant to impute. With every row masked nothing remains to
  // exclude against, so all rows stay visible.
  const std::vector<bool>* excluded = spec.count() < spec.rows ? &spec.row_masked : nullptr;
  for (std::size_t b = 0; b < cfg.blocks; ++b)
    q = context_attention(q, features, v, imputer_block_prefix(b), pos, nullptr, excluded);
  return ops::select_rows(spec.row_masked, features, q);
}

ImputationResult impute(const Tensor& features, const ParamStore& params, const ImputerConfig& cfg,
                        const MaskSpec& spec) {
  Graph g;
  VarMap v = bind(g, params, false);
  Var h = g.constant(features);
  Var out = impute(apply_mask(h, spec, v["imp.token"]), h, v, cfg, spec);
  return {out.value(), spec.masked_rows};
}

Var fidelity_loss(Var imputed, Var features, const MaskSpec& spec) {
  if (imputed.shape() != features.shape()) {
    throw DimensionError("fidelity_loss: " + shape_to_string(imputed.shape()) + " vs " +
                         shape_to_string(features.shape()));
  }
  Graph& g = *imputed.graph;
  if (spec.masked_rows.empty()) return zero_scalar(g);
  Var diff = ops::sub(imputed, features);
  Var sq = ops::mul(ops::mul(diff, diff), row_indicator(g, spec.row_masked, imputed.shape()[1]));
  return ops::scale(ops::sum(sq), 1.0 / static_cast<double>(spec.masked_rows.size()));
}

Var consistency_loss(Var a, Var b, const MaskSpec& spec_a, const MaskSpec& spec_b) {
  if (a.shape() != b.shape() || spec_a.rows != spec_b.rows || a.shape()[0] != spec_a.rows) {
    throw ContractError("consistency_loss: views " + shape_to_string(a.shape()) + " and " +
                        shape_to_string(b.shape()) + " are not comparable");
  }
  Graph& g = *a.graph;
  std::vector<bool> uni(spec_a.rows);
  std::size_t count = 0;
  for (std::size_t i = 0; i < uni.size(); ++i) {
    uni[i] = spec_a.row_masked[i] || spec_b.row_masked[i];
    count += uni[i];
  }
  if (count == 0) return zero_scalar(g);
  Var diff = ops::sub(a, b);
  Var sq = ops::mul(ops::mul(diff, diff), row_indicator(g, uni, a.shape()[1]));
  return ops::scale(ops::sum(sq), 1.0 / static_cast<double>(count));
}

Var total_loss(Var fidelity, Var consistency, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("total_loss: lambda must be nonnegative");
  return ops::add(fidelity, ops::scale(consistency, lambda));
}

}  // namespace imac
