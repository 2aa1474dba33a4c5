#include "imac/decomposition.hpp"

#include <cmath>
#include <numbers>
#include <optional>

#include "imac/error.hpp"
#include "imac/ops.hpp"

namespace imac {
namespace {

void normalize_rows(Tensor& t) {
  const std::size_t m = t.rows(), n = t.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += t(i, j) * t(i, j);
    s = std::sqrt(s);
    if (s == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) t(i, j) /= s;
  }
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

const char* component_name(Component c) {
  switch (c) {
    case Component::kTrend: return "trend";
    case Component::kSeason: return "season";
    case Component::kResidual: return "residual";
  }
  return "?";
}

const char* pool_param_name(Component c) {
  switch (c) {
    case Component::kTrend: return "pool.trend";
    case Component::kSeason: return "pool.season";
    case Component::kResidual: return "pool.residual";
  }
  return "?";
}

const Tensor& TemporalPatternPool::operator[](Component c) const {
  switch (c) {
    case Component::kTrend: return trend;
    case Component::kSeason: return season;
    case Component::kResidual: return residual;
  }
  throw ContractError("unknown component");
}

void TemporalPatternPool::validate() const {
  for (Component c : kComponents) {
    const Tensor& z = (*this)[c];
    if (z.rank() != 2 || z.shape() != trend.shape()) {
      throw DimensionError("pattern pool: components must share one D x L shape");
    }
    if (!z.all_finite()) throw NumericalError(std::string("pattern pool: non-finite ") + component_name(c));
    if (norm(z.values()) == 0.0) throw NumericalError(std::string("pattern pool: zero ") + component_name(c));
  }
}

TemporalPatternPool TemporalPatternPool::initial(std::size_t D, std::size_t L, Rng& rng) {
  TemporalPatternPool pool{Tensor({D, L}), Tensor({D, L}), Tensor({D, L})};
  // Discrete orthonormal polynomials via Gram-Schmidt on monomials.
  for (std::size_t j = 0; j < D; ++j) {
    for (std::size_t t = 0; t < L; ++t) {
      const double x = L > 1 ? -1.0 + 2.0 * t / static_cast<double>(L - 1) : 0.0;
      pool.trend(j, t) = std::pow(x, static_cast<double>(j % std::max<std::size_t>(L, 1)));
    }
    if (j < L) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t t = 0; t < L; ++t) dot += pool.trend(j, t) * pool.trend(k, t);
        for (std::size_t t = 0; t < L; ++t) pool.trend(j, t) -= dot * pool.trend(k, t);
      }
    }
    double s = 0.0;
    for (std::size_t t = 0; t < L; ++t) s += pool.trend(j, t) * pool.trend(j, t);
    s = std::sqrt(s);
    for (std::size_t t = 0; t < L; ++t) pool.trend(j, t) = s > 1e-12 ? pool.trend(j, t) / s : 1.0;
  }
  for (std::size_t j = 0; j < D; ++j) {
    const double cycles = static_cast<double>(j / 2 + 1);
    for (std::size_t t = 0; t < L; ++t) {
      const double phase = 2.0 * std::numbers::pi * cycles * static_cast<double>(t) / static_cast<double>(L);
      pool.season(j, t) = j % 2 == 0 ? std::sin(phase) : std::cos(phase);
    }
  }
  pool.residual = normal_tensor({D, L}, 1.0, rng);
  normalize_rows(pool.trend);
  normalize_rows(pool.season);
  normalize_rows(pool.residual);
  pool.validate();
  return pool;
}

TemporalPatternPool TemporalPatternPool::from(const ParamStore& params) {
  TemporalPatternPool pool{params.get(pool_param_name(Component::kTrend)),
                           params.get(pool_param_name(Component::kSeason)),
                           params.get(pool_param_name(Component::kResidual))};
  return pool;
}

void TemporalPatternPool::store(ParamStore& params) const {
  for (Component c : kComponents) params.set(pool_param_name(c), (*this)[c]);
}

PatternProjection PatternProjection::random(std::size_t n, std::size_t D, Rng& rng) {
  if (n < D) {
    throw ContractError("pattern projection: " + std::to_string(n) + " channels cannot carry " +
                        std::to_string(D) + " pattern rows at full rank");
  }
  // Gaussian matrices are full column rank with probability one; the
  // orthonormalisation below would expose a zero column anyway.
  Tensor a = normal_tensor({n, D}, 1.0, rng);
  for (std::size_t j = 0; j < D; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += a(i, j) * a(i, k);
      for (std::size_t i = 0; i < n; ++i) a(i, j) -= dot * a(i, k);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a(i, j) * a(i, j);
    s = std::sqrt(s);
    if (s < 1e-10) throw NumericalError("pattern projection: rank-deficient loading");
    for (std::size_t i = 0; i < n; ++i) a(i, j) /= s;
  }
  return PatternProjection{std::move(a)};
}

Tensor PatternProjection::apply(const Tensor& pattern) const { return reconstruct(loading, pattern); }

Selection select_pattern(std::span<const double> patch, const TemporalPatternPool& pool,
                         const PatternProjection& proj) {
  const double pn = norm(patch);
  if (pn == 0.0) throw ContractError("select_pattern: zero-norm patch, cosine similarity undefined");
  Selection best;
  bool first = true;
  for (Component c : kComponents) {
    const Tensor z = proj.apply(pool[c]);
    if (z.size() != patch.size()) {
      throw DimensionError("select_pattern: patch has " + std::to_string(patch.size()) +
                           " values, projected pattern " + std::to_string(z.size()));
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < patch.size(); ++i) dot += patch[i] * z[i];
    const double zn = norm(z.values());
    const double cos = zn > 0.0 ? dot / (pn * zn) : 0.0;
    if (first || cos > best.similarity) {
      best = {c, cos};
      first = false;
    }
  }
  return best;
}

void init_encoder(ParamStore& params, const EncoderConfig& cfg, Rng& rng) {
  if (cfg.heads == 0 || cfg.d % cfg.heads != 0) {
    throw ContractError("encoder: d=" + std::to_string(cfg.d) + " not divisible into " +
                        std::to_string(cfg.heads) + " heads");
  }
  const std::size_t in = cfg.patch_len + cfg.pos_dim;
  params.set("enc.in_w", glorot_uniform(in, cfg.d, rng));
  params.set("enc.in_b", Tensor({cfg.d}, 0.0));
  params.set("enc.chan", normal_tensor({cfg.channels, cfg.d}, 0.1, rng));
  params.set("enc.wq", glorot_uniform(cfg.d, cfg.d, rng));
  params.set("enc.wk", glorot_uniform(cfg.d, cfg.d, rng));
  params.set("enc.wv", glorot_uniform(cfg.d, cfg.d, rng));
  params.set("enc.wo", glorot_uniform(cfg.d, cfg.d, rng));
  params.set("enc.ln1_g", Tensor({cfg.d}, 1.0));
  params.set("enc.ln1_b", Tensor({cfg.d}, 0.0));
  params.set("enc.ff1_w", glorot_uniform(cfg.d, cfg.ffn_hidden, rng));
  params.set("enc.ff1_b", Tensor({cfg.ffn_hidden}, 0.0));
  params.set("enc.ff2_w", glorot_uniform(cfg.ffn_hidden, cfg.d, rng));
  params.set("enc.ff2_b", Tensor({cfg.d}, 0.0));
  params.set("enc.ln2_g", Tensor({cfg.d}, 1.0));
  params.set("enc.ln2_b", Tensor({cfg.d}, 0.0));
}

Tensor patch_tokens(const PatchSet& patches, std::size_t index) {
  const std::size_t n = patches.channels, L = patches.patch_len, P = patches.pos_embed_dim;
  if (index >= patches.count()) throw ContractError("patch_tokens: index out of range");
  const std::size_t stride = patches.patches.cols();
  const double* row = patches.patches.values().data() + index * stride;
  Tensor tokens({n, L + P});
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t t = 0; t < L; ++t) tokens(c, t) = row[t * n + c];
    for (std::size_t p = 0; p < P; ++p) tokens(c, L + p) = row[L * n + p];
  }
  return tokens;
}

Var encode_tokens(const VarMap& v, const EncoderConfig& cfg, Var tokens, const std::vector<bool>* key_mask) {
  const Shape s = tokens.shape();
  if (s.size() != 2 || s[0] != cfg.channels || s[1] != cfg.patch_len + cfg.pos_dim) {
    throw ContractError("encode_spatial: tokens " + shape_to_string(s) + " do not match the encoder (" +
                        std::to_string(cfg.channels) + " channels, width " +
                        std::to_string(cfg.patch_len + cfg.pos_dim) + ")");
  }
  Graph& g = *tokens.graph;
  Var x = ops::add(ops::matmul(tokens, v["enc.in_w"]), v["enc.in_b"]);
  if (cfg.channel_embedding) x = ops::add(x, v["enc.chan"]);

  // Pre-norm block: the residual stream keeps each channel's amplitude,
  // which the reconstruction H * Z depends on.
  Var xn = ops::layer_norm(x, v["enc.ln1_g"], v["enc.ln1_b"], 1e-5);
  Var q = ops::matmul(xn, v["enc.wq"]);
  Var k = ops::matmul(xn, v["enc.wk"]);
  Var val = ops::matmul(xn, v["enc.wv"]);
  const std::size_t dh = cfg.d / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::optional<Var> bias;
  if (key_mask) {
    if (key_mask->size() != cfg.channels) throw ContractError("encode_spatial: key mask size mismatch");
    Tensor b({cfg.channels}, 0.0);
    for (std::size_t i = 0; i < cfg.channels; ++i)
      if ((*key_mask)[i]) b[i] = -1e9;
    bias = g.constant(std::move(b));
  }
  std::vector<Var> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Var qh = ops::slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = ops::slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = ops::slice_cols(val, h * dh, (h + 1) * dh);
    Var logits = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
    if (bias) logits = ops::add(logits, *bias);
    heads.push_back(ops::matmul(ops::softmax_rows(logits), vh));
  }
  Var attn = heads.size() == 1 ? heads[0] : ops::concat_cols(heads);
  Var x1 = ops::add(x, ops::matmul(attn, v["enc.wo"]));
  Var x1n = ops::layer_norm(x1, v["enc.ln2_g"], v["enc.ln2_b"], 1e-5);
  Var ff = ops::relu(ops::add(ops::matmul(x1n, v["enc.ff1_w"]), v["enc.ff1_b"]));
  ff = ops::add(ops::matmul(ff, v["enc.ff2_w"]), v["enc.ff2_b"]);
  return ops::add(x1, ff);
}

Tensor encode_spatial(const PatchSet& patches, std::size_t index, const ParamStore& params,
                      const EncoderConfig& cfg) {
  if (patches.channels != cfg.channels) {
    throw ContractError("encode_spatial: patch set has " + std::to_string(patches.channels) +
                        " channels, encoder expects " + std::to_string(cfg.channels));
  }
  Graph g;
  VarMap v = bind(g, params, false);
  return encode_tokens(v, cfg, g.constant(patch_tokens(patches, index))).value();
}

Var reconstruct(Var features, Var pattern) {
  const Shape h = features.shape();
  const Shape z = pattern.shape();
  if (h.size() != 2 || z.size() != 2 || h[1] != z[0]) {
    throw DimensionError("reconstruct: features " + shape_to_string(h) + " and pattern " + shape_to_string(z) +
                         " do not align");
  }
  Var hz = ops::matmul(features, pattern);  // n x L
  return ops::reshape(ops::transpose(hz), {1, h[0] * z[1]});
}

Tensor reconstruct(const Tensor& features, const Tensor& pattern) {
  Graph g;
  return reconstruct(g.constant(features), g.constant(pattern)).value();
}

Var decomposition_loss(Graph& graph, std::span<const Var> reconstructions, std::span<const Tensor> targets) {
  if (reconstructions.empty()) throw ContractError("decomposition_loss: no patches");
  if (reconstructions.size() != targets.size()) {
    throw DimensionError("decomposition_loss: " + std::to_string(reconstructions.size()) +
                         " reconstructions vs " + std::to_string(targets.size()) + " targets");
  }
  std::vector<Var> terms;
  std::size_t count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Var& r = reconstructions[i];
    if (r.value().size() != targets[i].size()) {
      throw DimensionError("decomposition_loss: reconstruction " + shape_to_string(r.shape()) + " vs patch " +
                           shape_to_string(targets[i].shape()));
    }
    Var diff = ops::sub(r, graph.constant(targets[i].reshaped(r.shape())));
    terms.push_back(ops::sum(ops::mul(diff, diff)));
    count += targets[i].size();
  }
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return ops::scale(total, 1.0 / static_cast<double>(count));
}

}  // namespace imac
