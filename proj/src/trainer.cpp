#include "imac/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <nlohmann/json.hpp>
#include <sstream>

#include "imac/error.hpp"
#include "imac/gradcheck.hpp"
#include "imac/ops.hpp"

namespace imac {
namespace {

using json = nlohmann::json;
constexpr char kCheckpointMagic[8] = {'I', 'M', 'A', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr const char* kLoadingName = "proj.loading";

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return splitmix(splitmix(splitmix(splitmix(seed) ^ a) ^ b) ^ c);
}

bool uses_imputer(Variant v) { return v == Variant::kFull || v == Variant::kDec || v == Variant::kUni; }
bool zero_fills(Variant v) { return v == Variant::kUni || v == Variant::kBaseline; }

Var zero(Graph& g) { return g.constant(Tensor::scalar(0.0)); }

std::vector<std::size_t> flagged(const std::vector<bool>& flags) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) rows.push_back(i);
  return rows;
}

MaskSpec with_missing(MaskSpec spec, const std::vector<bool>& missing) {
  for (std::size_t i = 0; i < missing.size(); ++i)
    if (missing[i]) spec.row_masked[i] = true;
  MaskSpec out = mask_from_rows(spec.rows, flagged(spec.row_masked));
  out.ratio = spec.ratio;
  out.seed = spec.seed;
  return out;
}

std::vector<GridCell> channel_cells(std::size_t n) {
  const auto& all = project_to_grid(canonical_montage().electrodes()).canonical_cells;
  if (n > all.size()) throw ConfigError("model: at most " + std::to_string(all.size()) + " channels");
  return {all.begin(), all.begin() + static_cast<long>(n)};
}

void check_finite(const Var& v, const char* component, std::uint64_t step, std::size_t sample) {
  if (!v.value().all_finite()) {
    throw NumericalError(std::string("non-finite ") + component + " loss at step " + std::to_string(step) +
                         " (sample " + std::to_string(sample) + ")");
  }
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kImp: return "imp";
    case Variant::kDec: return "dec";
    case Variant::kUni: return "uni";
    case Variant::kBaseline: return "baseline";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  std::string t = text;
  for (char& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (t == "full") return Variant::kFull;
  if (t == "imp" || t == "imac-imp") return Variant::kImp;
  if (t == "dec" || t == "imac-dec") return Variant::kDec;
  if (t == "uni" || t == "imac-uni") return Variant::kUni;
  if (t == "baseline" || t == "eegnet") return Variant::kBaseline;
  throw ConfigError("unknown variant '" + text + "' (full, imp, dec, uni, baseline)");
}

// ---- configuration ----------------------------------------------------------

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must be in [0, 1)");
  if (batch_size == 0) bad("batch_size must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) bad("mask_ratio must be in [0, 1]");
  if (!(lambda_cons >= 0.0)) bad("lambda_cons must be >= 0");
  if (!(w_dec >= 0.0 && w_imp >= 0.0 && w_cls >= 0.0)) bad("loss weights must be >= 0");
  if (!(clip_norm >= 0.0)) bad("clip_norm must be >= 0");
}

EncoderConfig ModelConfig::encoder() const {
  EncoderConfig e;
  e.channels = channels;
  e.patch_len = patch_len;
  e.pos_dim = pos_dim;
  e.d = d;
  e.heads = heads;
  e.ffn_hidden = ffn_hidden;
  return e;
}

ImputerConfig ModelConfig::imputer() const {
  ImputerConfig c;
  c.channels = channels;
  c.d = d;
  c.d_k = d;
  c.blocks = imputer_blocks;
  c.ffn_hidden = ffn_hidden;
  return c;
}

ClassifierConfig ModelConfig::classifier() const {
  ClassifierConfig c = head;
  c.channels = channels;
  c.num_classes = num_classes;
  c.samples = variant == Variant::kDec ? patches() * d : samples;
  return c;
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (channels == 0 || samples == 0 || num_classes < 2) bad("empty geometry");
  if (patch_len == 0 || samples % patch_len != 0) bad("samples must be a multiple of patch_len");
  if (d == 0 || heads == 0 || d % heads != 0) bad("d must be a positive multiple of heads");
  if (channels < d) bad("the pattern projection needs channels >= d");
  if (imputer_blocks == 0) bad("imputer_blocks must be positive");
  try {
    classifier().validate();
  } catch (const Error& e) {
    bad(e.what());
  }
}

ModelConfig ModelConfig::for_dataset(const Dataset& ds, Variant variant) {
  ModelConfig c;
  c.variant = variant;
  c.samples = ds.samples;
  c.num_classes = ds.num_classes;
  c.validate();
  return c;
}

std::string to_json(const TrainConfig& c) {
  json j{{"learning_rate", c.learning_rate}, {"momentum", c.momentum}, {"epochs", c.epochs},
         {"batch_size", c.batch_size},       {"mask_ratio", c.mask_ratio}, {"lambda_cons", c.lambda_cons},
         {"seed", c.seed},                   {"variant", variant_name(c.variant)},
         {"w_dec", c.w_dec},                 {"w_imp", c.w_imp},         {"w_cls", c.w_cls},
         {"clip_norm", c.clip_norm},         {"cosine", c.cosine}};
  return j.dump();
}

std::string to_json(const ModelConfig& c) {
  const auto& h = c.head;
  json j{{"variant", variant_name(c.variant)},
         {"channels", c.channels},
         {"samples", c.samples},
         {"num_classes", c.num_classes},
         {"patch_len", c.patch_len},
         {"pos_dim", c.pos_dim},
         {"d", c.d},
         {"heads", c.heads},
         {"ffn_hidden", c.ffn_hidden},
         {"imputer_blocks", c.imputer_blocks},
         {"head",
          {{"temporal_filters", h.temporal_filters},
           {"temporal_kernel", h.temporal_kernel},
           {"depth_multiplier", h.depth_multiplier},
           {"separable_kernel", h.separable_kernel},
           {"pointwise_filters", h.pointwise_filters},
           {"pool1", h.pool1},
           {"pool2", h.pool2}}}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.mask_ratio = j.at("mask_ratio").get<double>();
    c.lambda_cons = j.at("lambda_cons").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.w_dec = j.at("w_dec").get<double>();
    c.w_imp = j.at("w_imp").get<double>();
    c.w_cls = j.at("w_cls").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.cosine = j.at("cosine").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.channels = j.at("channels").get<std::size_t>();
    c.samples = j.at("samples").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.patch_len = j.at("patch_len").get<std::size_t>();
    c.pos_dim = j.at("pos_dim").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
    c.imputer_blocks = j.at("imputer_blocks").get<std::size_t>();
    const json& h = j.at("head");
    c.head.temporal_filters = h.at("temporal_filters").get<std::size_t>();
    c.head.temporal_kernel = h.at("temporal_kernel").get<std::size_t>();
    c.head.depth_multiplier = h.at("depth_multiplier").get<std::size_t>();
    c.head.separable_kernel = h.at("separable_kernel").get<std::size_t>();
    c.head.pointwise_filters = h.at("pointwise_filters").get<std::size_t>();
    c.head.pool1 = h.at("pool1").get<std::size_t>();
    c.head.pool2 = h.at("pool2").get<std::size_t>();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

// ---- model ------------------------------------------------------------------

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m{config, {}};
  Rng cls_rng(mix(seed, 5));
  init_classifier(m.params, config.classifier(), cls_rng);
  if (config.variant == Variant::kBaseline) return m;

  Rng enc_rng(mix(seed, 1)), pool_rng(mix(seed, 2)), proj_rng(mix(seed, 3)), imp_rng(mix(seed, 4));
  init_encoder(m.params, config.encoder(), enc_rng);
  TemporalPatternPool::initial(config.d, config.patch_len, pool_rng).store(m.params);
  m.params.set(kLoadingName, PatternProjection::random(config.channels, config.d, proj_rng).loading);
  m.params.freeze(kLoadingName);
  if (uses_imputer(config.variant)) init_imputer(m.params, config.imputer(), channel_cells(config.channels), imp_rng);
  if (config.variant == Variant::kDec)
    for (Component c : kComponents) m.params.freeze(pool_param_name(c));
  return m;
}

Sample make_sample(Tensor signal, std::vector<bool> missing, int label, const ModelConfig& config) {
  if (signal.rank() != 2 || signal.rows() != config.samples || signal.cols() != config.channels) {
    throw ContractError("sample: signal " + shape_to_string(signal.shape()) + " does not match the model (" +
                        std::to_string(config.samples) + " x " + std::to_string(config.channels) + ")");
  }
  if (missing.size() != config.channels) throw ContractError("sample: missing flags size mismatch");
  if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes)
    throw ContractError("sample: label " + std::to_string(label) + " out of range");
  EEGRecording rec;
  rec.samples = signal;
  rec.channel_names.resize(config.channels);
  rec.sample_rate_hz = 1.0;
  const PatchSet ps = add_positional_embedding(patchify(rec, config.patch_len), config.pos_dim);
  Sample s;
  const std::size_t width = ps.signal_width();
  for (std::size_t p = 0; p < ps.count(); ++p) {
    s.tokens.push_back(patch_tokens(ps, p));
    Tensor target({1, width});
    std::copy_n(ps.patches.values().begin() + p * ps.patches.cols(), width, target.values().begin());
    s.targets.push_back(std::move(target));
  }
  s.signal = std::move(signal);
  s.missing = std::move(missing);
  s.label = label;
  return s;
}

Sample prepare_sample(const EEGRecording& recording, const ModelConfig& config) {
  recording.validate();
  if (config.channels != kUnifiedChannels) {
    throw ContractError("prepare_sample: recordings map onto the " + std::to_string(kUnifiedChannels) +
                        "-channel layout only");
  }
  // Dead (all-zero) channels carry nothing and are treated as absent.
  EEGRecording live = recording;
  live.channel_names.clear();
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < recording.num_channels(); ++c) {
    if (!canonical_montage().index_of(recording.channel_names[c])) continue;
    bool dead = true;
    for (std::size_t t = 0; t < recording.num_samples() && dead; ++t) dead = recording.samples(t, c) == 0.0;
    if (!dead) keep.push_back(c);
  }
  live.samples = Tensor({recording.num_samples(), keep.size()});
  for (std::size_t j = 0; j < keep.size(); ++j) {
    live.channel_names.push_back(recording.channel_names[keep[j]]);
    for (std::size_t t = 0; t < recording.num_samples(); ++t) live.samples(t, j) = recording.samples(t, keep[j]);
  }
  std::vector<bool> missing(kUnifiedChannels, false);
  for (std::size_t i : missing_channels(live)) missing[i] = true;
  const bool complete = std::find(missing.begin(), missing.end(), true) == missing.end();
  EEGRecording unified = zero_fills(config.variant) || complete ? zero_fill(live)
                                                               : rbf_interpolate(live, canonical_montage());
  return make_sample(std::move(unified.samples), std::move(missing), recording.label, config);
}

std::vector<Sample> prepare_samples(const Dataset& ds, const ModelConfig& config) {
  std::vector<Sample> out;
  out.reserve(ds.recordings.size());
  for (const auto& r : ds.recordings) out.push_back(prepare_sample(r, config));
  return out;
}

// ---- forward ----------------------------------------------------------------

MaskPlan training_masks(const ModelConfig& mc, const TrainConfig& tc, const Sample& s, std::uint64_t step,
                        std::size_t sample_id) {
  if (!uses_imputer(mc.variant)) return {};
  MaskPlan plan;
  plan.a = with_missing(make_mask(mc.channels, tc.mask_ratio, mix(tc.seed, step, sample_id, 1)), s.missing);
  plan.b = with_missing(make_mask(mc.channels, tc.mask_ratio, mix(tc.seed, step, sample_id, 2)), s.missing);
  return plan;
}

MaskPlan inference_masks(const ModelConfig& mc, const Sample& s) {
  if (!uses_imputer(mc.variant)) return {};
  return {mask_from_rows(mc.channels, flagged(s.missing)), std::nullopt};
}

namespace {

// Detached imputer contexts of one forward pass. Replaying them holds the
// contexts fixed, which is the function the optimiser differentiates.
struct ContextTape {
  std::vector<Tensor> values;
  bool replay = false;
  std::size_t next = 0;
};

JointTerms joint_forward_impl(const VarMap& vars, const ModelConfig& mc, const TrainConfig& tc, const Sample& s,
                              const MaskPlan& masks, ContextTape* tape) {
  if (vars.vars().empty()) throw ContractError("joint_forward: no parameters bound");
  if (s.tokens.size() != mc.patches()) throw ContractError("joint_forward: sample does not match the model");
  Graph& g = *vars.vars().begin()->second.graph;
  const ClassifierConfig ccfg = mc.classifier();
  JointTerms out;
  out.dec = out.fid = out.cons = zero(g);

  if (mc.variant == Variant::kBaseline) {
    out.head = classify(vars, ccfg, g.constant(s.signal));
    out.cls = cross_entropy(out.head.probs, static_cast<std::size_t>(s.label));
    out.total = ops::scale(out.cls, tc.w_cls);
    return out;
  }

  const EncoderConfig ecfg = mc.encoder();
  const ImputerConfig icfg = mc.imputer();
  const TemporalPatternPool pool{vars[pool_param_name(Component::kTrend)].value(),
                                 vars[pool_param_name(Component::kSeason)].value(),
                                 vars[pool_param_name(Component::kResidual)].value()};
  const PatternProjection proj{vars[kLoadingName].value()};
  const bool any_missing = std::find(s.missing.begin(), s.missing.end(), true) != s.missing.end();

  auto encode = [&](Var tokens, const std::optional<MaskSpec>& m) {
    if (m && m->count() > 0) return encode_tokens(vars, ecfg, tokens, &m->row_masked);
    if (!m && any_missing) return encode_tokens(vars, ecfg, tokens, &s.missing);
    return encode_tokens(vars, ecfg, tokens);
  };
  // The imputer reads a constant copy of H, so the imputation objectives
  // train the imputer alone; the encoder learns from the observed rows.
  // Left to shape H, they collapse it towards rows that are trivial to
  // impute. Returns the imputation and the mixed view passed downstream.
  struct Filled {
    Var context, imputed, view;
  };
  auto fill = [&](Var h, const std::optional<MaskSpec>& m) {
    if (!m) return Filled{h, h, h};
    Var hc;
    if (tape && tape->replay) {
      hc = g.constant(tape->values.at(tape->next++));
    } else {
      hc = g.constant(h.value());
      if (tape) tape->values.push_back(h.value());
    }
    Var ht = impute(apply_mask(hc, *m, vars["imp.token"]), hc, vars, icfg, *m);
    return Filled{hc, ht, ops::select_rows(m->row_masked, h, ht)};
  };

  std::vector<Var> recons, pieces, fids, conss;
  for (std::size_t p = 0; p < mc.patches(); ++p) {
    Var tokens = g.constant(s.tokens[p]);
    const Filled a = fill(encode(tokens, masks.a), masks.a);
    if (masks.b) {
      const Filled b = fill(encode(tokens, masks.b), masks.b);
      fids.push_back(fidelity_loss(a.imputed, a.context, *masks.a));
      fids.push_back(fidelity_loss(b.imputed, b.context, *masks.b));
      conss.push_back(consistency_loss(a.imputed, b.imputed, *masks.a, *masks.b));
    }
    if (mc.variant == Variant::kDec) {
      pieces.push_back(a.view);
      continue;
    }
    const Selection sel = select_pattern(s.targets[p].values(), pool, proj);
    Var r = reconstruct(a.view, vars[pool_param_name(sel.component)]);
    recons.push_back(r);
    pieces.push_back(ops::reshape(r, {mc.patch_len, mc.channels}));
  }

  Var signal;
  if (mc.variant == Variant::kDec) {
    signal = ops::transpose(ops::concat_cols(pieces));
  } else {
    out.dec = decomposition_loss(g, recons, s.targets);
    signal = ops::concat_rows(pieces);
  }
  if (!fids.empty()) {
    // Row norms are divided by d so every term is a per-coordinate mean.
    const double per = 1.0 / static_cast<double>(mc.d);
    out.fid = ops::scale(ops::sum(ops::concat_cols(fids)), per / static_cast<double>(fids.size()));
    out.cons = ops::scale(ops::sum(ops::concat_cols(conss)), per / static_cast<double>(conss.size()));
  }
  out.head = classify(vars, ccfg, signal);
  out.cls = cross_entropy(out.head.probs, static_cast<std::size_t>(s.label));
  Var total = ops::scale(out.cls, tc.w_cls);
  if (mc.variant != Variant::kDec) total = ops::add(total, ops::scale(out.dec, tc.w_dec));
  if (!fids.empty())
    total = ops::add(total, ops::scale(ops::add(out.fid, ops::scale(out.cons, tc.lambda_cons)), tc.w_imp));
  out.total = total;
  return out;
}

}  // namespace

JointTerms joint_forward(const VarMap& vars, const ModelConfig& mc, const TrainConfig& tc, const Sample& s,
                         const MaskPlan& masks) {
  return joint_forward_impl(vars, mc, tc, s, masks, nullptr);
}

// ---- training ---------------------------------------------------------------

TrainerState make_trainer(const ModelConfig& mc, const TrainConfig& tc) {
  tc.validate();
  ModelConfig m = mc;
  m.variant = tc.variant;
  TrainerState st{init_model(m, tc.seed), tc, {}, 0};
  for (const auto& [name, t] : st.model.params.tensors())
    if (!st.model.params.frozen(name)) st.velocity[name] = Tensor(t.shape(), 0.0);
  return st;
}

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
  return (samples + batch_size - 1) / batch_size;
}

std::vector<std::size_t> batch_indices(const TrainConfig& tc, std::size_t samples, std::uint64_t step) {
  if (samples == 0) throw ContractError("batch_indices: empty training set");
  const std::size_t spe = steps_per_epoch(samples, tc.batch_size);
  const std::uint64_t epoch = step / spe, pos = step % spe;
  std::vector<std::size_t> perm(samples);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix(tc.seed, epoch, 0x5eed));
  for (std::size_t i = samples; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  const std::size_t begin = pos * tc.batch_size, end = std::min(samples, begin + tc.batch_size);
  return {perm.begin() + static_cast<long>(begin), perm.begin() + static_cast<long>(end)};
}

double learning_rate_at(const TrainConfig& tc, std::size_t samples, std::uint64_t step) {
  if (!tc.cosine) return tc.learning_rate;
  const double total = static_cast<double>(tc.epochs * steps_per_epoch(samples, tc.batch_size));
  if (total <= 0.0 || static_cast<double>(step) >= total) return 0.0;
  return tc.learning_rate * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total));
}

LossBreakdown train_step(TrainerState& state, std::span<const Sample> data, std::span<const std::size_t> batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const ModelConfig& mc = state.model.config;
  const TrainConfig& tc = state.config;
  std::map<std::string, Tensor> grads;
  for (const auto& [name, v] : state.velocity) grads[name] = Tensor(v.shape(), 0.0);
  LossBreakdown mean;
  // Samples are processed in batch order so the reduction is deterministic.
  for (std::size_t idx : batch) {
    if (idx >= data.size()) throw ContractError("train_step: sample index out of range");
    Graph g;
    const VarMap vars = bind(g, state.model.params, true);
    const JointTerms t = joint_forward(vars, mc, tc, data[idx], training_masks(mc, tc, data[idx], state.step, idx));
    check_finite(t.dec, "decomposition", state.step, idx);
    check_finite(t.fid, "fidelity", state.step, idx);
    check_finite(t.cons, "consistency", state.step, idx);
    check_finite(t.cls, "classification", state.step, idx);
    check_finite(t.total, "total", state.step, idx);
    g.backward(t.total);
    for (auto& [name, acc] : grads) {
      const Tensor gr = g.grad(vars[name]);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gr[i];
    }
    mean.dec += t.dec.value()[0];
    mean.fid += t.fid.value()[0];
    mean.cons += t.cons.value()[0];
    mean.cls += t.cls.value()[0];
    mean.total += t.total.value()[0];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  const double lr = learning_rate_at(tc, data.size(), state.step);
  mean.dec *= inv, mean.fid *= inv, mean.cons *= inv, mean.cls *= inv, mean.total *= inv;

  for (auto& [name, acc] : grads) {
    double sq = 0.0;
    for (double& v : acc.values()) v *= inv, sq += v * v;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient for " + name + " at step " + std::to_string(state.step));
    const double clip = tc.clip_norm > 0.0 && norm > tc.clip_norm ? tc.clip_norm / norm : 1.0;
    Tensor& vel = state.velocity.at(name);
    Tensor& p = state.model.params.get(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      vel[i] = tc.momentum * vel[i] + clip * acc[i];
      p[i] -= lr * vel[i];
    }
  }
  ++state.step;
  return mean;
}

std::vector<LossBreakdown> train(TrainerState& state, std::span<const Sample> data,
                                 std::optional<std::uint64_t> until_step, const StepCallback& on_step) {
  const std::uint64_t end = until_step.value_or(state.config.epochs * steps_per_epoch(data.size(), state.config.batch_size));
  std::vector<LossBreakdown> trace;
  while (state.step < end) {
    const auto batch = batch_indices(state.config, data.size(), state.step);
    const std::uint64_t step = state.step;
    trace.push_back(train_step(state, data, batch));
    if (on_step) on_step(step, trace.back());
  }
  return trace;
}

// ---- inference --------------------------------------------------------------

Prediction predict(const Model& model, const Sample& sample) {
  Graph g;
  const VarMap vars = bind(g, model.params, false);
  const JointTerms t = joint_forward(vars, model.config, TrainConfig{}, sample, inference_masks(model.config, sample));
  Prediction p;
  const auto probs = t.head.probs.value().values();
  p.probs.assign(probs.begin(), probs.end());
  p.label = static_cast<int>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
  const auto feats = t.head.features.value().values();
  p.features.assign(feats.begin(), feats.end());
  return p;
}

std::vector<Prediction> predict(const Model& model, std::span<const Sample> samples) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(predict(model, s));
  return out;
}

// ---- checkpoints ------------------------------------------------------------

void write_checkpoint(std::ostream& out, const TrainerState& state) {
  json dir = json::array();
  std::vector<const Tensor*> payload;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const std::string& group, const Tensor& t, bool frozen) {
    dir.push_back({{"name", name}, {"group", group}, {"shape", t.shape()}, {"offset", offset}, {"frozen", frozen}});
    offset += t.size();
    payload.push_back(&t);
  };
  for (const auto& [name, t] : state.model.params.tensors()) add(name, "param", t, state.model.params.frozen(name));
  for (const auto& [name, t] : state.velocity) add(name, "velocity", t, false);
  json header{{"version", kCheckpointVersion},
              {"model", json::parse(to_json(state.model.config))},
              {"train", json::parse(to_json(state.config))},
              {"step", state.step},
              {"values", offset},
              {"tensors", dir}};
  const std::string text = header.dump();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor* t : payload)
    out.write(reinterpret_cast<const char*>(t->values().data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!out) throw FormatError("write_checkpoint: stream failure");
}

TrainerState read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof(version))) throw FormatError("checkpoint: truncated version");
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 30))
    throw FormatError("checkpoint: bad header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("checkpoint: truncated header");
  TrainerState st;
  json header;
  try {
    header = json::parse(text);
    st.model.config = model_config_from_json(header.at("model").dump());
    st.config = train_config_from_json(header.at("train").dump());
    st.step = header.at("step").get<std::uint64_t>();
    std::size_t expected = 0;
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<Shape>();
      if (e.at("offset").get<std::size_t>() != expected) throw FormatError("checkpoint: tensor offsets out of order");
      Tensor t(shape, 0.0);
      expected += t.size();
      if (!in.read(reinterpret_cast<char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
        throw FormatError("checkpoint: truncated payload");
      const std::string name = e.at("name").get<std::string>();
      const std::string group = e.at("group").get<std::string>();
      if (group == "param") {
        st.model.params.set(name, std::move(t));
        if (e.at("frozen").get<bool>()) st.model.params.freeze(name);
      } else if (group == "velocity") {
        st.velocity[name] = std::move(t);
      } else {
        throw FormatError("checkpoint: unknown tensor group " + group);
      }
    }
    if (expected != header.at("values").get<std::size_t>()) throw FormatError("checkpoint: value count mismatch");
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  for (const auto& [name, v] : st.velocity) {
    if (!st.model.params.contains(name) || st.model.params.get(name).shape() != v.shape())
      throw FormatError("checkpoint: velocity " + name + " has no matching parameter");
  }
  return st;
}

void save_checkpoint(const std::string& path, const TrainerState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  write_checkpoint(out, state);
}

TrainerState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  return read_checkpoint(in);
}

// ---- gradient check ---------------------------------------------------------

GradCheckReport joint_gradcheck(Variant variant, std::uint64_t seed) {
  ModelConfig mc;
  mc.variant = variant;
  mc.channels = 4;
  mc.samples = 16;
  mc.num_classes = 3;
  mc.patch_len = 8;
  mc.pos_dim = 4;
  mc.d = 4;
  mc.heads = 2;
  mc.ffn_hidden = 6;
  mc.imputer_blocks = 2;
  mc.head.temporal_filters = 2;
  mc.head.temporal_kernel = 4;
  mc.head.depth_multiplier = 2;
  mc.head.separable_kernel = 4;
  mc.head.pointwise_filters = 3;
  mc.head.pool1 = 2;
  mc.head.pool2 = 2;
  TrainConfig tc;
  tc.variant = variant;
  tc.seed = seed;
  tc.mask_ratio = 0.5;
  const Model model = init_model(mc, seed);

  Rng rng(mix(seed, 9));
  std::normal_distribution<double> n01;
  Tensor signal({mc.samples, mc.channels});
  for (double& v : signal.values()) v = n01(rng);
  std::vector<bool> missing(mc.channels, false);
  missing[mc.channels - 1] = true;
  const Sample sample = make_sample(signal, missing, 1, mc);
  const MaskPlan masks = training_masks(mc, tc, sample, 0, 0);

  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : model.params.tensors()) {
    if (model.params.frozen(name)) continue;
    names.push_back(name);
    inputs.push_back(t);
  }
  ContextTape tape;
  {
    Graph g;
    joint_forward_impl(bind(g, model.params, false), mc, tc, sample, masks, &tape);
    tape.replay = true;
  }
  const LossBuilder build = [&](Graph& g, std::span<const Var> leaves) {
    VarMap vars;
    std::size_t k = 0;
    for (const auto& [name, t] : model.params.tensors())
      vars.insert(name, model.params.frozen(name) ? g.constant(t) : leaves[k++]);
    tape.next = 0;
    return joint_forward_impl(vars, mc, tc, sample, masks, &tape).total;
  };
  GradCheckOptions opt;
  opt.seed = seed;
  const GradCheckResult r = check_gradients(build, inputs, opt);
  GradCheckReport rep;
  rep.max_rel_error = r.max_rel_error;
  rep.coords = r.coords_checked;
  rep.worst = names[r.worst_input] + "[" + std::to_string(r.worst_coord) + "]";
  return rep;
}

}  // namespace imac
