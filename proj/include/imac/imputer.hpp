#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "imac/montage.hpp"
#include "imac/params.hpp"

namespace imac {

// Whole-row (channel) mask over H.
struct MaskSpec {
  std::size_t rows = 0;
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> masked_rows;  // sorted
  std::vector<bool> row_masked;          // size rows

  std::size_t count() const { return masked_rows.size(); }
  // Binary matrix M (rows x cols): 0 on masked rows, 1 elsewhere.
  Tensor matrix(std::size_t cols) const;
};

// Uniformly random subset of round(ratio * n) rows, reproducible per seed.
MaskSpec make_mask(std::size_t n, double ratio, std::uint64_t seed);
// Deterministic mask over the given rows (e.g. channels missing at inference).
MaskSpec mask_from_rows(std::size_t n, std::vector<std::size_t> rows);

struct ImputerConfig {
  std::size_t channels = kUnifiedChannels;
  std::size_t d = 16;
  std::size_t d_k = 16;
  std::size_t blocks = 2;
  std::size_t ffn_hidden = 32;
  // Amplitude of the initial row code. It must stand out against the content
  // of H in the keys for attention to find spatial neighbours early.
  double row_pos_scale = 5.0;
};

// Row positional embeddings start as a scaled 2-D sinusoidal code of each
// channel's grid cell so attention can find spatial neighbours from the outset.
void init_imputer(ParamStore& params, const ImputerConfig& cfg, const std::vector<GridCell>& cells, Rng& rng);
std::string imputer_block_prefix(std::size_t block);

// Masked rows take the shared token, the rest keep H.
Var apply_mask(Var features, const MaskSpec& spec, Var token);

// One pre-norm imputation block:
//   A = softmax(LN(Q) W_Q ((H + key_pos) W_K)^T / sqrt(d_k)) (H W_V)
//   X = Q + A W_O,  out = X + FFN(LN(X))
// `key_pos` may be omitted.
// When `attention` is non-null it receives the softmax weights. Context rows
// flagged in `excluded_keys` receive zero attention.
Var context_attention(Var queries, Var context, const VarMap& vars, const std::string& block_prefix,
                      std::optional<Var> key_pos = std::nullopt, Tensor* attention = nullptr,
                      const std::vector<bool>* excluded_keys = nullptr);

// Stacked imputation: block 1 queries are H_mask plus row positions, later
// blocks query with the previous output; keys and values always come from
// the unmasked rows of the original H. Unmasked rows of the result are copied
// from H.
Var impute(Var masked_features, Var features, const VarMap& vars, const ImputerConfig& cfg,
           const MaskSpec& spec);

// Value-level convenience returning H_tilde.
struct ImputationResult {
  Tensor imputed;  // H_tilde, n x d
  std::vector<std::size_t> masked_rows;
};
ImputationResult impute(const Tensor& features, const ParamStore& params, const ImputerConfig& cfg,
                        const MaskSpec& spec);

// Mean over masked rows of the squared row error; 0 with no mask.
Var fidelity_loss(Var imputed, Var features, const MaskSpec& spec);

// Mean over the union of both masked sets of the squared row
// difference between the two imputations.
Var consistency_loss(Var imputed_a, Var imputed_b, const MaskSpec& spec_a, const MaskSpec& spec_b);

// fidelity + lambda * consistency.
Var total_loss(Var fidelity, Var consistency, double lambda);

}  // namespace imac
