#pragma once

#include <array>
#include <span>
#include <vector>

#include "imac/montage.hpp"
#include "imac/params.hpp"

namespace imac {

enum class Component { kTrend = 0, kSeason = 1, kResidual = 2 };
inline constexpr std::array<Component, 3> kComponents = {Component::kTrend, Component::kSeason,
                                                        Component::kResidual};
const char* component_name(Component c);

// Parameter names of the pattern pool inside a ParamStore.
const char* pool_param_name(Component c);

// Trend, seasonality and residual patterns, each D x L.
struct TemporalPatternPool {
  Tensor trend;
  Tensor season;
  Tensor residual;

  const Tensor& operator[](Component c) const;
  void validate() const;

  // Row-normalised priors: a polynomial basis, a sinusoid bank and seeded
  // white noise.
  static TemporalPatternPool initial(std::size_t D, std::size_t L, Rng& rng);
  static TemporalPatternPool from(const ParamStore& params);
  void store(ParamStore& params) const;
};

// Fixed channel loading A (n x D). Maps a D x L pattern Z into patch space as
// the time-major flattening of A*Z, so reconstruct(A, Z) == apply(Z).
struct PatternProjection {
  Tensor loading;

  static PatternProjection random(std::size_t n, std::size_t D, Rng& rng);
  Tensor apply(const Tensor& pattern) const;
};

struct Selection {
  Component component = Component::kTrend;
  double similarity = 0.0;
};

// The component whose projected pattern has the highest cosine with
// the patch signal (positional embedding excluded). Ties resolve T < S < R.
Selection select_pattern(std::span<const double> patch, const TemporalPatternPool& pool,
                         const PatternProjection& proj);

struct EncoderConfig {
  std::size_t channels = kUnifiedChannels;
  std::size_t patch_len = 32;
  std::size_t pos_dim = 8;
  std::size_t d = 16;
  std::size_t heads = 2;
  std::size_t ffn_hidden = 32;
  bool channel_embedding = true;
};

void init_encoder(ParamStore& params, const EncoderConfig& cfg, Rng& rng);

// Per-channel token rows for patch `index`: row c is channel c's L samples
// followed by the patch's positional embedding.
Tensor patch_tokens(const PatchSet& patches, std::size_t index);

// One pre-norm transformer block over channel tokens; returns H (n x d).
// Channels flagged in `key_mask` are excluded as attention keys.
Var encode_tokens(const VarMap& vars, const EncoderConfig& cfg, Var tokens,
                  const std::vector<bool>* key_mask = nullptr);

// Value-level convenience for a single patch.
Tensor encode_spatial(const PatchSet& patches, std::size_t index, const ParamStore& params,
                      const EncoderConfig& cfg);

// N(H, Z) = H * Z, laid out as a 1 x (L*n) time-major patch.
Var reconstruct(Var features, Var pattern);
Tensor reconstruct(const Tensor& features, const Tensor& pattern);

// Mean squared error over every coordinate of every patch.
Var decomposition_loss(Graph& graph, std::span<const Var> reconstructions, std::span<const Tensor> targets);

}  // namespace imac
