#include "imac/decomposition.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "imac/error.hpp"
#include "test_util.hpp"

using namespace imac;
using imac::testing::ParamLeaves;
using imac::testing::uniform;
using imac::testing::weighted_sum;

namespace {

EncoderConfig toy_encoder() {
  EncoderConfig cfg;
  cfg.channels = 4;
  cfg.patch_len = 4;
  cfg.pos_dim = 2;
  cfg.d = 4;
  cfg.heads = 2;
  cfg.ffn_hidden = 6;
  return cfg;
}

// Time-major flattening of A*Z computed with plain loops.
std::vector<double> project_by_hand(const Tensor& a, const Tensor& z) {
  const std::size_t n = a.rows(), D = a.cols(), L = z.cols();
  std::vector<double> out(n * L, 0.0);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t k = 0; k < D; ++k) out[t * n + c] += a(c, k) * z(k, t);
  return out;
}

double cosine(const std::vector<double>& a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST(PatternPool, InitialRowsAreUnitNorm) {
  Rng rng(3);
  auto pool = TemporalPatternPool::initial(16, 32, rng);
  for (Component c : kComponents) {
    const Tensor& z = pool[c];
    ASSERT_EQ(z.shape(), (Shape{16, 32}));
    for (std::size_t i = 0; i < 16; ++i) {
      double s = 0;
      for (std::size_t t = 0; t < 32; ++t) s += z(i, t) * z(i, t);
      EXPECT_NEAR(s, 1.0, 1e-12) << component_name(c) << " row " << i;
    }
  }
}

TEST(PatternPool, StoreAndReloadThroughParams) {
  Rng rng(4);
  auto pool = TemporalPatternPool::initial(4, 8, rng);
  ParamStore p;
  pool.store(p);
  auto back = TemporalPatternPool::from(p);
  EXPECT_EQ(back.trend, pool.trend);
  EXPECT_EQ(back.residual, pool.residual);
}

TEST(PatternProjection, LoadingHasOrthonormalColumns) {
  Rng rng(5);
  auto proj = PatternProjection::random(64, 16, rng);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < 64; ++c) s += proj.loading(c, i) * proj.loading(c, j);
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-12);
    }
}

TEST(PatternProjection, TooFewChannelsRejected) {
  Rng rng(5);
  EXPECT_THROW(PatternProjection::random(3, 4, rng), ContractError);
}

TEST(SelectPattern, SelfSimilarityPicksTrend) {
  Rng rng(7);
  auto pool = TemporalPatternPool::initial(4, 8, rng);
  auto proj = PatternProjection::random(6, 4, rng);
  Tensor patch = proj.apply(pool.trend);
  auto sel = select_pattern(patch.values(), pool, proj);
  EXPECT_EQ(sel.component, Component::kTrend);
  EXPECT_NEAR(sel.similarity, 1.0, 1e-12);
}

TEST(SelectPattern, OrthogonalConstructionPicksResidual) {
  // Z^T, Z^S and Z^R occupy disjoint time steps, so their projections are
  // mutually orthogonal.
  const std::size_t D = 2, L = 6;
  TemporalPatternPool pool{Tensor({D, L}, 0.0), Tensor({D, L}, 0.0), Tensor({D, L}, 0.0)};
  pool.trend(0, 0) = 1.0;
  pool.trend(1, 1) = 1.0;
  pool.season(0, 2) = 1.0;
  pool.season(1, 3) = -1.0;
  pool.residual(0, 4) = 0.5;
  pool.residual(1, 5) = 2.0;
  PatternProjection proj{Tensor::matrix({{1, 0}, {0, 1}, {1, 1}})};
  Tensor patch = proj.apply(pool.residual);
  auto sel = select_pattern(patch.values(), pool, proj);
  EXPECT_EQ(sel.component, Component::kResidual);
  EXPECT_NEAR(sel.similarity, 1.0, 1e-12);
}

TEST(SelectPattern, MatchesBruteForceCosines) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    TemporalPatternPool pool{uniform({3, 5}, rng), uniform({3, 5}, rng), uniform({3, 5}, rng)};
    PatternProjection proj{uniform({4, 3}, rng)};
    Tensor patch = uniform({20}, rng);
    double best = -2;
    int arg = -1;
    for (int k = 0; k < 3; ++k) {
      double c = cosine(project_by_hand(proj.loading, pool[kComponents[k]]), patch.values());
      if (c > best) best = c, arg = k;
    }
    auto sel = select_pattern(patch.values(), pool, proj);
    EXPECT_EQ(static_cast<int>(sel.component), arg);
    EXPECT_NEAR(sel.similarity, best, 1e-12);
    EXPECT_LE(std::abs(sel.similarity), 1.0 + 1e-12);
  }
}

TEST(SelectPattern, TieResolvesToEarlierComponent) {
  Tensor z = Tensor::matrix({{1, 2, 3}});
  TemporalPatternPool pool{z, z, z};
  PatternProjection proj{Tensor::matrix({{1}, {2}})};
  auto sel = select_pattern(proj.apply(z).values(), pool, proj);
  EXPECT_EQ(sel.component, Component::kTrend);
}

TEST(SelectPattern, InvariantToPositiveScaling) {
  std::mt19937_64 rng(12);
  Rng prng(12);
  auto pool = TemporalPatternPool::initial(4, 8, prng);
  auto proj = PatternProjection::random(6, 4, prng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor patch = uniform({48}, rng);
    auto a = select_pattern(patch.values(), pool, proj);
    for (double s : {1e-6, 0.3, 7.0, 1e6}) {
      Tensor scaled = patch;
      for (double& x : scaled.storage()) x *= s;
      EXPECT_EQ(select_pattern(scaled.values(), pool, proj).component, a.component);
    }
  }
}

TEST(SelectPattern, ZeroPatchRejected) {
  Rng rng(1);
  auto pool = TemporalPatternPool::initial(2, 4, rng);
  auto proj = PatternProjection::random(3, 2, rng);
  std::vector<double> zero(12, 0.0);
  EXPECT_THROW(select_pattern(zero, pool, proj), ContractError);
}

TEST(Encoder, OutputShapeAndDeterminism) {
  EncoderConfig cfg;
  ParamStore p;
  Rng rng(21);
  init_encoder(p, cfg, rng);
  EEGRecording rec;
  std::mt19937_64 drng(2);
  rec.samples = uniform({128, 64}, drng);
  rec.sample_rate_hz = 128;
  for (std::size_t c = 0; c < 64; ++c) rec.channel_names.push_back(canonical_montage().names()[c]);
  auto ps = add_positional_embedding(patchify(rec, 32), 8);
  Tensor h0 = encode_spatial(ps, 1, p, cfg);
  EXPECT_EQ(h0.shape(), (Shape{64, 16}));
  EXPECT_EQ(encode_spatial(ps, 1, p, cfg), h0);
  EXPECT_TRUE(h0.all_finite());
}

TEST(Encoder, ChannelCountMismatchRejected) {
  EncoderConfig cfg = toy_encoder();
  ParamStore p;
  Rng rng(21);
  init_encoder(p, cfg, rng);
  Graph g;
  VarMap v = bind(g, p, false);
  EXPECT_THROW(encode_tokens(v, cfg, g.constant(Tensor({5, 6}, 0.1))), ContractError);
}

TEST(Encoder, PermutationEquivariantWithoutChannelEmbedding) {
  EncoderConfig cfg = toy_encoder();
  cfg.channel_embedding = false;
  ParamStore p;
  Rng rng(31);
  init_encoder(p, cfg, rng);
  std::mt19937_64 drng(9);
  Tensor tokens = uniform({4, 6}, drng);
  Tensor swapped = tokens;
  for (std::size_t j = 0; j < 6; ++j) std::swap(swapped(0, j), swapped(2, j));

  Graph g;
  VarMap v = bind(g, p, false);
  Tensor h = encode_tokens(v, cfg, g.constant(tokens)).value();
  Tensor hs = encode_tokens(v, cfg, g.constant(swapped)).value();
  for (std::size_t j = 0; j < 4; ++j) std::swap(hs(0, j), hs(2, j));
  EXPECT_LT(max_abs_diff(h, hs), 1e-12);
}

TEST(Encoder, ChannelEmbeddingBreaksPermutationSymmetry) {
  EncoderConfig cfg = toy_encoder();
  ParamStore p;
  Rng rng(31);
  init_encoder(p, cfg, rng);
  std::mt19937_64 drng(9);
  Tensor tokens = uniform({4, 6}, drng);
  Tensor swapped = tokens;
  for (std::size_t j = 0; j < 6; ++j) std::swap(swapped(0, j), swapped(2, j));
  Graph g;
  VarMap v = bind(g, p, false);
  Tensor h = encode_tokens(v, cfg, g.constant(tokens)).value();
  Tensor hs = encode_tokens(v, cfg, g.constant(swapped)).value();
  for (std::size_t j = 0; j < 4; ++j) std::swap(hs(0, j), hs(2, j));
  EXPECT_GT(max_abs_diff(h, hs), 1e-6);
}

TEST(Encoder, KeyMaskHidesChannelContent) {
  EncoderConfig cfg = toy_encoder();
  ParamStore p;
  Rng rng(32);
  init_encoder(p, cfg, rng);
  std::mt19937_64 drng(10);
  Tensor tokens = uniform({4, 6}, drng);
  Tensor changed = tokens;
  for (std::size_t j = 0; j < 6; ++j) changed(3, j) += 5.0;
  std::vector<bool> mask{false, false, false, true};
  Graph g;
  VarMap v = bind(g, p, false);
  Tensor a = encode_tokens(v, cfg, g.constant(tokens), &mask).value();
  Tensor b = encode_tokens(v, cfg, g.constant(changed), &mask).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a(r, j), b(r, j), 1e-12);
}

TEST(PatchTokens, RowsAreChannelSamplesThenPosition) {
  EEGRecording rec;
  rec.samples = Tensor({4, 2});
  for (std::size_t t = 0; t < 4; ++t) {
    rec.samples(t, 0) = static_cast<double>(t);
    rec.samples(t, 1) = 10.0 + static_cast<double>(t);
  }
  rec.channel_names = {"Cz", "Pz"};
  rec.sample_rate_hz = 128;
  auto ps = add_positional_embedding(patchify(rec, 2), 2);
  Tensor tok = patch_tokens(ps, 1);
  ASSERT_EQ(tok.shape(), (Shape{2, 4}));
  EXPECT_EQ(tok(0, 0), 2.0);
  EXPECT_EQ(tok(0, 1), 3.0);
  EXPECT_EQ(tok(1, 0), 12.0);
  EXPECT_EQ(tok(1, 1), 13.0);
  auto pe = sinusoidal_embedding(1, 2);
  EXPECT_EQ(tok(0, 2), pe[0]);
  EXPECT_EQ(tok(1, 3), pe[1]);
}

TEST(Reconstruct, ZeroFeaturesGiveZeroPatch) {
  std::mt19937_64 rng(1);
  Tensor r = reconstruct(Tensor({5, 3}, 0.0), uniform({3, 4}, rng));
  EXPECT_EQ(r, Tensor({1, 20}, 0.0));
}

TEST(Reconstruct, IdentityFactorsGiveProjectedIdentity) {
  Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  PatternProjection proj{eye};
  Tensor r = reconstruct(eye, eye);
  EXPECT_EQ(r, proj.apply(eye));
  EXPECT_EQ(r, Tensor({1, 4}, {1, 0, 0, 1}));
}

TEST(Reconstruct, HandProductTimeMajor) {
  Tensor h = Tensor::matrix({{1, 2}, {3, 4}, {0, -1}});
  Tensor z = Tensor::matrix({{1, 0}, {1, 1}});
  // H*Z = [[3,2],[7,4],[-1,-1]]; time-major flatten walks columns.
  EXPECT_EQ(reconstruct(h, z), Tensor({1, 6}, {3, 7, -1, 2, 4, -1}));
}

TEST(Reconstruct, BilinearInFeatures) {
  std::mt19937_64 rng(2);
  Tensor h = uniform({4, 3}, rng), z = uniform({3, 5}, rng);
  Tensor r = reconstruct(h, z);
  Tensor h2 = h;
  for (double& x : h2.storage()) x *= -2.5;
  Tensor r2 = reconstruct(h2, z);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r2[i], -2.5 * r[i], 1e-12);
}

TEST(Reconstruct, MisalignedFactorsRejected) {
  EXPECT_THROW(reconstruct(Tensor({4, 3}, 1.0), Tensor({2, 5}, 1.0)), DimensionError);
}

TEST(DecompositionLoss, PerfectReconstructionIsZero) {
  std::mt19937_64 rng(3);
  Graph g;
  Tensor h = uniform({4, 3}, rng), z = uniform({3, 5}, rng);
  Var r = reconstruct(g.constant(h), g.constant(z));
  std::vector<Var> recons{r};
  std::vector<Tensor> targets{r.value()};
  EXPECT_EQ(decomposition_loss(g, recons, targets).value()[0], 0.0);
}

TEST(DecompositionLoss, UnitOffsetGivesOne) {
  std::mt19937_64 rng(3);
  Graph g;
  std::vector<Var> recons;
  std::vector<Tensor> targets;
  for (int i = 0; i < 3; ++i) {
    Tensor r = uniform({1, 12}, rng);
    Tensor t = r;
    for (double& x : t.storage()) x += 1.0;
    recons.push_back(g.constant(r));
    targets.push_back(t);
  }
  EXPECT_NEAR(decomposition_loss(g, recons, targets).value()[0], 1.0, 1e-12);
}

TEST(DecompositionLoss, MatchesElementwiseOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    std::vector<Var> recons;
    std::vector<Tensor> targets;
    double acc = 0;
    std::size_t count = 0;
    for (int i = 0; i < 4; ++i) {
      Tensor r = uniform({1, 10}, rng), t = uniform({1, 10}, rng);
      for (std::size_t j = 0; j < 10; ++j) acc += (r[j] - t[j]) * (r[j] - t[j]);
      count += 10;
      recons.push_back(g.constant(r));
      targets.push_back(t);
    }
    const double loss = decomposition_loss(g, recons, targets).value()[0];
    EXPECT_GE(loss, 0.0);
    EXPECT_NEAR(loss, acc / static_cast<double>(count), 1e-12);
  }
}

TEST(DecompositionLoss, EmptyPatchListRejected) {
  Graph g;
  EXPECT_THROW(decomposition_loss(g, {}, {}), ContractError);
}

TEST(DecompositionLoss, GradientsThroughEncoderAndPattern) {
  EncoderConfig cfg = toy_encoder();
  ParamStore p;
  Rng rng(41);
  init_encoder(p, cfg, rng);
  std::mt19937_64 drng(42);
  Tensor tokens = uniform({4, 6}, drng);
  Tensor z = uniform({4, 4}, drng);
  Tensor target = uniform({1, 16}, drng);
  ParamLeaves leaves(p, {tokens, z});
  auto res = check_gradients(
      [&](Graph& g, std::span<const Var> in) {
        VarMap v = leaves.vars(in);
        Var h = encode_tokens(v, cfg, leaves.extra(in, 0));
        std::vector<Var> recons{reconstruct(h, leaves.extra(in, 1))};
        std::vector<Tensor> targets{target};
        return decomposition_loss(g, recons, targets);
      },
      leaves.inputs);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.summary();
  for (std::size_t i = 0; i < leaves.inputs.size(); ++i)
    EXPECT_TRUE(res.input_has_signal[i]) << (i < leaves.names.size() ? leaves.names[i] : "factor");
}

TEST(DecompositionLoss, GradientWithRespectToFeatures) {
  std::mt19937_64 rng(5);
  Tensor target = uniform({1, 15}, rng);
  auto res = check_gradients(
      [&](Graph& g, std::span<const Var> in) {
        std::vector<Var> recons{reconstruct(in[0], in[1])};
        std::vector<Tensor> targets{target};
        return decomposition_loss(g, recons, targets);
      },
      {uniform({3, 2}, rng), uniform({2, 5}, rng)});
  EXPECT_LT(res.max_rel_error, 1e-4) << res.summary();
}
