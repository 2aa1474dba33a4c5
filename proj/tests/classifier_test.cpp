#include "imac/classifier.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "imac/error.hpp"
#include "test_util.hpp"

using namespace imac;
using imac::testing::ParamLeaves;
using imac::testing::uniform;

namespace {

ClassifierConfig small_config() {
  ClassifierConfig cfg;
  cfg.samples = 32;
  cfg.channels = 3;
  cfg.num_classes = 3;
  cfg.temporal_filters = 2;
  cfg.temporal_kernel = 5;
  cfg.depth_multiplier = 2;
  cfg.separable_kernel = 3;
  cfg.pointwise_filters = 3;
  cfg.pool1 = 4;
  cfg.pool2 = 4;
  return cfg;
}

}  // namespace

TEST(Classifier, ProbabilitiesOnSimplex) {
  ClassifierConfig cfg;
  ParamStore p;
  Rng rng(1);
  init_classifier(p, cfg, rng);
  std::mt19937_64 drng(2);
  for (int t = 0; t < 5; ++t) {
    Tensor x = uniform({128, 64}, drng, -3, 3);
    Tensor probs = classify(x, p, cfg);
    ASSERT_EQ(probs.shape(), (Shape{1, 4}));
    double s = 0;
    for (double v : probs.values()) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Classifier, Pure) {
  ClassifierConfig cfg;
  ParamStore p;
  Rng rng(1);
  init_classifier(p, cfg, rng);
  std::mt19937_64 drng(3);
  Tensor x = uniform({128, 64}, drng);
  EXPECT_EQ(classify(x, p, cfg), classify(x, p, cfg));
}

TEST(Classifier, FeatureWidth) {
  ClassifierConfig cfg;
  EXPECT_EQ(cfg.feature_dim(), 32u);
  ParamStore p;
  Rng rng(1);
  init_classifier(p, cfg, rng);
  Graph g;
  VarMap v = bind(g, p, false);
  auto out = classify(v, cfg, g.constant(Tensor({128, 64}, 0.5)));
  EXPECT_EQ(out.features.shape(), (Shape{1, 32}));
  EXPECT_EQ(out.logits.shape(), (Shape{1, 4}));
}

TEST(Classifier, ShapeMismatchRejected) {
  ClassifierConfig cfg;
  ParamStore p;
  Rng rng(1);
  init_classifier(p, cfg, rng);
  EXPECT_THROW(classify(Tensor({128, 63}, 0.0), p, cfg), ContractError);
  EXPECT_THROW(classify(Tensor({64, 64}, 0.0), p, cfg), ContractError);
}

TEST(Classifier, IndivisiblePoolingRejected) {
  ClassifierConfig cfg;
  cfg.samples = 100;
  ParamStore p;
  Rng rng(1);
  EXPECT_THROW(init_classifier(p, cfg, rng), ContractError);
}

TEST(CrossEntropy, CertainLabelGivesZero) {
  Graph g;
  EXPECT_EQ(cross_entropy(g.constant(Tensor::matrix({{0, 1, 0}})), 1).value()[0], 0.0);
}

TEST(CrossEntropy, UniformOverFourIsLogFour) {
  Graph g;
  EXPECT_NEAR(cross_entropy(g.constant(Tensor({1, 4}, 0.25)), 2).value()[0], std::log(4.0), 1e-15);
  EXPECT_NEAR(std::log(4.0), 1.3863, 1e-4);
}

TEST(CrossEntropy, ZeroProbabilityClamped) {
  Graph g;
  EXPECT_NEAR(cross_entropy(g.constant(Tensor::matrix({{1, 0}})), 1).value()[0], -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, LabelOutOfRangeRejected) {
  Graph g;
  EXPECT_THROW(cross_entropy(g.constant(Tensor({1, 4}, 0.25)), 4), ContractError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto res = check_gradients(
      [](Graph&, std::span<const Var> in) { return cross_entropy(ops::softmax_rows(in[0]), 1); },
      {uniform({1, 5}, rng)});
  EXPECT_LT(res.max_rel_error, 1e-4) << res.summary();
}

TEST(Classifier, EveryParameterReceivesGradient) {
  ClassifierConfig cfg = small_config();
  ParamStore p;
  Rng rng(5);
  init_classifier(p, cfg, rng);
  std::mt19937_64 drng(6);
  std::vector<Tensor> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(uniform({32, 3}, drng));
  ParamLeaves leaves(p);
  auto res = check_gradients(
      [&](Graph& g, std::span<const Var> in) {
        VarMap v = leaves.vars(in);
        Var total = g.constant(Tensor::scalar(0.0));
        for (std::size_t i = 0; i < batch.size(); ++i)
          total = ops::add(total, cross_entropy(classify(v, cfg, g.constant(batch[i])).probs, i % 3));
        return total;
      },
      leaves.inputs);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.summary();
  for (std::size_t i = 0; i < leaves.names.size(); ++i) EXPECT_TRUE(res.input_has_signal[i]) << leaves.names[i];
}

TEST(Classifier, OverfitsSixteenSamples) {
  // Four classes separated by dominant frequency on a random topography.
  ClassifierConfig cfg;
  cfg.channels = 8;
  ParamStore p;
  Rng rng(7);
  init_classifier(p, cfg, rng);
  std::mt19937_64 drng(8);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<Tensor> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < 16; ++i) {
    const std::size_t label = i % 4;
    const double freq = 4.0 + 5.0 * static_cast<double>(label);
    Tensor x({128, 8});
    Tensor topo = uniform({8}, drng, 0.5, 1.5);
    const double phase = uniform({1}, drng, 0, 6.28)[0];
    for (std::size_t t = 0; t < 128; ++t)
      for (std::size_t c = 0; c < 8; ++c)
        x(t, c) = topo[c] * std::sin(2 * std::numbers::pi * freq * t / 128.0 + phase) + noise(drng);
    xs.push_back(x);
    ys.push_back(label);
  }

  const double lr = 0.05, momentum = 0.9;
  std::map<std::string, Tensor> velocity;
  for (const auto& [name, t] : p.tensors()) velocity.emplace(name, Tensor(t.shape(), 0.0));
  auto accuracy = [&] {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Tensor probs = classify(xs[i], p, cfg);
      std::size_t arg = 0;
      for (std::size_t k = 1; k < 4; ++k)
        if (probs[k] > probs[arg]) arg = k;
      ok += arg == ys[i];
    }
    return static_cast<double>(ok) / static_cast<double>(xs.size());
  };
  int steps = 0;
  for (; steps < 500 && accuracy() < 1.0; ++steps) {
    Graph g;
    VarMap v = bind(g, p, true);
    Var loss = g.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < xs.size(); ++i)
      loss = ops::add(loss, cross_entropy(classify(v, cfg, g.constant(xs[i])).probs, ys[i]));
    loss = ops::scale(loss, 1.0 / static_cast<double>(xs.size()));
    g.backward(loss);
    for (auto& [name, t] : p.tensors()) {
      const Tensor& grad = g.grad(v[name]);
      Tensor& vel = velocity.at(name);
      for (std::size_t k = 0; k < t.size(); ++k) {
        vel[k] = momentum * vel[k] - lr * grad[k];
        t[k] += vel[k];
      }
    }
  }
  EXPECT_EQ(accuracy(), 1.0) << "after " << steps << " steps";
}
