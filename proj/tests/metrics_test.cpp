#include <gtest/gtest.h>

#include <random>

#include "imac/error.hpp"
#include "imac/metrics.hpp"

using namespace imac;

namespace {

// Reference values computed straight from the label vectors.
struct Oracle {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, kappa = 0;
};

Oracle oracle(const std::vector<int>& y, const std::vector<int>& p, int K) {
  Oracle o;
  const double n = static_cast<double>(y.size());
  double agree = 0, chance = 0;
  for (int k = 0; k < K; ++k) {
    double tp = 0, fp = 0, fn = 0, ny = 0, np = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      tp += y[i] == k && p[i] == k;
      fp += y[i] != k && p[i] == k;
      fn += y[i] == k && p[i] != k;
      ny += y[i] == k;
      np += p[i] == k;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0;
    o.precision += prec / K;
    o.recall += rec / K;
    o.f1 += (prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0) / K;
    chance += (ny / n) * (np / n);
  }
  for (std::size_t i = 0; i < y.size(); ++i) agree += y[i] == p[i];
  o.accuracy = agree / n;
  o.kappa = (o.accuracy - chance) / (1 - chance);
  return o;
}

}  // namespace

TEST(Metrics, PerfectPredictionScoresOne) {
  std::vector<int> y{0, 1, 2, 3, 0, 1, 2, 3};
  auto m = classification_metrics(y, y, 4);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  EXPECT_EQ(m.kappa, 1.0);
}

TEST(Metrics, ConstantPredictorOnBalancedTwoClassHasZeroKappa) {
  std::vector<int> y{0, 1, 0, 1, 0, 1}, p(6, 0);
  auto m = classification_metrics(y, p, 2);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(m.kappa, 0.0);
  EXPECT_DOUBLE_EQ(m.precision, 0.25);
  EXPECT_DOUBLE_EQ(m.recall, 0.5);
  EXPECT_NEAR(m.f1, (2 * 0.5 * 1.0 / 1.5) / 2, 1e-15);
}

TEST(Metrics, MatchesLabelVectorOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> y(40), p(40);
    for (auto& v : y) v = u(rng);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = u(rng) < 2 ? y[i] : u(rng);
    const auto m = classification_metrics(y, p, 4);
    const auto o = oracle(y, p, 4);
    EXPECT_NEAR(m.accuracy, o.accuracy, 1e-12);
    EXPECT_NEAR(m.precision, o.precision, 1e-12);
    EXPECT_NEAR(m.recall, o.recall, 1e-12);
    EXPECT_NEAR(m.f1, o.f1, 1e-12);
    EXPECT_NEAR(m.kappa, o.kappa, 1e-12);
  }
}

TEST(Metrics, ConfusionCountsAndContracts) {
  auto cm = confusion_matrix({0, 0, 1, 2}, {0, 1, 1, 0}, 3);
  EXPECT_EQ(cm.counts[0][0], 1u);
  EXPECT_EQ(cm.counts[0][1], 1u);
  EXPECT_EQ(cm.counts[1][1], 1u);
  EXPECT_EQ(cm.counts[2][0], 1u);
  EXPECT_EQ(cm.total(), 4u);
  EXPECT_THROW(confusion_matrix({0, 1}, {0}, 2), ContractError);
  EXPECT_THROW(confusion_matrix({0, 2}, {0, 1}, 2), ContractError);
  EXPECT_THROW(confusion_matrix({0, -1}, {0, 1}, 2), ContractError);
}
