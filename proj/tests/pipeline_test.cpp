#include <gtest/gtest.h>

#include <algorithm>

#include "imac/error.hpp"
#include "imac/pipeline.hpp"

using namespace imac;

namespace {

struct Fixture {
  Split split;
  TrainConfig tc;
  TrainerState state;
};

// A small benchmark and a model trained for one epoch on it.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.split = split_domain(generate_synthetic(SyntheticSpec::benchmark(12, 8, 4)).dataset);
    x.tc.seed = 4;
    x.tc.epochs = 1;
    x.tc.batch_size = 4;
    x.state = fit(x.split.train, x.tc);
    return x;
  }();
  return f;
}

}  // namespace

TEST(Split, SeparatesHeldOutDomain) {
  const Split& s = fixture().split;
  EXPECT_EQ(s.train.recordings.size(), 12u);
  EXPECT_EQ(s.test.recordings.size(), 8u);
  for (const auto& r : s.test.recordings) EXPECT_EQ(r.domain_id, kHeldOutDomain);
  for (const auto& r : s.train.recordings) EXPECT_NE(r.domain_id, kHeldOutDomain);
  EXPECT_THROW(split_domain(s.train, kHeldOutDomain), ConfigError);
}

TEST(Evaluate, MetricsMatchPredictions) {
  const Fixture& f = fixture();
  const Evaluation ev = evaluate(f.state.model, f.split.test);
  ASSERT_EQ(ev.predictions.size(), 8u);
  double hits = 0;
  for (std::size_t i = 0; i < ev.truth.size(); ++i) hits += ev.truth[i] == ev.predictions[i].label;
  EXPECT_DOUBLE_EQ(ev.metrics.accuracy, hits / 8.0);
  const Evaluation again = evaluate(f.state.model, f.split.test);
  for (std::size_t i = 0; i < ev.predictions.size(); ++i) EXPECT_EQ(ev.predictions[i].probs, again.predictions[i].probs);
}

TEST(EvaluateShift, EmptyListGivesCleanRowOnly) {
  const Fixture& f = fixture();
  const auto rows = evaluate_shift(f.state.model, f.split.test, {});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].shift, "clean");
  EXPECT_EQ(rows[0].delta, 0.0);
  EXPECT_EQ(rows[0].integrity, 1.0);
}

TEST(EvaluateShift, IdentityShiftKeepsIntegrity) {
  const Fixture& f = fixture();
  ShiftSpec quiet;
  quiet.kind = ShiftKind::kNoise;
  quiet.sigma = 0.0;
  const auto rows = evaluate_shift(f.state.model, f.split.test, {quiet});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].delta, 0.0);
  EXPECT_GE(rows[1].integrity, 0.99);
}

TEST(EvaluateShift, BatteryRowsFollowTheClean) {
  const Fixture& f = fixture();
  const auto battery = shift_battery(2);
  const auto rows = evaluate_shift(f.state.model, f.split.test, battery);
  ASSERT_EQ(rows.size(), battery.size() + 1);
  for (std::size_t i = 0; i < battery.size(); ++i) {
    EXPECT_EQ(rows[i + 1].shift, battery[i].label());
    EXPECT_DOUBLE_EQ(rows[i + 1].delta, rows[i + 1].accuracy - rows[0].accuracy);
    EXPECT_GE(rows[i + 1].integrity, 0.0);
    EXPECT_LE(rows[i + 1].integrity, 1.0);
  }
}

TEST(ShiftDataset, RecordingsLoseDifferentChannels) {
  const Dataset& test = fixture().split.test;
  ShiftSpec mask;
  mask.kind = ShiftKind::kChannelMask;
  mask.fraction = 0.5;
  mask.seed = 3;
  const Dataset shifted = shift_dataset(test, mask);
  ASSERT_EQ(shifted.recordings.size(), test.recordings.size());
  auto dead = [](const EEGRecording& r) {
    std::vector<bool> out(r.num_channels(), true);
    for (std::size_t c = 0; c < r.num_channels(); ++c)
      for (std::size_t t = 0; t < r.num_samples(); ++t) out[c] = out[c] && r.samples(t, c) == 0.0;
    return out;
  };
  bool differ = false;
  for (std::size_t i = 0; i < shifted.recordings.size(); ++i) {
    const auto d = dead(shifted.recordings[i]);
    EXPECT_EQ(std::count(d.begin(), d.end(), true), static_cast<long>(test.recordings[i].num_channels() / 2));
    differ |= d != dead(shifted.recordings[0]);
  }
  EXPECT_TRUE(differ);
  EXPECT_EQ(shift_dataset(test, mask).recordings[1].samples, shifted.recordings[1].samples);
}

TEST(MaskSweep, SingleRatioGivesSingleRowAndReplays) {
  const Fixture& f = fixture();
  std::size_t seen = 0;
  const auto a = mask_sweep(f.split.train, f.split.test, f.tc, {0.3},
                            [&](const SweepRow& row, const TrainerState& st) {
                              ++seen;
                              EXPECT_EQ(row.ratio, 0.3);
                              EXPECT_EQ(st.config.mask_ratio, 0.3);
                            });
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(seen, 1u);
  const auto b = mask_sweep(f.split.train, f.split.test, f.tc, {0.3});
  EXPECT_EQ(a[0].accuracy, b[0].accuracy);
  EXPECT_THROW(mask_sweep(f.split.train, f.split.test, f.tc, {1.2}), ConfigError);
}

TEST(MaskSweep, DefaultRatios) {
  EXPECT_EQ(kDefaultMaskRatios, (std::vector<double>{0.05, 0.10, 0.30, 0.50, 0.70, 0.80}));
}
