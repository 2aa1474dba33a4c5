#include "imac/shiftlab.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include "imac/error.hpp"

using namespace imac;

namespace {

double dtft_gain(const std::vector<double>& h, double f, double fs) {
  std::complex<double> acc = 0;
  for (std::size_t n = 0; n < h.size(); ++n)
    acc += h[n] * std::polar(1.0, -2.0 * std::numbers::pi * f / fs * static_cast<double>(n));
  return std::abs(acc);
}

EEGRecording tone(double freq, std::size_t T, std::size_t C = 1, double fs = 128.0) {
  EEGRecording r;
  r.samples = Tensor({T, C});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c)
      r.samples(t, c) = std::sin(2 * std::numbers::pi * freq * static_cast<double>(t) / fs + 0.3 * c);
  for (std::size_t c = 0; c < C; ++c) r.channel_names.push_back(canonical_montage().names()[c]);
  r.sample_rate_hz = fs;
  return r;
}

double rms(const Tensor& x, std::size_t from, std::size_t to, std::size_t col = 0) {
  double s = 0;
  for (std::size_t t = from; t < to; ++t) s += x(t, col) * x(t, col);
  return std::sqrt(s / static_cast<double>(to - from));
}

double power_at(const Tensor& x, std::size_t col, double f, double fs) {
  std::complex<double> acc = 0;
  for (std::size_t t = 0; t < x.rows(); ++t)
    acc += x(t, col) * std::polar(1.0, -2.0 * std::numbers::pi * f * static_cast<double>(t) / fs);
  return std::norm(acc) / static_cast<double>(x.rows());
}

SyntheticSpec small_spec(std::uint64_t seed, double noise = 0.1) {
  SyntheticSpec s = SyntheticSpec::benchmark(120, 40, seed);
  s.noise = noise;
  return s;
}

std::size_t hull_size_oracle(std::vector<Point2> p) {
  std::sort(p.begin(), p.end());
  std::vector<Point2> h(2 * p.size());
  std::size_t k = 0;
  auto cross = [](const Point2& o, const Point2& a, const Point2& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i - 1]) <= 0) --k;
    h[k++] = p[i - 1];
  }
  return k - 1;
}

}  // namespace

// ---- generator ---------------------------------------------------------------

TEST(Synthetic, SameSeedSameData) {
  auto a = generate_synthetic(small_spec(5));
  auto b = generate_synthetic(small_spec(5));
  ASSERT_EQ(a.dataset.recordings.size(), b.dataset.recordings.size());
  for (std::size_t i = 0; i < a.dataset.recordings.size(); ++i) {
    EXPECT_EQ(a.dataset.recordings[i].samples, b.dataset.recordings[i].samples);
    EXPECT_EQ(a.dataset.recordings[i].channel_names, b.dataset.recordings[i].channel_names);
  }
  auto c = generate_synthetic(small_spec(6));
  EXPECT_NE(a.dataset.recordings[0].samples, c.dataset.recordings[0].samples);
}

TEST(Synthetic, BalancedLabelsAndDomainLayout) {
  auto data = generate_synthetic(small_spec(5));
  std::map<std::string, std::vector<int>> counts;
  for (const auto& r : data.dataset.recordings) {
    auto& v = counts[r.domain_id];
    v.resize(4);
    ++v[static_cast<std::size_t>(r.label)];
    if (r.domain_id == kHeldOutDomain) EXPECT_EQ(r.num_channels(), 32u);
    if (r.domain_id == "d0") EXPECT_EQ(r.num_channels(), 64u);
    if (r.domain_id == "d1") EXPECT_EQ(r.num_channels(), 58u);
  }
  for (const auto& [dom, v] : counts)
    for (int c : v) EXPECT_EQ(c, v[0]) << dom;
  EXPECT_EQ(counts.size(), 4u);
}

TEST(Synthetic, ClassSpectraDifferAtClassFrequencies) {
  auto spec = small_spec(7);
  auto data = generate_synthetic(spec);
  const auto freqs = spec.class_frequencies();
  const double fs = spec.sample_rate_hz;
  // Mean per-class power at each class frequency and the noise floor away
  // from every oscillator.
  std::vector<std::vector<double>> mean(4, std::vector<double>(4, 0.0));
  std::vector<int> count(4, 0);
  double floor = 0;
  int floor_n = 0;
  for (const auto& r : data.dataset.recordings) {
    if (r.domain_id != "d0") continue;
    ++count[r.label];
    for (std::size_t c = 0; c < r.num_channels(); ++c) {
      for (std::size_t k = 0; k < 4; ++k) mean[r.label][k] += power_at(r.samples, c, freqs[k], fs) / 64.0;
      for (double f : {36.0, 44.0, 52.0, 60.0}) floor += power_at(r.samples, c, f, fs), ++floor_n;
    }
  }
  floor /= floor_n;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t k = 0; k < 4; ++k) mean[c][k] /= count[c];
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t other = 0; other < 4; ++other) {
      if (other == k) continue;
      EXPECT_GE(mean[k][k] - mean[other][k], 3.0 * floor) << "class " << k << " vs " << other;
    }
}

TEST(Synthetic, MaskedChannelsRecoverableByLeastSquares) {
  auto spec = small_spec(8, 0.0);
  auto data = generate_synthetic(spec);
  const Tensor& A = data.domain_mixing[0];  // d0 records every channel
  Eigen::MatrixXd M(64, spec.rank);
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t k = 0; k < spec.rank; ++k) M(i, k) = A(i, k);
  // r observed channels chosen by column-pivoted QR of M^T (full mixing rank).
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M.transpose());
  ASSERT_EQ(qr.rank(), static_cast<Eigen::Index>(spec.rank));
  std::vector<std::size_t> observed;
  for (std::size_t k = 0; k < spec.rank; ++k) observed.push_back(qr.colsPermutation().indices()[k]);
  std::mt19937_64 rng(3);
  std::vector<std::size_t> half(64);
  std::iota(half.begin(), half.end(), 0);
  std::shuffle(half.begin(), half.end(), rng);
  half.resize(32);

  for (const auto& obs : {observed, half}) {
    Eigen::MatrixXd Mo(obs.size(), spec.rank);
    for (std::size_t i = 0; i < obs.size(); ++i) Mo.row(i) = M.row(obs[i]);
    const Eigen::MatrixXd W = M * Mo.completeOrthogonalDecomposition().pseudoInverse();
    double err = 0, ref = 0;
    for (const auto& r : data.dataset.recordings) {
      if (r.domain_id != "d0") continue;
      for (std::size_t t = 0; t < r.num_samples(); ++t) {
        Eigen::VectorXd xo(obs.size());
        for (std::size_t i = 0; i < obs.size(); ++i) xo[i] = r.samples(t, obs[i]);
        const Eigen::VectorXd est = W * xo;
        for (std::size_t c = 0; c < 64; ++c) {
          err += std::pow(est[c] - r.samples(t, c), 2);
          ref += std::pow(r.samples(t, c), 2);
        }
      }
    }
    EXPECT_LT(std::sqrt(err / ref), 1e-6) << obs.size() << " observed channels";
  }
}

TEST(Synthetic, LinearProbeSeparatesClasses) {
  auto spec = SyntheticSpec::benchmark(400, 100, 11);
  auto data = generate_synthetic(spec);
  const auto freqs = spec.class_frequencies();
  std::map<std::string, std::size_t> dom_index;
  for (std::size_t d = 0; d < spec.domains.size(); ++d) dom_index[spec.domains[d].name] = d;
  std::map<std::string, std::size_t> canon;
  for (std::size_t i = 0; i < 64; ++i) canon[data.dataset.channel_names[i]] = i;

  // Features: band power at each class frequency of the sources demixed with
  // the recording domain's known mixing, restricted to recorded channels.
  auto features = [&](const EEGRecording& r) {
    const Tensor& A = data.domain_mixing[dom_index.at(r.domain_id)];
    Eigen::MatrixXd Mo(r.num_channels(), spec.rank);
    for (std::size_t i = 0; i < r.num_channels(); ++i)
      for (std::size_t k = 0; k < spec.rank; ++k) Mo(i, k) = A(canon.at(r.channel_names[i]), k);
    const Eigen::MatrixXd P = Mo.completeOrthogonalDecomposition().pseudoInverse();
    Tensor src({r.num_samples(), spec.rank}, 0.0);
    for (std::size_t t = 0; t < r.num_samples(); ++t)
      for (std::size_t k = 0; k < spec.rank; ++k)
        for (std::size_t i = 0; i < r.num_channels(); ++i) src(t, k) += P(k, i) * r.samples(t, i);
    Eigen::VectorXd f(spec.rank * freqs.size() + 1);
    std::size_t j = 0;
    for (std::size_t k = 0; k < spec.rank; ++k)
      for (double fr : freqs) f[j++] = power_at(src, k, fr, spec.sample_rate_hz);
    f[j] = 1.0;
    return f;
  };
  std::vector<Eigen::VectorXd> xtr, xte;
  std::vector<int> ytr, yte;
  for (const auto& r : data.dataset.recordings) {
    if (r.domain_id == kHeldOutDomain) {
      xte.push_back(features(r));
      yte.push_back(r.label);
    } else {
      xtr.push_back(features(r));
      ytr.push_back(r.label);
    }
  }
  Eigen::MatrixXd X(xtr.size(), xtr[0].size()), Y = Eigen::MatrixXd::Zero(xtr.size(), 4);
  for (std::size_t i = 0; i < xtr.size(); ++i) X.row(i) = xtr[i], Y(i, ytr[i]) = 1.0;
  const Eigen::MatrixXd W = X.completeOrthogonalDecomposition().solve(Y);
  int ok = 0;
  for (std::size_t i = 0; i < xte.size(); ++i) {
    Eigen::Index arg;
    (xte[i].transpose() * W).maxCoeff(&arg);
    ok += arg == yte[i];
  }
  EXPECT_GE(static_cast<double>(ok) / xte.size(), 0.95);
}

TEST(Synthetic, InvalidSpecRejected) {
  auto s = small_spec(1);
  s.rank = 64;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec(1);
  s.domains[0].channel_fraction = 0.1;
  EXPECT_THROW(s.validate(), ConfigError);
}

// ---- dataset format ----------------------------------------------------------

TEST(DatasetFile, RoundTripIsBitExact) {
  auto data = generate_synthetic(small_spec(9));
  std::stringstream a;
  write_dataset(a, data.dataset);
  const std::string bytes = a.str();
  Dataset back = read_dataset(a);
  ASSERT_EQ(back.recordings.size(), data.dataset.recordings.size());
  for (std::size_t i = 0; i < back.recordings.size(); ++i) {
    const auto& x = back.recordings[i];
    const auto& y = data.dataset.recordings[i];
    EXPECT_EQ(x.samples, y.samples);
    EXPECT_EQ(x.channel_names, y.channel_names);
    EXPECT_EQ(x.label, y.label);
    EXPECT_EQ(x.domain_id, y.domain_id);
  }
  std::stringstream b;
  write_dataset(b, back);
  EXPECT_EQ(b.str(), bytes);
}

TEST(DatasetFile, BadMagicRejected) {
  auto data = generate_synthetic(small_spec(9));
  std::stringstream a;
  write_dataset(a, data.dataset);
  std::string bytes = a.str();
  bytes[0] = 'X';
  std::stringstream in(bytes);
  EXPECT_THROW(read_dataset(in), FormatError);
}

TEST(DatasetFile, TruncationRejected) {
  auto data = generate_synthetic(small_spec(9));
  std::stringstream a;
  write_dataset(a, data.dataset);
  std::string bytes = a.str();
  std::stringstream in(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_dataset(in), FormatError);
  std::stringstream header_cut(bytes.substr(0, 30));
  EXPECT_THROW(read_dataset(header_cut), FormatError);
}

TEST(DatasetFile, SelectDomainSplits) {
  auto data = generate_synthetic(small_spec(9));
  auto test = select_domain(data.dataset, kHeldOutDomain, true);
  auto train = select_domain(data.dataset, kHeldOutDomain, false);
  EXPECT_EQ(test.recordings.size(), 40u);
  EXPECT_EQ(train.recordings.size(), 120u);
}

// ---- shifts ------------------------------------------------------------------

TEST(Bandpass, GainMatchesIndependentDtft) {
  const auto h = design_bandpass(1.0, 25.0, 128.0);
  ASSERT_EQ(h.size(), 257u);
  for (double f = 0.0; f <= 64.0; f += 0.5) EXPECT_NEAR(fir_gain(h, f, 128.0), dtft_gain(h, f, 128.0), 1e-12);
  EXPECT_GE(dtft_gain(h, 10.0, 128.0), 0.9);
  EXPECT_LE(dtft_gain(h, 40.0, 128.0), 0.1);
}

TEST(Bandpass, LinearPhaseSymmetry) {
  const auto h = design_bandpass(1.0, 25.0, 128.0);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_DOUBLE_EQ(h[i], h[h.size() - 1 - i]);
}

TEST(Bandpass, TenHertzPassesFortyHertzStops) {
  ShiftSpec s;  // 1-25 Hz
  for (std::size_t T : {128u, 1024u}) {
    auto in10 = tone(10.0, T), in40 = tone(40.0, T);
    auto out10 = apply_shift(in10, s), out40 = apply_shift(in40, s);
    EXPECT_GE(rms(out10.samples, 0, T), 0.9 * rms(in10.samples, 0, T)) << T;
    EXPECT_LE(rms(out40.samples, 0, T), 0.1 * rms(in40.samples, 0, T)) << T;
  }
}

TEST(Bandpass, WideBandIsNearIdentity) {
  ShiftSpec s;
  s.low_hz = 0.5;
  s.high_hz = 63.5;
  const auto h = design_bandpass(s.low_hz, s.high_hz, 128.0);
  for (double f = 4.0; f <= 60.0; f += 0.25) EXPECT_NEAR(fir_gain(h, f, 128.0), 1.0, 1e-3) << f;
}

TEST(Bandpass, InvalidBandRejected) {
  ShiftSpec s;
  s.high_hz = 70.0;
  EXPECT_THROW(apply_shift(tone(10, 128), s), ContractError);
  s.high_hz = 0.5;
  EXPECT_THROW(apply_shift(tone(10, 128), s), ContractError);
}

TEST(NoiseShift, ZeroSigmaIsIdentity) {
  ShiftSpec s = ShiftSpec::parse("noise:broadband:0");
  auto r = tone(10, 128, 3);
  EXPECT_EQ(apply_shift(r, s).samples, r.samples);
}

TEST(NoiseShift, BroadbandHasConfiguredSigma) {
  ShiftSpec s = ShiftSpec::parse("noise:broadband:0.5:seed=4");
  EEGRecording r = tone(10, 4096, 1);
  for (double& v : r.samples.storage()) v = 0;
  auto out = apply_shift(r, s);
  EXPECT_NEAR(rms(out.samples, 0, 4096), 0.5, 0.02);
}

TEST(NoiseShift, NarrowbandConcentratesPower) {
  ShiftSpec s = ShiftSpec::parse("noise:narrowband:0.3:seed=9");
  EEGRecording r = tone(10, 2048, 2);
  for (double& v : r.samples.storage()) v = 0;
  auto out = apply_shift(r, s);
  double in_band = 0, total = 0;
  for (double f = 0.5; f < 64; f += 0.5) {
    const double p = power_at(out.samples, 0, f, 128.0);
    total += p;
    if (f >= 6.5 && f <= 17.5) in_band += p;
  }
  EXPECT_GT(in_band / total, 0.9);
  EXPECT_NEAR(rms(out.samples, 0, 2048), 0.3, 0.06);
}

TEST(NoiseShift, SeededAndReproducible) {
  ShiftSpec s = ShiftSpec::parse("noise:narrowband:0.3:seed=2");
  auto r = tone(10, 128, 4);
  EXPECT_EQ(apply_shift(r, s).samples, apply_shift(r, s).samples);
}

TEST(ChannelMaskShift, HalfOf64ZeroesExactly32) {
  ShiftSpec s = ShiftSpec::parse("mask:0.5:seed=3");
  auto r = tone(10, 128, 64);
  auto out = apply_shift(r, s);
  int zero = 0;
  for (std::size_t c = 0; c < 64; ++c) {
    bool all = true;
    for (std::size_t t = 0; t < 128; ++t) all &= out.samples(t, c) == 0.0;
    zero += all;
    if (!all)
      for (std::size_t t = 0; t < 128; ++t) ASSERT_EQ(out.samples(t, c), r.samples(t, c));
  }
  EXPECT_EQ(zero, 32);
}

TEST(ChannelMaskShift, ZeroFractionIsIdentity) {
  auto r = tone(10, 128, 8);
  EXPECT_EQ(apply_shift(r, ShiftSpec::parse("mask:0")).samples, r.samples);
}

TEST(ShiftSpecParse, LabelsRoundTrip) {
  for (const auto& s : shift_battery(1)) EXPECT_EQ(ShiftSpec::parse(s.label()).label(), s.label());
  EXPECT_THROW(ShiftSpec::parse("lowpass:3"), ConfigError);
  EXPECT_THROW(ShiftSpec::parse("mask:abc"), ConfigError);
}

// ---- Delaunay and integrity -------------------------------------------------

TEST(Delaunay, SquareWithCentre) {
  std::vector<Point2> p{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}};
  auto nb = delaunay_neighbors(p);
  EXPECT_EQ(nb[4], (std::set<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(delaunay_triangles(p).size(), 4u);
}

TEST(Delaunay, EmptyCircumcircleAndEulerCount) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Point2> p(40);
    for (auto& q : p) q = {u(rng), u(rng)};
    auto tris = delaunay_triangles(p);
    EXPECT_EQ(tris.size(), 2 * p.size() - 2 - hull_size_oracle(p));
    for (const auto& t : tris) {
      const auto &a = p[t[0]], &b = p[t[1]], &c = p[t[2]];
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (i == t[0] || i == t[1] || i == t[2]) continue;
        // In-circle determinant, sign-corrected for orientation.
        const double adx = a[0] - p[i][0], ady = a[1] - p[i][1];
        const double bdx = b[0] - p[i][0], bdy = b[1] - p[i][1];
        const double cdx = c[0] - p[i][0], cdy = c[1] - p[i][1];
        const double det = (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) -
                           (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady) +
                           (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
        const double orient = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        EXPECT_LE(det * (orient > 0 ? 1 : -1), 1e-12);
      }
    }
  }
}

TEST(Delaunay, CollinearFallsBackToThreeNearest) {
  std::vector<Point2> p;
  for (int i = 0; i < 6; ++i) p.push_back({static_cast<double>(i), 2.0 * i});
  bool fallback = false;
  auto nb = delaunay_neighbors(p, &fallback);
  EXPECT_TRUE(fallback);
  EXPECT_EQ(nb[0], (std::set<std::size_t>{1, 2, 3}));
  for (const auto& s : nb) EXPECT_EQ(s.size(), 3u);
}

TEST(Delaunay, CoincidentPointsShareNeighbourhoods) {
  std::vector<Point2> p{{0, 0}, {1, 0}, {0, 1}, {1, 1}, {1, 1}};
  bool fallback = true;
  auto nb = delaunay_neighbors(p, &fallback);
  EXPECT_FALSE(fallback);
  EXPECT_TRUE(nb[3].count(4));
  EXPECT_TRUE(nb[4].count(3));
  EXPECT_EQ(nb[1].count(3), nb[1].count(4));
}

TEST(Integrity, IdenticalSetsScoreOne) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> f(50, std::vector<double>(8));
  for (auto& v : f)
    for (double& x : v) x = g(rng);
  auto rep = integrity_score(f, f);
  EXPECT_EQ(rep.score, 1.0);
  EXPECT_EQ(rep.overlaps.size(), 50u);
  EXPECT_FALSE(rep.clean_fallback);
}

TEST(Integrity, RandomPermutationsScoreLow) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> f(64, std::vector<double>(2));
    for (auto& v : f)
      for (double& x : v) x = g(rng);
    auto perm = f;
    std::shuffle(perm.begin(), perm.end(), rng);
    worst = std::max(worst, integrity_score(f, perm).score);
  }
  EXPECT_LE(worst, 0.5);
}

TEST(Integrity, SymmetricAndMeanOfOverlaps) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> a(30, std::vector<double>(2)), b = a;
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 2; ++j) a[i][j] = g(rng), b[i][j] = a[i][j] + 0.3 * g(rng);
  auto ab = integrity_score(a, b), ba = integrity_score(b, a);
  EXPECT_NEAR(ab.score, ba.score, 1e-12);
  EXPECT_GE(ab.score, 0.0);
  EXPECT_LE(ab.score, 1.0);
  double m = 0;
  for (double o : ab.overlaps) m += o;
  EXPECT_NEAR(ab.score, m / 30.0, 1e-15);
}

TEST(Integrity, ContractViolations) {
  std::vector<std::vector<double>> a(5, std::vector<double>(3, 1.0)), b(4, std::vector<double>(3, 1.0));
  EXPECT_THROW(integrity_score(a, b), ContractError);
  std::vector<std::vector<double>> three(3, std::vector<double>(3, 1.0));
  EXPECT_THROW(integrity_score(three, three), ContractError);
}
