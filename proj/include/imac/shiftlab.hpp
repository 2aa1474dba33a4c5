#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "imac/montage.hpp"

namespace imac {

// ---- datasets ---------------------------------------------------------------

// Recordings over (subsets of) the canonical layout. Every recording lists its
// channels by canonical name; channels it lacks are flagged missing.
struct Dataset {
  std::vector<std::string> channel_names;  // canonical order
  double sample_rate_hz = 128.0;
  std::size_t samples = 0;
  std::size_t num_classes = 0;
  std::string description;  // free-form JSON echo of how the data was made
  std::vector<EEGRecording> recordings;

  void validate() const;
  std::vector<int> labels() const;
};

// Binary format: "IMACDSET", u32 version, u64 header length, UTF-8 JSON
// header, float32 samples per recording (row-major T x C), int32 labels.
// Samples are stored as float32, so values must already be float-representable
// for a bit-exact round trip.
void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Recordings whose domain is (not) `domain`.
Dataset select_domain(const Dataset& ds, const std::string& domain, bool keep);

// ---- synthetic generator ----------------------------------------------------

struct DomainSpec {
  std::string name;
  std::size_t recordings = 0;
  double channel_fraction = 1.0;  // fraction of canonical channels recorded
  double gain_jitter = 0.1;       // std of per-channel multiplicative gain
  int latency_jitter = 2;         // max domain latency, in samples
  // Record the channels nearest a random scalp point instead of a random
  // subset, so the missing ones form one contiguous region.
  bool regional = false;
};

struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t samples = 128;
  double sample_rate_hz = 128.0;
  std::size_t rank = 8;
  double noise = 0.1;
  // Scale of the distractor amplitudes, drawn from U(0.5, 1.5).
  double distractor_gain = 1.0;
  // Std of independent per-channel perturbations of each topography,
  // relative to the smooth blob.
  double roughness = 0.0;
  std::uint64_t seed = 1;
  std::vector<DomainSpec> domains;

  void validate() const;
  // Class k oscillates at 8 + 12 k / (K - 1) Hz (8, 12, 16, 20 for K = 4).
  std::vector<double> class_frequencies() const;
  std::string to_json() const;

  // Three training domains (full, 90%, 90% of channels) and a held-out domain
  // recording the half of the channels nearest one scalp point. Topographies
  // are rough, so missing channels are recoverable from the latent structure
  // but not by spatial smoothing.
  static SyntheticSpec benchmark(std::size_t train, std::size_t test, std::uint64_t seed);
};

inline constexpr const char* kHeldOutDomain = "heldout";

struct SyntheticData {
  Dataset dataset;
  // Per domain: the canonical channels it records and its 64 x rank mixing
  // matrix (gains included).
  std::vector<std::vector<std::size_t>> domain_channels;
  std::vector<Tensor> domain_mixing;
};

// Latent sources: one per class oscillating at its class frequency only in
// recordings of that class, one distractor per class frequency present in
// every recording, and broadband background for any remaining rank. Sources
// mix into channels through smooth scalp topographies.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// ---- shifts ---------------------------------------------------------------

enum class ShiftKind { kBandpass, kNoise, kChannelMask };
enum class NoiseMode { kBroadband, kNarrowband };

struct ShiftSpec {
  ShiftKind kind = ShiftKind::kBandpass;
  double low_hz = 1.0;
  double high_hz = 25.0;
  double sigma = 0.1;
  NoiseMode mode = NoiseMode::kBroadband;
  double fraction = 0.5;
  std::uint64_t seed = 0;

  void validate(double sample_rate_hz) const;
  std::string label() const;

  // "bandpass:1:25", "noise:broadband:0.1", "noise:narrowband:0.1",
  // "mask:0.5"; an optional trailing ":seed=N" sets the seed.
  static ShiftSpec parse(const std::string& text);
};

// The default shift battery: 1-25 Hz band-pass, broadband and narrowband
// noise, and a 50% channel mask.
std::vector<ShiftSpec> shift_battery(std::uint64_t seed);

inline constexpr std::size_t kFirTaps = 257;

// Linear-phase windowed-sinc band-pass (Hamming), normalised to unit gain at
// the band centre.
std::vector<double> design_bandpass(double low_hz, double high_hz, double sample_rate_hz,
                                    std::size_t taps = kFirTaps);
// |H(f)| of a FIR filter.
double fir_gain(const std::vector<double>& taps, double freq_hz, double sample_rate_hz);
// Zero-phase-aligned filtering of each column with mirror extension at both
// ends, output the same length as the input.
Tensor fir_filter(const Tensor& x, const std::vector<double>& taps);

EEGRecording apply_shift(const EEGRecording& recording, const ShiftSpec& spec);

// ---- integrity ------------------------------------------------------------

using Point2 = std::array<double, 2>;

// Neighbour sets from the Delaunay triangulation. Coincident points are
// neighbours of each other and share their location's neighbours. When the
// distinct points are fewer than three or collinear, falls back to the three
// nearest neighbours and sets *fallback.
std::vector<std::set<std::size_t>> delaunay_neighbors(const std::vector<Point2>& points, bool* fallback = nullptr);

// Triangles (index triples) of the Delaunay triangulation of distinct points.
std::vector<std::array<std::size_t, 3>> delaunay_triangles(const std::vector<Point2>& points);

struct IntegrityReport {
  double score = 0.0;
  std::vector<double> overlaps;
  bool clean_fallback = false;
  bool shifted_fallback = false;
  std::size_t points = 0;
};

// Both sets are projected onto the first two principal axes of the clean set;
// each sample's overlap is the Jaccard index of its Delaunay neighbourhoods.
IntegrityReport integrity_score(const std::vector<std::vector<double>>& clean,
                                const std::vector<std::vector<double>>& shifted);

}  // namespace imac
