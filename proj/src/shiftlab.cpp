#include "imac/shiftlab.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "imac/error.hpp"
#include "imac/params.hpp"

namespace imac {
namespace {

using json = nlohmann::json;
constexpr char kDatasetMagic[8] = {'I', 'M', 'A', 'C', 'D', 'S', 'E', 'T'};
constexpr std::uint32_t kDatasetVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(std::string("dataset: truncated ") + what);
  return v;
}

Rng sub_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return Rng(seq);
}

double sinc(double x) { return x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x); }

// Mirror index into [0, n) without repeating the edge sample.
std::size_t mirror(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

}  // namespace

// ---- datasets ---------------------------------------------------------------

void Dataset::validate() const {
  if (samples == 0 || num_classes == 0) throw ValidationError("dataset: empty geometry");
  std::set<std::string> known(channel_names.begin(), channel_names.end());
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    const auto& r = recordings[i];
    r.validate();
    if (r.num_samples() != samples) {
      throw ValidationError("dataset: recording " + std::to_string(i) + " has " + std::to_string(r.num_samples()) +
                            " samples, expected " + std::to_string(samples));
    }
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= num_classes) {
      throw ValidationError("dataset: recording " + std::to_string(i) + " label out of range");
    }
    for (const auto& name : r.channel_names)
      if (!known.count(name)) throw ValidationError("dataset: unknown channel " + name);
  }
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  for (const auto& r : recordings) out.push_back(r.label);
  return out;
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.channel_names.size(); ++i) index[ds.channel_names[i]] = i;
  json header;
  header["version"] = kDatasetVersion;
  header["channel_names"] = ds.channel_names;
  header["sample_rate_hz"] = ds.sample_rate_hz;
  header["samples"] = ds.samples;
  header["num_classes"] = ds.num_classes;
  header["count"] = ds.recordings.size();
  header["description"] = ds.description;
  json recs = json::array();
  for (const auto& r : ds.recordings) {
    std::vector<std::size_t> chans;
    for (const auto& n : r.channel_names) {
      auto it = index.find(n);
      if (it == index.end()) throw ValidationError("write_dataset: channel " + n + " not in the dataset layout");
      chans.push_back(it->second);
    }
    recs.push_back({{"channels", chans}, {"subject", r.subject_id}, {"domain", r.domain_id}});
  }
  header["recordings"] = recs;
  const std::string text = header.dump();
  out.write(kDatasetMagic, sizeof(kDatasetMagic));
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& r : ds.recordings)
    for (double v : r.samples.values()) put<float>(out, static_cast<float>(v));
  for (const auto& r : ds.recordings) put<std::int32_t>(out, r.label);
  if (!out) throw FormatError("write_dataset: stream failure");
}

Dataset read_dataset(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kDatasetMagic, 8) != 0) throw FormatError("dataset: bad magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in, "header length");
  if (len > (1u << 30)) throw FormatError("dataset: implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("dataset: truncated header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset: bad header: ") + e.what());
  }
  Dataset ds;
  try {
    ds.channel_names = header.at("channel_names").get<std::vector<std::string>>();
    ds.sample_rate_hz = header.at("sample_rate_hz").get<double>();
    ds.samples = header.at("samples").get<std::size_t>();
    ds.num_classes = header.at("num_classes").get<std::size_t>();
    ds.description = header.value("description", "");
    for (const auto& r : header.at("recordings")) {
      EEGRecording rec;
      for (std::size_t c : r.at("channels").get<std::vector<std::size_t>>()) {
        if (c >= ds.channel_names.size()) throw FormatError("dataset: channel index out of range");
        rec.channel_names.push_back(ds.channel_names[c]);
      }
      rec.subject_id = r.value("subject", "");
      rec.domain_id = r.value("domain", "");
      rec.sample_rate_hz = ds.sample_rate_hz;
      ds.recordings.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset: malformed header: ") + e.what());
  }
  if (ds.recordings.size() != header.value("count", ds.recordings.size())) {
    throw FormatError("dataset: recording count mismatch");
  }
  for (auto& rec : ds.recordings) {
    if (rec.channel_names.empty() || ds.samples == 0) throw FormatError("dataset: empty recording");
    rec.samples = Tensor({ds.samples, rec.channel_names.size()});
    for (double& v : rec.samples.storage()) v = static_cast<double>(get<float>(in, "samples"));
  }
  for (auto& rec : ds.recordings) rec.label = get<std::int32_t>(in, "labels");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("dataset: trailing bytes");
  try {
    ds.validate();
  } catch (const ValidationError& e) {
    throw FormatError(e.what());
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  write_dataset(out, ds);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  return read_dataset(in);
}

Dataset select_domain(const Dataset& ds, const std::string& domain, bool keep) {
  Dataset out = ds;
  out.recordings.clear();
  for (const auto& r : ds.recordings)
    if ((r.domain_id == domain) == keep) out.recordings.push_back(r);
  return out;
}

// ---- synthetic generator ----------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic: need at least two classes");
  if (rank < num_classes) throw ConfigError("synthetic: rank must cover one source per class");
  if (rank >= kUnifiedChannels) throw ConfigError("synthetic: latent rank must be below the channel count");
  if (samples == 0 || !(sample_rate_hz > 0)) throw ConfigError("synthetic: empty time axis");
  if (!(noise >= 0)) throw ConfigError("synthetic: noise must be nonnegative");
  if (!(distractor_gain >= 0) || !(roughness >= 0)) throw ConfigError("synthetic: negative distractor gain or roughness");
  if (class_frequencies().back() >= sample_rate_hz / 2) throw ConfigError("synthetic: class frequency above Nyquist");
  if (domains.empty()) throw ConfigError("synthetic: no domains");
  for (const auto& d : domains) {
    if (!(d.channel_fraction > 0 && d.channel_fraction <= 1)) {
      throw ConfigError("synthetic: domain " + d.name + " channel fraction outside (0,1]");
    }
    if (std::lround(d.channel_fraction * kUnifiedChannels) < static_cast<long>(rank)) {
      throw ConfigError("synthetic: domain " + d.name + " records fewer channels than the latent rank");
    }
    if (d.gain_jitter < 0 || d.latency_jitter < 0) throw ConfigError("synthetic: negative jitter");
  }
}

std::vector<double> SyntheticSpec::class_frequencies() const {
  std::vector<double> f(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k)
    f[k] = num_classes == 1 ? 8.0 : 8.0 + 12.0 * static_cast<double>(k) / static_cast<double>(num_classes - 1);
  return f;
}

std::string SyntheticSpec::to_json() const {
  json j;
  j["num_classes"] = num_classes;
  j["samples"] = samples;
  j["sample_rate_hz"] = sample_rate_hz;
  j["distractor_gain"] = distractor_gain;
  j["roughness"] = roughness;
  j["rank"] = rank;
  j["noise"] = noise;
  j["seed"] = seed;
  json ds = json::array();
  for (const auto& d : domains) {
    ds.push_back({{"name", d.name},
                  {"recordings", d.recordings},
                  {"channel_fraction", d.channel_fraction},
                  {"gain_jitter", d.gain_jitter},
                  {"latency_jitter", d.latency_jitter},
                  {"regional", d.regional}});
  }
  j["domains"] = ds;
  return j.dump();
}

SyntheticSpec SyntheticSpec::benchmark(std::size_t train, std::size_t test, std::uint64_t seed) {
  SyntheticSpec s;
  s.seed = seed;
  s.roughness = 1.0;
  const std::size_t a = train / 3, b = train / 3, c = train - a - b;
  s.domains = {{"d0", a, 1.0, 0.1, 2}, {"d1", b, 0.9, 0.1, 2}, {"d2", c, 0.9, 0.1, 2},
               {kHeldOutDomain, test, 0.5, 0.15, 3, true}};
  return s;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Montage& mont = canonical_montage();
  const std::size_t n = kUnifiedChannels, r = spec.rank, K = spec.num_classes, T = spec.samples;
  std::vector<GridCell> cells;
  for (const auto& e : mont.electrodes()) cells.push_back(grid_cell(e));

  // Topographies: a positive blob with a weaker negative lobe elsewhere.
  Rng topo_rng = sub_rng(spec.seed, 1);
  std::uniform_real_distribution<double> urow(0.0, kGridRows - 1), ucol(0.0, kGridCols - 1), uwidth(1.0, 1.8);
  Tensor mixing({n, r});
  for (std::size_t k = 0; k < r; ++k) {
    const double r1 = urow(topo_rng), c1 = ucol(topo_rng), r2 = urow(topo_rng), c2 = ucol(topo_rng);
    const double w1 = uwidth(topo_rng), w2 = uwidth(topo_rng);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d1 = std::pow(cells[i].row - r1, 2) + std::pow(cells[i].col - c1, 2);
      const double d2 = std::pow(cells[i].row - r2, 2) + std::pow(cells[i].col - c2, 2);
      mixing(i, k) = std::exp(-d1 / (2 * w1 * w1)) - 0.6 * std::exp(-d2 / (2 * w2 * w2));
      ss += mixing(i, k) * mixing(i, k);
    }
    double rms = std::sqrt(ss / static_cast<double>(n));
    if (spec.roughness > 0) {
      std::normal_distribution<double> jitter(0.0, spec.roughness * rms);
      ss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        mixing(i, k) += jitter(topo_rng);
        ss += mixing(i, k) * mixing(i, k);
      }
      rms = std::sqrt(ss / static_cast<double>(n));
    }
    for (std::size_t i = 0; i < n; ++i) mixing(i, k) /= rms;
  }

  const auto freqs = spec.class_frequencies();
  const double two_pi = 2.0 * std::numbers::pi;
  SyntheticData out;
  Dataset& ds = out.dataset;
  ds.channel_names = mont.names();
  ds.sample_rate_hz = spec.sample_rate_hz;
  ds.samples = T;
  ds.num_classes = K;
  ds.description = spec.to_json();

  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    const DomainSpec& dom = spec.domains[d];
    Rng drng = sub_rng(spec.seed, 2, d);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor dmix = mixing;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = 1.0 + dom.gain_jitter * gauss(drng);
      for (std::size_t k = 0; k < r; ++k) dmix(i, k) *= g;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), drng);
    if (dom.regional) {
      std::uniform_real_distribution<double> urow2(0.0, kGridRows - 1), ucol2(0.0, kGridCols - 1);
      const double cr = urow2(drng), cc = ucol2(drng);
      auto dist = [&](std::size_t i) { return std::hypot(cells[i].row - cr, cells[i].col - cc); };
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
    }
    order.resize(static_cast<std::size_t>(std::lround(dom.channel_fraction * static_cast<double>(n))));
    std::sort(order.begin(), order.end());
    std::uniform_int_distribution<int> lat(-dom.latency_jitter, dom.latency_jitter);
    const double latency = static_cast<double>(lat(drng));

    for (std::size_t j = 0; j < dom.recordings; ++j) {
      Rng rng = sub_rng(spec.seed, 3, d, j);
      std::uniform_real_distribution<double> phase(0.0, two_pi), amp(0.5, 1.5), bgf(1.0, 25.0);
      std::normal_distribution<double> g01(0.0, 1.0);
      const int label = static_cast<int>(j % K);
      // Per source: list of (amplitude, frequency, phase) components.
      std::vector<std::vector<std::array<double, 3>>> comps(r);
      for (std::size_t k = 0; k < r; ++k) {
        if (k < K) {
          const double a = k == static_cast<std::size_t>(label) ? 1.0 + 0.1 * g01(rng) : 0.0;
          comps[k].push_back({a, freqs[k], phase(rng)});
        } else if (k < 2 * K) {
          comps[k].push_back({spec.distractor_gain * amp(rng), freqs[k - K], phase(rng)});
        } else {
          for (int b = 0; b < 3; ++b) comps[k].push_back({0.3, bgf(rng), phase(rng)});
        }
      }
      Tensor src({T, r}, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double time = (static_cast<double>(t) + latency) / spec.sample_rate_hz;
        for (std::size_t k = 0; k < r; ++k)
          for (const auto& [a, f, ph] : comps[k]) src(t, k) += a * std::sin(two_pi * f * time + ph);
      }
      EEGRecording rec;
      rec.samples = Tensor({T, order.size()});
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < order.size(); ++c) {
          double v = 0;
          for (std::size_t k = 0; k < r; ++k) v += dmix(order[c], k) * src(t, k);
          if (spec.noise > 0) v += spec.noise * g01(rng);
          rec.samples(t, c) = static_cast<double>(static_cast<float>(v));
        }
      for (std::size_t c : order) rec.channel_names.push_back(ds.channel_names[c]);
      rec.sample_rate_hz = spec.sample_rate_hz;
      rec.label = label;
      rec.domain_id = dom.name;
      rec.subject_id = dom.name + "-s" + std::to_string(j);
      ds.recordings.push_back(std::move(rec));
    }
    out.domain_channels.push_back(order);
    out.domain_mixing.push_back(dmix);
  }
  return out;
}

// ---- shifts ---------------------------------------------------------------

void ShiftSpec::validate(double fs) const {
  switch (kind) {
    case ShiftKind::kBandpass:
      if (!(low_hz > 0 && low_hz < high_hz && high_hz < fs / 2)) {
        throw ContractError("bandpass: need 0 < low < high < Nyquist (" + std::to_string(fs / 2) + " Hz), got " +
                            std::to_string(low_hz) + "-" + std::to_string(high_hz));
      }
      break;
    case ShiftKind::kNoise:
      if (!(sigma >= 0)) throw ContractError("noise: sigma must be nonnegative");
      if (mode == NoiseMode::kNarrowband && fs / 2 <= 17.0) throw ContractError("noise: narrowband needs Nyquist > 17 Hz");
      break;
    case ShiftKind::kChannelMask:
      if (!(fraction >= 0 && fraction <= 1)) throw ContractError("channel mask: fraction outside [0,1]");
      break;
  }
}

std::string ShiftSpec::label() const {
  std::ostringstream s;
  switch (kind) {
    case ShiftKind::kBandpass: s << "bandpass:" << low_hz << ":" << high_hz; break;
    case ShiftKind::kNoise: s << "noise:" << (mode == NoiseMode::kBroadband ? "broadband" : "narrowband") << ":" << sigma; break;
    case ShiftKind::kChannelMask: s << "mask:" << fraction; break;
  }
  return s.str();
}

ShiftSpec ShiftSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  ShiftSpec s;
  if (!parts.empty() && parts.back().rfind("seed=", 0) == 0) {
    try {
      s.seed = std::stoull(parts.back().substr(5));
    } catch (const std::exception&) {
      throw ConfigError("shift: bad seed in '" + text + "'");
    }
    parts.pop_back();
  }
  auto num = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("shift: bad number '" + v + "' in '" + text + "'");
    }
  };
  if (parts.size() == 3 && parts[0] == "bandpass") {
    s.kind = ShiftKind::kBandpass;
    s.low_hz = num(parts[1]);
    s.high_hz = num(parts[2]);
  } else if (parts.size() == 3 && parts[0] == "noise" && (parts[1] == "broadband" || parts[1] == "narrowband")) {
    s.kind = ShiftKind::kNoise;
    s.mode = parts[1] == "broadband" ? NoiseMode::kBroadband : NoiseMode::kNarrowband;
    s.sigma = num(parts[2]);
  } else if (parts.size() == 2 && parts[0] == "mask") {
    s.kind = ShiftKind::kChannelMask;
    s.fraction = num(parts[1]);
  } else {
    throw ConfigError("shift: cannot parse '" + text + "'");
  }
  return s;
}

std::vector<ShiftSpec> shift_battery(std::uint64_t seed) {
  std::vector<ShiftSpec> b(4);
  b[0].kind = ShiftKind::kBandpass;
  b[1].kind = ShiftKind::kNoise;
  b[1].mode = NoiseMode::kBroadband;
  b[2].kind = ShiftKind::kNoise;
  b[2].mode = NoiseMode::kNarrowband;
  b[3].kind = ShiftKind::kChannelMask;
  for (std::size_t i = 0; i < b.size(); ++i) b[i].seed = seed + i;
  return b;
}

std::vector<double> design_bandpass(double low, double high, double fs, std::size_t taps) {
  if (taps < 3 || taps % 2 == 0) throw ContractError("design_bandpass: tap count must be odd and >= 3");
  if (!(low > 0 && low < high && high < fs / 2)) throw ContractError("design_bandpass: invalid band");
  const double f1 = low / fs, f2 = high / fs;
  const double M = static_cast<double>(taps - 1);
  std::vector<double> h(taps);
  for (std::size_t i = 0; i <= taps / 2; ++i) {
    const double m = static_cast<double>(i) - M / 2;
    const double w = 0.54 - 0.46 * std::cos(2 * std::numbers::pi * static_cast<double>(i) / M);
    h[i] = h[taps - 1 - i] = w * (2 * f2 * sinc(2 * f2 * m) - 2 * f1 * sinc(2 * f1 * m));
  }
  const double g = fir_gain(h, (low + high) / 2, fs);
  for (double& x : h) x /= g;
  return h;
}

double fir_gain(const std::vector<double>& h, double f, double fs) {
  double re = 0, im = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double w = 2 * std::numbers::pi * f / fs * static_cast<double>(i);
    re += h[i] * std::cos(w);
    im -= h[i] * std::sin(w);
  }
  return std::hypot(re, im);
}

Tensor fir_filter(const Tensor& x, const std::vector<double>& h) {
  if (x.rank() != 2) throw DimensionError("fir_filter: expects T x C, got " + shape_to_string(x.shape()));
  const std::size_t T = x.rows(), C = x.cols();
  const long half = static_cast<long>(h.size() / 2);
  Tensor y({T, C}, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < h.size(); ++k) {
      const std::size_t src = mirror(static_cast<long>(t) + half - static_cast<long>(k), T);
      const double hk = h[k];
      for (std::size_t c = 0; c < C; ++c) y(t, c) += hk * x(src, c);
    }
  return y;
}

EEGRecording apply_shift(const EEGRecording& rec, const ShiftSpec& spec) {
  rec.validate();
  const double fs = rec.sample_rate_hz;
  spec.validate(fs);
  EEGRecording out = rec;
  const std::size_t T = rec.num_samples(), C = rec.num_channels();
  Rng rng(spec.seed);
  switch (spec.kind) {
    case ShiftKind::kBandpass:
      out.samples = fir_filter(rec.samples, design_bandpass(spec.low_hz, spec.high_hz, fs));
      break;
    case ShiftKind::kNoise: {
      if (spec.sigma == 0) break;
      std::normal_distribution<double> g(0.0, 1.0);
      Tensor noise({T, C});
      for (double& v : noise.storage()) v = g(rng);
      if (spec.mode == NoiseMode::kNarrowband) {
        std::uniform_real_distribution<double> centre(8.0, 16.0);
        const double fc = centre(rng);
        const auto h = design_bandpass(fc - 1.0, fc + 1.0, fs);
        double energy = 0;
        for (double v : h) energy += v * v;
        noise = fir_filter(noise, h);
        for (double& v : noise.storage()) v /= std::sqrt(energy);
      }
      for (std::size_t i = 0; i < noise.size(); ++i) out.samples[i] += spec.sigma * noise[i];
      break;
    }
    case ShiftKind::kChannelMask: {
      std::vector<std::size_t> idx(C);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(C) + 0.5)));
      for (std::size_t c : idx)
        for (std::size_t t = 0; t < T; ++t) out.samples(t, c) = 0.0;
      break;
    }
  }
  return out;
}

// ---- integrity ------------------------------------------------------------

namespace {

struct Tri {
  std::size_t a, b, c;
  double cx, cy, r2;
};

Tri make_tri(const std::vector<Point2>& p, std::size_t a, std::size_t b, std::size_t c) {
  const double ax = p[a][0], ay = p[a][1], bx = p[b][0], by = p[b][1], cx = p[c][0], cy = p[c][1];
  const double d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
  const double a2 = ax * ax + ay * ay, b2 = bx * bx + by * by, c2 = cx * cx + cy * cy;
  const double ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d;
  const double uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d;
  return {a, b, c, ux, uy, (ax - ux) * (ax - ux) + (ay - uy) * (ay - uy)};
}

bool collinear(const std::vector<Point2>& p) {
  if (p.size() < 3) return true;
  std::size_t far = 1;
  double best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double d = std::hypot(p[i][0] - p[0][0], p[i][1] - p[0][1]);
    if (d > best) best = d, far = i;
  }
  const double ux = p[far][0] - p[0][0], uy = p[far][1] - p[0][1];
  for (const auto& q : p) {
    const double cross = ux * (q[1] - p[0][1]) - uy * (q[0] - p[0][0]);
    if (std::abs(cross) > 1e-10 * best * best) return false;
  }
  return true;
}

std::vector<std::set<std::size_t>> knn_neighbors(const std::vector<Point2>& p, std::size_t k) {
  std::vector<std::set<std::size_t>> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (j != i) d.push_back({std::hypot(p[i][0] - p[j][0], p[i][1] - p[j][1]), j});
    std::sort(d.begin(), d.end());
    for (std::size_t m = 0; m < std::min(k, d.size()); ++m) out[i].insert(d[m].second);
  }
  return out;
}

}  // namespace

std::vector<std::array<std::size_t, 3>> delaunay_triangles(const std::vector<Point2>& pts) {
  const std::size_t n = pts.size();
  if (n < 3 || collinear(pts)) return {};
  double minx = pts[0][0], maxx = minx, miny = pts[0][1], maxy = miny;
  for (const auto& q : pts) {
    minx = std::min(minx, q[0]), maxx = std::max(maxx, q[0]);
    miny = std::min(miny, q[1]), maxy = std::max(maxy, q[1]);
  }
  const double span = std::max(maxx - minx, maxy - miny);
  const double mx = (minx + maxx) / 2, my = (miny + maxy) / 2;
  std::vector<Point2> p = pts;
  p.push_back({mx - 1e5 * span, my - 1e5 * span});
  p.push_back({mx + 1e5 * span, my - 1e5 * span});
  p.push_back({mx, my + 1e5 * span});
  std::vector<Tri> tris{make_tri(p, n, n + 1, n + 2)};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Tri> keep;
    std::map<std::pair<std::size_t, std::size_t>, int> edges;
    for (const Tri& t : tris) {
      const double dx = p[i][0] - t.cx, dy = p[i][1] - t.cy;
      if (dx * dx + dy * dy < t.r2 * (1 + 1e-12)) {
        for (auto [u, v] : {std::pair{t.a, t.b}, std::pair{t.b, t.c}, std::pair{t.c, t.a}})
          ++edges[{std::min(u, v), std::max(u, v)}];
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& [e, count] : edges)
      if (count == 1) keep.push_back(make_tri(p, e.first, e.second, i));
    tris = std::move(keep);
  }
  std::vector<std::array<std::size_t, 3>> out;
  for (const Tri& t : tris)
    if (t.a < n && t.b < n && t.c < n) out.push_back({t.a, t.b, t.c});
  return out;
}

std::vector<std::set<std::size_t>> delaunay_neighbors(const std::vector<Point2>& points, bool* fallback) {
  const std::size_t n = points.size();
  // Group coincident points.
  std::map<Point2, std::size_t> where;
  std::vector<Point2> uniq;
  std::vector<std::size_t> group(n);
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] = where.emplace(points[i], uniq.size());
    if (fresh) {
      uniq.push_back(points[i]);
      members.emplace_back();
    }
    group[i] = it->second;
    members[it->second].push_back(i);
  }
  const bool degenerate = uniq.size() < 3 || collinear(uniq);
  if (fallback) *fallback = degenerate;
  if (degenerate) return knn_neighbors(points, 3);

  std::vector<std::set<std::size_t>> adj(uniq.size());
  for (const auto& t : delaunay_triangles(uniq)) {
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) adj[t[a]].insert(t[b]);
  }
  std::vector<std::set<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : members[group[i]])
      if (j != i) out[i].insert(j);
    for (std::size_t g : adj[group[i]]) out[i].insert(members[g].begin(), members[g].end());
  }
  return out;
}

IntegrityReport integrity_score(const std::vector<std::vector<double>>& clean,
                                const std::vector<std::vector<double>>& shifted) {
  if (clean.size() != shifted.size()) {
    throw ContractError("integrity_score: " + std::to_string(clean.size()) + " clean vs " +
                        std::to_string(shifted.size()) + " shifted samples");
  }
  if (clean.size() < 4) throw ContractError("integrity_score: need at least 4 samples");
  const std::size_t n = clean.size(), m = clean[0].size();
  if (m == 0) throw ContractError("integrity_score: empty feature vectors");
  for (std::size_t i = 0; i < n; ++i)
    if (clean[i].size() != m || shifted[i].size() != m) throw ContractError("integrity_score: ragged features");

  Eigen::MatrixXd X(n, m), Y(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) X(i, j) = clean[i][j], Y(i, j) = shifted[i][j];
  const Eigen::RowVectorXd mu = X.colwise().mean();
  const Eigen::MatrixXd Xc = X.rowwise() - mu;
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(m, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Xc.transpose() * Xc);
  const Eigen::Index k = std::min<Eigen::Index>(2, static_cast<Eigen::Index>(m));
  for (Eigen::Index c = 0; c < k; ++c) axes.col(c) = eig.eigenvectors().col(static_cast<Eigen::Index>(m) - 1 - c);
  const Eigen::MatrixXd pc = Xc * axes;
  const Eigen::MatrixXd ps = (Y.rowwise() - mu) * axes;
  std::vector<Point2> a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = {pc(i, 0), pc(i, 1)};
    b[i] = {ps(i, 0), ps(i, 1)};
  }
  IntegrityReport rep;
  rep.points = n;
  auto na = delaunay_neighbors(a, &rep.clean_fallback);
  auto nb = delaunay_neighbors(b, &rep.shifted_fallback);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t inter = 0;
    for (std::size_t j : na[i]) inter += nb[i].count(j);
    const std::size_t uni = na[i].size() + nb[i].size() - inter;
    const double o = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    rep.overlaps.push_back(o);
    total += o;
  }
  rep.score = total / static_cast<double>(n);
  return rep;
}

}  // namespace imac
