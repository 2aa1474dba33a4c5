#include "imac/montage.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "imac/error.hpp"

namespace imac {

Montage::Montage(std::vector<Electrode> electrodes) : electrodes_(std::move(electrodes)) {
  std::set<std::string> seen;
  for (const auto& e : electrodes_) {
    if (!seen.insert(e.name).second) throw ValidationError("montage: duplicate electrode '" + e.name + "'");
    if (!(e.x_norm >= 0.0 && e.x_norm <= 1.0 && e.y_norm >= 0.0 && e.y_norm <= 1.0)) {
      throw ValidationError("montage: electrode '" + e.name + "' has coordinates outside [0,1]");
    }
  }
}

const Electrode* Montage::find(const std::string& name) const {
  for (const auto& e : electrodes_)
    if (e.name == name) return &e;
  return nullptr;
}

std::optional<std::size_t> Montage::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < electrodes_.size(); ++i)
    if (electrodes_[i].name == name) return i;
  return std::nullopt;
}

std::vector<std::string> Montage::names() const {
  std::vector<std::string> out;
  out.reserve(electrodes_.size());
  for (const auto& e : electrodes_) out.push_back(e.name);
  return out;
}

const Montage& canonical_montage() {
  static const Montage montage = [] {
    // Row of the 9x10 grid, then (column, label) pairs.
    const std::vector<std::pair<int, std::vector<std::pair<int, const char*>>>> rows = {
        {0, {{3, "Fp1"}, {5, "Fp2"}}},
        {1, {{1, "AF7"}, {3, "AF3"}, {4, "AFz"}, {5, "AF4"}, {7, "AF8"}}},
        {2, {{0, "F7"}, {1, "F5"}, {2, "F3"}, {3, "F1"}, {4, "Fz"}, {5, "F2"}, {6, "F4"}, {7, "F6"}, {8, "F8"}}},
        {3, {{0, "FT7"}, {1, "FC5"}, {2, "FC3"}, {3, "FC1"}, {4, "FCz"}, {5, "FC2"}, {6, "FC4"}, {7, "FC6"}, {8, "FT8"}}},
        {4, {{0, "T7"}, {1, "C5"}, {2, "C3"}, {3, "C1"}, {4, "Cz"}, {5, "C2"}, {6, "C4"}, {7, "C6"}, {8, "T8"}}},
        {5, {{0, "TP7"}, {1, "CP5"}, {2, "CP3"}, {3, "CP1"}, {4, "CPz"}, {5, "CP2"}, {6, "CP4"}, {7, "CP6"}, {8, "TP8"}}},
        {6, {{0, "P7"}, {1, "P5"}, {2, "P3"}, {3, "P1"}, {4, "Pz"}, {5, "P2"}, {6, "P4"}, {7, "P6"}, {8, "P8"}}},
        {7, {{0, "PO9"}, {1, "PO7"}, {2, "PO5"}, {3, "PO3"}, {4, "POz"}, {5, "PO4"}, {6, "PO6"}, {7, "PO8"}, {8, "PO10"}}},
        {8, {{3, "O1"}, {4, "Oz"}, {5, "O2"}}},
    };
    std::vector<Electrode> es;
    for (const auto& [r, cols] : rows)
      for (const auto& [c, name] : cols)
        es.push_back({name, r / static_cast<double>(kGridRows - 1), c / static_cast<double>(kGridCols - 1)});
    return Montage(std::move(es));
  }();
  return montage;
}

Montage read_montage(std::istream& in) {
  std::vector<Electrode> es;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Electrode e;
    if (!(ls >> e.name >> e.x_norm >> e.y_norm)) {
      throw FormatError("montage line " + std::to_string(lineno) + ": expected 'label x_norm y_norm'");
    }
    es.push_back(std::move(e));
  }
  if (es.empty()) throw FormatError("montage: no electrodes");
  return Montage(std::move(es));
}

Montage load_montage(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("montage: cannot open " + path);
  return read_montage(in);
}

void write_montage(std::ostream& out, const Montage& montage) {
  out << "# label\tx_norm\ty_norm\n";
  for (const auto& e : montage.electrodes())
    out << e.name << '\t' << std::setprecision(17) << e.x_norm << '\t' << e.y_norm << '\n';
}

GridCell grid_cell(const Electrode& e) {
  if (!(e.x_norm >= 0.0 && e.x_norm <= 1.0 && e.y_norm >= 0.0 && e.y_norm <= 1.0)) {
    throw ValidationError("project_to_grid: electrode '" + e.name + "' has coordinates outside [0,1]");
  }
  return {static_cast<int>(std::floor(e.x_norm * (kGridRows - 1) + 0.5)),
          static_cast<int>(std::floor(e.y_norm * (kGridCols - 1) + 0.5))};
}

std::optional<GridCell> GridLayout::cell_of(const std::string& electrode) const {
  for (int i = 0; i < kGridRows * kGridCols; ++i)
    if (cells[i] && *cells[i] == electrode) return GridCell{i / kGridCols, i % kGridCols};
  return std::nullopt;
}

GridLayout project_to_grid(const std::vector<Electrode>& electrodes, const Montage& canonical) {
  if (electrodes.empty()) throw ValidationError("project_to_grid: empty electrode list");
  GridLayout layout;
  std::array<double, kGridRows * kGridCols> best_dist;
  best_dist.fill(0.0);
  for (const auto& e : electrodes) {
    const GridCell c = grid_cell(e);
    const double dr = e.x_norm * (kGridRows - 1) - c.row;
    const double dc = e.y_norm * (kGridCols - 1) - c.col;
    const double dist = dr * dr + dc * dc;
    const int idx = c.row * kGridCols + c.col;
    if (!layout.cells[idx]) {
      layout.cells[idx] = e.name;
      best_dist[idx] = dist;
    } else if (dist < best_dist[idx]) {
      layout.dropped.push_back(*layout.cells[idx]);
      layout.cells[idx] = e.name;
      best_dist[idx] = dist;
    } else {
      layout.dropped.push_back(e.name);
    }
  }
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    const auto& ce = canonical.electrodes()[i];
    const GridCell c = grid_cell(ce);
    layout.canonical_names.push_back(ce.name);
    layout.canonical_cells.push_back(c);
    if (!layout.at(c)) layout.unobserved.push_back(i);
  }
  return layout;
}

void EEGRecording::validate() const {
  if (samples.rank() != 2) throw ContractError("recording: samples must be T x C");
  if (samples.cols() != channel_names.size()) {
    throw ContractError("recording: " + std::to_string(samples.cols()) + " sample columns but " +
                        std::to_string(channel_names.size()) + " channel names");
  }
  if (!(sample_rate_hz > 0.0)) throw ContractError("recording: sample rate must be positive");
}

double thin_plate_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

TpsInterpolator::TpsInterpolator(std::vector<std::array<double, 2>> sites) : sites_(std::move(sites)) {
  const std::size_t k = sites_.size();
  if (k < 3) throw NumericalError("TPS interpolation needs at least 3 sites, got " + std::to_string(k));
  const std::size_t n = k + 3;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      A(i, j) = thin_plate_kernel(std::hypot(sites_[i][0] - sites_[j][0], sites_[i][1] - sites_[j][1]));
    }
    A(i, k) = A(k, i) = 1.0;
    A(i, k + 1) = A(k + 1, i) = sites_[i][0];
    A(i, k + 2) = A(k + 2, i) = sites_[i][1];
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible() || lu.rcond() < 1e-13) {
    throw NumericalError("TPS interpolation system is singular or ill-conditioned (rcond " +
                         std::to_string(lu.rcond()) + "); sites are duplicated or collinear");
  }
  Eigen::MatrixXd inv = lu.inverse();
  inverse_.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) inverse_[i * n + j] = inv(i, j);
}

Tensor TpsInterpolator::weights(const std::vector<std::array<double, 2>>& queries) const {
  const std::size_t k = sites_.size();
  const std::size_t n = k + 3;
  Tensor w({queries.size(), k});
  std::vector<double> basis(n);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t i = 0; i < k; ++i) {
      basis[i] = thin_plate_kernel(std::hypot(queries[q][0] - sites_[i][0], queries[q][1] - sites_[i][1]));
    }
    basis[k] = 1.0;
    basis[k + 1] = queries[q][0];
    basis[k + 2] = queries[q][1];
    // value = basis . coeffs, coeffs = inverse * [v; 0], so only the first k
    // columns of the inverse matter.
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += basis[i] * inverse_[i * n + j];
      w(q, j) = s;
    }
  }
  return w;
}

EEGRecording rbf_interpolate(const EEGRecording& recording, const Montage& montage, const Montage& canonical) {
  recording.validate();
  std::vector<Electrode> electrodes;
  for (const auto& name : recording.channel_names) {
    const Electrode* e = montage.find(name);
    if (!e) throw ValidationError("rbf_interpolate: channel '" + name + "' is not in the montage");
    electrodes.push_back(*e);
  }
  const GridLayout layout = project_to_grid(electrodes, canonical);

  std::map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < recording.channel_names.size(); ++c) column[recording.channel_names[c]] = c;

  // Data sites: every electrode that holds a cell.
  std::vector<std::array<double, 2>> sites;
  std::vector<std::size_t> site_cols;
  for (int i = 0; i < kGridRows * kGridCols; ++i) {
    if (!layout.cells[i]) continue;
    sites.push_back({static_cast<double>(i / kGridCols), static_cast<double>(i % kGridCols)});
    site_cols.push_back(column.at(*layout.cells[i]));
  }

  const std::size_t T = recording.num_samples();
  const std::size_t out_c = canonical.size();
  EEGRecording out = recording;
  out.channel_names = layout.canonical_names;
  out.samples = Tensor({T, out_c});

  for (std::size_t ci = 0; ci < out_c; ++ci) {
    const auto& occupant = layout.at(layout.canonical_cells[ci]);
    if (!occupant) continue;
    const std::size_t src = column.at(*occupant);
    for (std::size_t t = 0; t < T; ++t) out.samples(t, ci) = recording.samples(t, src);
  }
  if (layout.unobserved.empty()) return out;

  const TpsInterpolator tps(std::move(sites));
  std::vector<std::array<double, 2>> queries;
  for (std::size_t ci : layout.unobserved) {
    queries.push_back({static_cast<double>(layout.canonical_cells[ci].row),
                       static_cast<double>(layout.canonical_cells[ci].col)});
  }
  const Tensor w = tps.weights(queries);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t q = 0; q < layout.unobserved.size(); ++q) {
      double v = 0.0;
      for (std::size_t j = 0; j < site_cols.size(); ++j) v += w(q, j) * recording.samples(t, site_cols[j]);
      out.samples(t, layout.unobserved[q]) = v;
    }
  }
  return out;
}

EEGRecording zero_fill(const EEGRecording& recording, const Montage& canonical) {
  recording.validate();
  const std::size_t T = recording.num_samples();
  EEGRecording out = recording;
  out.channel_names = canonical.names();
  out.samples = Tensor({T, canonical.size()});
  for (std::size_t c = 0; c < recording.channel_names.size(); ++c) {
    const auto idx = canonical.index_of(recording.channel_names[c]);
    if (!idx) continue;
    for (std::size_t t = 0; t < T; ++t) out.samples(t, *idx) = recording.samples(t, c);
  }
  return out;
}

std::vector<std::size_t> missing_channels(const EEGRecording& recording, const Montage& canonical) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < canonical.size(); ++i) {
    const auto& name = canonical.electrodes()[i].name;
    if (std::find(recording.channel_names.begin(), recording.channel_names.end(), name) ==
        recording.channel_names.end()) {
      out.push_back(i);
    }
  }
  return out;
}

PatchSet patchify(const EEGRecording& recording, std::size_t patch_len) {
  recording.validate();
  const std::size_t T = recording.num_samples(), C = recording.num_channels();
  if (patch_len == 0 || T % patch_len != 0) {
    throw ContractError("patchify: T=" + std::to_string(T) + " is not divisible by L=" +
                        std::to_string(patch_len));
  }
  const std::size_t N = T / patch_len;
  PatchSet ps;
  ps.patch_len = patch_len;
  ps.channels = C;
  // Rows of the T x C sample matrix are contiguous, so patch i is the flat
  // range [i*L*C, (i+1)*L*C).
  ps.patches = recording.samples.reshaped({N, patch_len * C});
  for (std::size_t i = 0; i < N; ++i) ps.positions.push_back(i);
  return ps;
}

Tensor unpatchify(const PatchSet& patches) {
  const std::size_t N = patches.count(), W = patches.signal_width();
  const std::size_t stride = patches.patches.cols();
  Tensor out({N * patches.patch_len, patches.channels});
  for (std::size_t i = 0; i < N; ++i)
    std::copy_n(patches.patches.values().begin() + i * stride, W, out.values().begin() + i * W);
  return out;
}

std::vector<double> sinusoidal_embedding(std::size_t position, std::size_t dim) {
  std::vector<double> e(dim);
  for (std::size_t j = 0; 2 * j < dim; ++j) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(dim));
    e[2 * j] = std::sin(static_cast<double>(position) * w);
    if (2 * j + 1 < dim) e[2 * j + 1] = std::cos(static_cast<double>(position) * w);
  }
  return e;
}

PatchSet add_positional_embedding(const PatchSet& patchset, std::size_t dim) {
  PatchSet out = patchset;
  const std::size_t N = patchset.count();
  const std::size_t old_w = patchset.patches.cols();
  const std::size_t new_w = old_w + dim;
  std::vector<double> v(N * new_w);
  for (std::size_t i = 0; i < N; ++i) {
    std::copy_n(patchset.patches.values().begin() + i * old_w, old_w, v.begin() + i * new_w);
    const auto e = sinusoidal_embedding(patchset.positions[i], dim);
    std::copy(e.begin(), e.end(), v.begin() + i * new_w + old_w);
  }
  out.patches = Tensor({N, new_w}, std::move(v));
  out.pos_embed_dim = patchset.pos_embed_dim + dim;
  return out;
}

}  // namespace imac
