#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "imac/tensor.hpp"

namespace imac {

inline constexpr int kGridRows = 9;
inline constexpr int kGridCols = 10;
inline constexpr std::size_t kUnifiedChannels = 64;

// Scalp position in normalised [0,1] coordinates: x runs front to back (grid
// rows), y runs left to right (grid columns).
struct Electrode {
  std::string name;
  double x_norm = 0.0;
  double y_norm = 0.0;
};

struct GridCell {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridCell&, const GridCell&) = default;
};

class Montage {
 public:
  Montage() = default;
  explicit Montage(std::vector<Electrode> electrodes);

  const std::vector<Electrode>& electrodes() const { return electrodes_; }
  std::size_t size() const { return electrodes_.size(); }
  const Electrode* find(const std::string& name) const;
  std::optional<std::size_t> index_of(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::vector<Electrode> electrodes_;
};

// The unified 64-channel layout (10-10 labels on the 9x10 grid).
const Montage& canonical_montage();

// Tab-separated "label x_norm y_norm" rows; '#' starts a comment line.
Montage read_montage(std::istream& in);
Montage load_montage(const std::string& path);
void write_montage(std::ostream& out, const Montage& montage);

// Cell of the 9x10 grid an electrode rounds to (half-up).
GridCell grid_cell(const Electrode& e);

struct GridLayout {
  // cells[row * kGridCols + col] holds the electrode occupying that cell.
  std::array<std::optional<std::string>, kGridRows * kGridCols> cells;
  // Canonical channel order and their cells.
  std::vector<std::string> canonical_names;
  std::vector<GridCell> canonical_cells;
  // Canonical indices without an observed electrode.
  std::vector<std::size_t> unobserved;
  // Electrodes that lost a cell collision.
  std::vector<std::string> dropped;

  const std::optional<std::string>& at(GridCell c) const { return cells[c.row * kGridCols + c.col]; }
  std::optional<GridCell> cell_of(const std::string& electrode) const;
};

// Projects electrodes onto the grid. On a collision the electrode closer to
// the cell centre (before rounding) keeps the cell; ties keep the first one.
GridLayout project_to_grid(const std::vector<Electrode>& electrodes,
                           const Montage& canonical = canonical_montage());

struct EEGRecording {
  Tensor samples;  // T x C
  std::vector<std::string> channel_names;
  double sample_rate_hz = 0.0;
  int label = 0;
  std::string subject_id;
  std::string domain_id;

  std::size_t num_samples() const { return samples.rows(); }
  std::size_t num_channels() const { return channel_names.size(); }
  void validate() const;
};

// Thin-plate-spline interpolant with an affine term, fitted on fixed 2-D
// sites. The fit is shared across all right-hand sides (time steps).
class TpsInterpolator {
 public:
  // Throws NumericalError when the sites are degenerate (fewer than three,
  // collinear, or duplicated).
  explicit TpsInterpolator(std::vector<std::array<double, 2>> sites);

  // Linear weights mapping site values to the interpolant at each query:
  // result is queries.size() x sites.size().
  Tensor weights(const std::vector<std::array<double, 2>>& queries) const;

  std::size_t num_sites() const { return sites_.size(); }

 private:
  std::vector<std::array<double, 2>> sites_;
  std::vector<double> inverse_;  // (k+3)^2 row-major inverse of the system
};

double thin_plate_kernel(double r);

// Maps a recording onto the unified layout: observed canonical cells are
// copied unchanged, the rest are filled per time step by TPS interpolation
// over every electrode that holds a grid cell.
EEGRecording rbf_interpolate(const EEGRecording& recording, const Montage& montage,
                             const Montage& canonical = canonical_montage());

// Places a recording's channels into the canonical order, zero-filling the
// channels it lacks. Used when interpolation is bypassed.
EEGRecording zero_fill(const EEGRecording& recording, const Montage& canonical = canonical_montage());

// Canonical indices a recording does not carry.
std::vector<std::size_t> missing_channels(const EEGRecording& recording,
                                          const Montage& canonical = canonical_montage());

struct PatchSet {
  Tensor patches;  // N x (L*C + pos_embed_dim), time-major within a patch
  std::vector<std::size_t> positions;
  std::size_t patch_len = 0;
  std::size_t channels = 0;
  std::size_t pos_embed_dim = 0;

  std::size_t count() const { return positions.size(); }
  std::size_t signal_width() const { return patch_len * channels; }
};

PatchSet patchify(const EEGRecording& recording, std::size_t patch_len);
Tensor unpatchify(const PatchSet& patches);

// Sinusoidal code of a patch index: pairs (sin(p w_j), cos(p w_j)) with
// w_j = 10000^(-2j/dim).
std::vector<double> sinusoidal_embedding(std::size_t position, std::size_t dim);
PatchSet add_positional_embedding(const PatchSet& patchset, std::size_t dim = 8);

}  // namespace imac
