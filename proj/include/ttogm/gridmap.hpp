#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ttogm/pose.hpp"
#include "ttogm/translation.hpp"

namespace ttogm {

inline constexpr std::uint8_t kFree = 0;
inline constexpr std::uint8_t kOccupied = 100;
inline constexpr std::uint8_t kUnknown = 255;

/// Placement of a raster in the world. The origin is the world position of
/// the lower-left corner of the bottom-left cell.
struct MapGeometry {
  int width = 0;
  int height = 0;
  double resolution = 0.05;  // m/cell
  double origin_x = 0.0;
  double origin_y = 0.0;
  double origin_yaw = 0.0;   // rad; recorded in metadata, grids here are axis-aligned

  std::size_t cell_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  bool same_shape(const MapGeometry& o) const { return width == o.width && height == o.height; }
  friend bool operator==(const MapGeometry&, const MapGeometry&) = default;
};

/// Discretized map with codes {0, 100, 255}, stored in image order: row 0 is
/// the top (largest y) row, column 0 the smallest x.
struct DiscreteMap {
  MapGeometry geometry;
  std::vector<std::uint8_t> cells;

  DiscreteMap() = default;
  DiscreteMap(const MapGeometry& g, std::uint8_t fill) : geometry(g), cells(g.cell_count(), fill) {}

  int width() const { return geometry.width; }
  int height() const { return geometry.height; }
  std::uint8_t at(int row, int col) const { return cells[index(row, col)]; }
  std::uint8_t& at(int row, int col) { return cells[index(row, col)]; }
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * geometry.width + col; }

  /// World coordinates of the center of (row, col).
  std::pair<double, double> cell_center(int row, int col) const;

  bool is_discretized() const;
  std::size_t count(std::uint8_t code) const;

  friend bool operator==(const DiscreteMap&, const DiscreteMap&) = default;
};

/// Per-cell values in [0, 1] in image order; the cleaners' working domain.
struct LikelihoodMap {
  MapGeometry geometry;
  std::vector<float> cells;

  LikelihoodMap() = default;
  LikelihoodMap(const MapGeometry& g, float fill) : geometry(g), cells(g.cell_count(), fill) {}

  float at(int row, int col) const { return cells[static_cast<std::size_t>(row) * geometry.width + col]; }
  float& at(int row, int col) { return cells[static_cast<std::size_t>(row) * geometry.width + col]; }
};

struct FiltrationConfig {
  double t1 = 0.12;
  double t2 = 0.93;
  double t3 = 0.96;
  double t1_out = 0.21;
  double t2_out = 0.86;
  std::uint8_t c1 = kFree;
  std::uint8_t c2 = kOccupied;
  std::uint8_t c3 = kUnknown;
  int neighbor_min = 3;

  /// Requires 0 < t1 < t2 < t3 < 1 and 0 < t1_out < t2_out < 1.
  void validate() const;

  std::uint8_t classify_input(double likelihood) const;
  std::uint8_t classify_output(double value) const;
};

struct EvidenceConfig {
  double l_hit = 0.85;
  double l_miss = -0.4;
  double clamp_min = -4.0;
  double clamp_max = 4.0;
  double resolution = 0.05;      // m/cell
  double initial_size = 10.0;    // m, side of the first allocated square

  void validate() const;
};

/// Log-odds evidence grid. Cells are addressed (cx, cy) with cy growing with
/// world y. Single writer.
class OccupancyGrid {
 public:
  struct Cell {
    double log_odds = 0.0;
    bool observed = false;
    double mean_intensity = 0.0;
    std::uint32_t hits = 0;
  };

  OccupancyGrid() = default;
  /// Fresh square grid of `cfg.initial_size` meters centered on (cx, cy).
  explicit OccupancyGrid(const EvidenceConfig& cfg, double center_x = 0.0, double center_y = 0.0);
  OccupancyGrid(const MapGeometry& geometry, const EvidenceConfig& cfg);

  const MapGeometry& geometry() const { return geometry_; }
  const EvidenceConfig& config() const { return cfg_; }
  int width() const { return geometry_.width; }
  int height() const { return geometry_.height; }

  const Cell& cell(int cx, int cy) const { return cells_[index(cx, cy)]; }
  Cell& cell(int cx, int cy) { return cells_[index(cx, cy)]; }
  bool contains(int cx, int cy) const { return cx >= 0 && cy >= 0 && cx < width() && cy < height(); }
  double likelihood(int cx, int cy) const;

  /// Cell containing a world point (may be out of bounds).
  std::pair<int, int> world_to_cell(double x, double y) const;
  /// Nullopt when the point lies outside the grid.
  std::optional<std::pair<int, int>> find_cell(double x, double y) const;

  /// Grows the grid by doubling along each side until the world box fits.
  /// Cells keep their world position.
  void ensure_contains(double min_x, double min_y, double max_x, double max_y);

  /// Evidence update from one scan taken at `pose`. Each touched cell is
  /// updated once per scan: with l_hit if some endpoint falls in it,
  /// otherwise with l_miss if some ray crosses it.
  void integrate_scan(const Scan2D& scan, const PoseSE3& pose);
  void integrate_endpoints(double sensor_x, double sensor_y, const std::vector<Endpoint>& endpoints);

 private:
  std::size_t index(int cx, int cy) const { return static_cast<std::size_t>(cy) * geometry_.width + cx; }

  MapGeometry geometry_;
  EvidenceConfig cfg_;
  std::vector<Cell> cells_;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t scan_counter_ = 0;
};

/// Threshold rule on likelihood: below t1 free, within [t2, t3] occupied,
/// otherwise unknown. Unobserved cells are unknown.
DiscreteMap input_filter(const OccupancyGrid& grid, const FiltrationConfig& cfg);

/// Grid whose likelihoods re-discretize to `map` under input_filter: free
/// cells at 0, occupied cells at the middle of [t2, t3], unknown unobserved.
OccupancyGrid lift_to_grid(const DiscreteMap& map, const FiltrationConfig& cfg);

/// Single non-cascading pass: a cell with fewer than neighbor_min same-valued
/// 4-neighbors becomes unknown.
DiscreteMap remove_floating_points(const DiscreteMap& map, const FiltrationConfig& cfg);

/// Threshold rule on cleaner output: below t1_out free, within
/// [t1_out, t2_out] occupied, above unknown.
DiscreteMap output_filter(const LikelihoodMap& map, const FiltrationConfig& cfg);

/// value / 255 per cell.
LikelihoodMap to_likelihood(const DiscreteMap& map);

struct TrajectoryEntry {
  std::uint64_t scan_index = 0;
  PoseSE3 pose;
};

class Trajectory {
 public:
  /// Appends; `scan_index` must exceed the last recorded index.
  void record(std::uint64_t scan_index, const PoseSE3& pose);

  const std::vector<TrajectoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// One line per pose: `k tx ty tz qw qx qy qz`.
  void write_tum(const std::filesystem::path& path) const;
  static Trajectory read_tum(const std::filesystem::path& path);

 private:
  std::vector<TrajectoryEntry> entries_;
};

Trajectory record_pose(Trajectory traj, std::uint64_t scan_index, const PoseSE3& pose);

/// Sidecar path for a map image: same stem, `.meta` extension.
std::filesystem::path metadata_path(const std::filesystem::path& image_path);

/// Writes the PGM (raw codes) and its metadata sidecar.
void write_map(const std::filesystem::path& image_path, const DiscreteMap& map,
               const std::optional<FiltrationConfig>& thresholds = std::nullopt);

/// Reads a PGM plus its sidecar. Missing sidecar is an error.
DiscreteMap read_map(const std::filesystem::path& image_path);

}  // namespace ttogm
