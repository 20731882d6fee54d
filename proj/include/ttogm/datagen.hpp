#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ttogm/gridmap.hpp"
#include "ttogm/pointcloud.hpp"

namespace ttogm {

/// Binary floorplan: 1 = occupied, 0 = free. Row 0 is the top (largest y);
/// the lower-left corner of the raster sits at world (0, 0).
struct FloorplanRaster {
  int width = 0;
  int height = 0;
  double resolution = 0.05;  // m/cell
  std::vector<std::uint8_t> occupied;
  std::string id;

  FloorplanRaster() = default;
  FloorplanRaster(int w, int h, double res, std::uint8_t fill = 0)
      : width(w), height(h), resolution(res), occupied(static_cast<std::size_t>(w) * h, fill) {}

  bool inside(int row, int col) const { return row >= 0 && col >= 0 && row < height && col < width; }
  std::uint8_t at(int row, int col) const { return occupied[static_cast<std::size_t>(row) * width + col]; }
  std::uint8_t& at(int row, int col) { return occupied[static_cast<std::size_t>(row) * width + col]; }

  MapGeometry geometry() const;
  /// The floorplan as a map: occupied 100, free 0.
  DiscreteMap truth_map() const;
  /// Fills the axis-aligned world box [x0, x1] x [y0, y1] (cells whose
  /// centers fall inside) with `value`.
  void fill_box(double x0, double y0, double x1, double y1, std::uint8_t value);
};

/// Throws DataError unless some 4-connected free region has >= 100 cells.
void check_traversable(const FloorplanRaster& fp);

/// Single-channel PNG/PGM: pixels < 128 occupied, >= 128 free.
FloorplanRaster load_floorplan(const std::filesystem::path& path, double resolution = 0.05);

/// Writes occupied as 0 and free as 255.
void write_floorplan(const std::filesystem::path& path, const FloorplanRaster& fp);

/// 20 m x 10 m building: a corridor along the south side and three rooms
/// with doors, furniture and one glass partition.
FloorplanRaster corridor_room_world(double resolution = 0.05);

/// Straight corridor of the given length and width with closed ends.
FloorplanRaster corridor_world(double length, double width, double resolution = 0.05);

/// Procedural apartment-like floorplan: recursively split rooms with doors,
/// a few thin partitions and furniture. Deterministic per seed.
FloorplanRaster random_floorplan(std::uint64_t seed, double resolution = 0.05);

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;  // rad

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

struct PlannerConfig {
  double step = 0.25;              // m between consecutive poses
  double clearance = 0.35;         // m, preferred distance to obstacles
  double view_radius = 2.0;        // m, sight range used for coverage
  double viewpoint_spacing = 0.75; // m, candidate lattice
  double max_yaw_step_deg = 15.0;  // heading change allowed per pose
  double coverage_goal = 0.995;    // fraction of visible free cells to cover
  int visibility_rays = 180;

  void validate() const;
};

/// Collision-free path through viewpoints that together see most of the
/// reachable free space. Deterministic per seed.
std::vector<Pose2D> plan_trajectory(const FloorplanRaster& fp, std::uint64_t seed, const PlannerConfig& cfg = {});

/// Fraction of free cells seen within `view_radius` from some pose.
double trajectory_coverage(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, double view_radius,
                           int rays = 360);

/// Resamples to exactly `n` poses, evenly spaced in a combined metric of
/// travelled distance and turned angle (0.5 m per rad).
std::vector<Pose2D> resample_trajectory(const std::vector<Pose2D>& traj, std::size_t n);

/// Trajectory for LiDAR sequences: the planned path resampled to `n` poses
/// evenly spaced along its length, heading along the direction of travel
/// averaged over `smoothing` poses on either side. Turns are spread over the
/// approach instead of happening in place, which keeps the motion between
/// consecutive scans small.
std::vector<Pose2D> scan_trajectory(const FloorplanRaster& fp, std::uint64_t seed, std::size_t n,
                                    const PlannerConfig& cfg, int smoothing = 8);

struct ErrorSpec {
  double linear_drift = 0.0;      // m per m travelled
  double angular_drift = 0.0;     // deg per m travelled
  double speckle_rate = 0.0;      // per observed cell
  double passthrough_rate = 0.0;  // per ray meeting a thin obstacle
  double dropout_arc = 0.0;       // deg, occluded sector per scan
  double partial_coverage = 1.0;  // fraction of the trajectory executed
  std::uint64_t seed = 0;

  void validate() const;
  bool is_zero() const;
};

struct RenderConfig {
  int beams = 720;
  double max_range = 10.0;    // m
  int thin_cells = 2;         // obstacles at most this thick can be passed through

  void validate() const;
};

struct DatasetPair {
  DiscreteMap erroneous;
  DiscreteMap clean;
  std::string floorplan_id;
  ErrorSpec spec;
};

/// Beam angles relative to the heading. A small irrational offset keeps
/// beams off exact cell corners.
std::vector<double> beam_angles(int beams);

/// Exact ray-cast map from the drift-free trajectory.
DiscreteMap render_clean(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, const RenderConfig& cfg = {});

/// Trajectory with linear and angular drift accumulated along arc length.
/// Drift directions are drawn from `rng_seed`.
std::vector<Pose2D> apply_drift(const std::vector<Pose2D>& traj, const ErrorSpec& spec);

DatasetPair render_pair(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, const ErrorSpec& spec,
                        const RenderConfig& cfg = {});

/// Inclusive [min, max] sampling ranges for each error parameter.
struct ErrorRanges {
  double linear_drift[2] = {0.0, 0.01};
  double angular_drift[2] = {0.0, 0.5};
  double speckle_rate[2] = {0.01, 0.05};
  double passthrough_rate[2] = {0.0, 0.1};
  double dropout_arc[2] = {0.0, 30.0};
  double partial_coverage[2] = {0.8, 1.0};

  void validate() const;
  ErrorSpec sample(std::uint64_t seed) const;
};

struct DatasetOptions {
  std::size_t count = 10;
  std::uint64_t seed = 0;
  ErrorRanges ranges;
  RenderConfig render;
  PlannerConfig planner;
  int workers = 1;
};

struct DatasetSummary {
  std::size_t pairs = 0;
  std::size_t out_of_band = 0;  // erroneous occupied count outside [0.3x, 3x] of clean
};

/// Writes pairs/<id>_err.pgm, pairs/<id>_clean.pgm (+ .meta) and
/// manifest.csv under `out_dir`. Floorplans are used round-robin.
DatasetSummary generate_dataset(const std::vector<std::filesystem::path>& floorplans, const DatasetOptions& options,
                                const std::filesystem::path& out_dir);

/// Floorplan files (.png/.pgm) in a directory, sorted by name.
std::vector<std::filesystem::path> list_floorplans(const std::filesystem::path& dir);

/// Per-pair seed derived from the dataset seed and the pair id.
std::uint64_t pair_seed(std::uint64_t seed, std::uint64_t id);

// ---------------------------------------------------------------- 3D scans

/// Spinning multi-beam LiDAR in an extruded floorplan: walls are prisms from
/// z = 0 to wall_height; optional floor and ceiling planes.
struct LidarConfig {
  int channels = 16;
  double min_elevation_deg = -15.0;
  double max_elevation_deg = 15.0;
  int azimuths = 1800;
  double sensor_height = 1.0;  // m above the floor
  double wall_height = 2.5;    // m
  bool floor = false;
  bool ceiling = false;
  double max_range = 30.0;     // m

  void validate() const;
};

/// One scan in the sensor frame (x forward, z up, origin at the sensor).
PointCloud render_lidar_scan(const FloorplanRaster& fp, const Pose2D& pose, const LidarConfig& cfg);

/// Writes scans/scan_NNNNN.pcd (binary), ground_truth.txt (TUM),
/// truth.pgm/.meta and alignment.txt (truth -> first-scan frame) to `out_dir`.
void write_scan_sequence(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, const LidarConfig& cfg,
                         const std::filesystem::path& out_dir);

}  // namespace ttogm
