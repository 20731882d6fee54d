#pragma once

#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ttogm/cleaner.hpp"
#include "ttogm/datagen.hpp"
#include "ttogm/eval.hpp"
#include "ttogm/gridmap.hpp"
#include "ttogm/pointcloud.hpp"
#include "ttogm/registration.hpp"
#include "ttogm/translation.hpp"

namespace ttogm {

/// Parsed `key = value` text with `[section]` headers and `#` comments.
/// Values are numbers, booleans, or double-quoted strings.
class ConfigDocument {
 public:
  static ConfigDocument parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigDocument load(const std::filesystem::path& path);

  /// Values keyed by `section.key`, in the original text form.
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct DatagenSettings {
  std::uint64_t seed = 0;
  std::size_t count = 50;
  RenderConfig render;
  PlannerConfig planner;
  /// Planner for LiDAR scan sequences: a wider sight range and a lower
  /// coverage goal keep the tour short enough for small inter-scan motion.
  PlannerConfig scan_planner = [] {
    PlannerConfig p;
    p.view_radius = 8.0;
    p.coverage_goal = 0.9;
    return p;
  }();
  ErrorRanges ranges;
  LidarConfig lidar;
  std::size_t scans = 100;  // poses for scan-sequence rendering
};

struct PipelineConfig {
  PreprocessConfig preprocess;
  GicpConfig gicp;
  EvidenceConfig grid;
  FiltrationConfig filtration;
  std::optional<ZBand> z_band;
  CleanerKind cleaner;
  int every_n = 10;         // snapshot cleaning cadence in scans; 0 disables cleaning
  bool background_cleaning = true;
  CleanOptions clean;
  std::optional<double> intensity_divisor;
  DatagenSettings datagen;

  PipelineConfig();
  /// Checks every nested invariant; throws ConfigError.
  void validate() const;

  /// Defaults overridden by the document. Unknown keys are rejected.
  static PipelineConfig from_document(const ConfigDocument& doc);
  static PipelineConfig load(const std::filesystem::path& path);
};

/// The default configuration file, every key documented.
std::string default_config_text();

struct ScanReport {
  std::uint64_t scan_index = 0;
  PoseSE3 pose;
  std::size_t filtered_points = 0;
  bool keyframe_added = false;
  bool fell_back_to_prior = false;
};

/// Streaming mapper: one writer of the evidence grid and keyframes. Cleaning
/// runs every N scans on an immutable snapshot of the discretized map,
/// optionally on a background thread; the evidence grid is never modified
/// by cleaner output.
class Mapper {
 public:
  /// `cleaner` may be null, which disables cleaning.
  Mapper(const PipelineConfig& cfg, std::shared_ptr<PatchCleaner> cleaner);
  ~Mapper();
  Mapper(const Mapper&) = delete;
  Mapper& operator=(const Mapper&) = delete;

  /// Processes the next scan. Errors are rethrown with the scan index and
  /// stage name prefixed.
  ScanReport process(const PointCloud& cloud);

  /// input_filter -> remove_floating_points on the current grid.
  DiscreteMap snapshot() const;

  /// Waits for background cleaning and cleans the final state unless the
  /// last snapshot already covered it. Returns the published map.
  DiscreteMap finish();

  const Trajectory& trajectory() const { return trajectory_; }
  const LatencyReport& latency() const { return latency_; }
  const OccupancyGrid& grid() const { return grid_; }
  std::size_t scans_processed() const { return processed_; }
  std::size_t keyframes() const { return keyframes_.size(); }

 private:
  void start_cleaning();
  void collect_cleaning();

  PipelineConfig cfg_;
  std::shared_ptr<PatchCleaner> cleaner_;
  OccupancyGrid grid_;
  bool grid_ready_ = false;
  KeyframeStore keyframes_;
  Trajectory trajectory_;
  LatencyReport latency_;
  std::size_t processed_ = 0;

  PoseSE3 last_pose_;
  PoseSE3 last_motion_;
  std::unique_ptr<GicpTarget> previous_scan_;
  std::unique_ptr<GicpTarget> submap_;
  std::vector<std::uint64_t> submap_ids_;

  std::future<std::pair<DiscreteMap, double>> pending_;
  std::optional<DiscreteMap> published_;
  std::size_t published_at_ = 0;
};

/// Cloud files (.pcd, .csv) in a directory, sorted by file name.
std::vector<std::filesystem::path> list_scans(const std::filesystem::path& dir);

struct MapRunSummary {
  std::size_t scans = 0;
  std::size_t keyframes = 0;
  std::size_t fallbacks = 0;
  DiscreteMap map;
};

/// Loads every scan in order, maps, and writes map.pgm (+ .meta),
/// map_filtered.pgm (+ .meta, before cleaning), trajectory.txt and
/// latency.csv into `out_dir`.
MapRunSummary run_mapping(const std::vector<std::filesystem::path>& scans, const PipelineConfig& cfg,
                          const std::filesystem::path& out_dir);

/// Runs the mapper over preloaded clouds and reports stage latencies.
LatencyReport benchmark_pipeline(const std::vector<PointCloud>& clouds, const PipelineConfig& cfg);

/// Cleaner from the configuration, or null when cleaning is disabled.
std::shared_ptr<PatchCleaner> make_pipeline_cleaner(const PipelineConfig& cfg);

}  // namespace ttogm
