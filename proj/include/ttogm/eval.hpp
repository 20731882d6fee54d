#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ttogm/gridmap.hpp"

namespace ttogm {

/// Similarity transform from ground-truth coordinates into map coordinates:
/// p_map = scale * R(theta) * p_truth + (tx, ty).
struct Alignment2D {
  double scale = 1.0;
  double theta = 0.0;  // rad
  double tx = 0.0;
  double ty = 0.0;

  void validate() const;
  std::pair<double, double> apply(double x, double y) const;

  /// Reads `scale theta tx ty` from the first non-comment line.
  static Alignment2D read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

struct IoUResult {
  double unoccupied = 1.0;
  double occupied = 1.0;
  std::size_t compared_cells = 0;   // truth cells whose resampled map cell is known
  bool unoccupied_undefined = false;  // both sets empty; reported as 1.0
  bool occupied_undefined = false;
};

/// Per-class intersection over union between a map and the ground truth.
/// Every known truth cell is looked up in the map at its aligned center
/// (nearest cell); cells unknown in either map, or falling outside the map,
/// are excluded. A class absent from both maps scores 1.0 with a warning.
IoUResult compute_iou(const DiscreteMap& map, const DiscreteMap& truth, const Alignment2D& align = {});

enum class Stage { Filtering = 0, Registration, Translation, Integration, Cleaning };
inline constexpr std::size_t kStageCount = 5;
const char* stage_name(Stage s);

struct LatencyStats {
  std::size_t count = 0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
  double max_ms = 0.0;
};

/// Median (average of the middle pair for even counts) and nearest-rank p95.
LatencyStats summarize_latency(std::vector<double> samples_ms);

/// Wall-clock samples per pipeline stage plus whole-scan totals (all stages
/// except cleaning, which runs on snapshots).
class LatencyReport {
 public:
  void add(Stage stage, double ms) { stages_[static_cast<std::size_t>(stage)].push_back(ms); }
  void add_scan(double ms) { scans_.push_back(ms); }

  LatencyStats stats(Stage stage) const { return summarize_latency(stages_[static_cast<std::size_t>(stage)]); }
  LatencyStats per_scan() const { return summarize_latency(scans_); }
  const std::vector<double>& samples(Stage stage) const { return stages_[static_cast<std::size_t>(stage)]; }

  /// `stage,count,median_ms,p95_ms,mean_ms,max_ms`, one row per stage and a
  /// final `per_scan` row.
  void write_csv(const std::filesystem::path& path) const;
  std::string table() const;

 private:
  std::array<std::vector<double>, kStageCount> stages_;
  std::vector<double> scans_;
};

}  // namespace ttogm
