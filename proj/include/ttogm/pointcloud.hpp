#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace ttogm {

/// A single LiDAR return. Coordinates in meters, intensity normalized to [0, 1].
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

struct PointCloud {
  std::vector<Point3> points;
  std::uint64_t scan_index = 0;
  std::optional<double> timestamp;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct PreprocessConfig {
  double box_half_width = 1.0;    // m
  double voxel_resolution = 0.25; // m

  void validate() const;
};

enum class CloudFormat { PcdAscii, PcdBinary, XyziCsv };

struct CloudLoadOptions {
  /// Overrides the divisor used to normalize raw intensities. When unset the
  /// file's declared maximum is used, falling back to 255.
  std::optional<double> intensity_divisor;
};

struct CloudLoadStats {
  std::size_t dropped_non_finite = 0;
  std::size_t clamped_intensity = 0;
};

/// Guess the format from the extension (.pcd is sniffed for its DATA line).
CloudFormat detect_cloud_format(const std::filesystem::path& path);

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format,
                      const CloudLoadOptions& options = {},
                      CloudLoadStats* stats = nullptr);

/// Writes x y z intensity. Intensities are written as stored (already in
/// [0, 1]) together with a declared maximum of 1 so that loading is lossless.
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud,
                 CloudFormat format);

/// Drops every point inside the axis-aligned cube of half-width
/// `box_half_width` around the sensor origin, boundary included.
PointCloud box_filter(const PointCloud& cloud, const PreprocessConfig& cfg);

/// One point per occupied voxel at the centroid of its members; intensity is
/// averaged. Output is ordered by voxel index so it does not depend on the
/// input order.
PointCloud voxel_grid_filter(const PointCloud& cloud,
                             const PreprocessConfig& cfg);

}  // namespace ttogm
