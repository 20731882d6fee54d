#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ttogm/pointcloud.hpp"
#include "ttogm/pose.hpp"

namespace ttogm {

struct BinEntry {
  double range = 0.0;      // m, horizontal distance to the sensor
  double intensity = 0.0;  // [0, 1]
};

/// Azimuth-binned planar projection of one scan.
struct Scan2D {
  std::vector<std::vector<BinEntry>> bins;
  std::uint64_t scan_index = 0;

  std::size_t bin_count() const { return bins.size(); }
  std::size_t entry_count() const;

  /// Azimuth of the center of bin b, in (-pi, pi).
  double bin_center(std::size_t b) const;
};

/// Optional vertical slab applied before projection. Off by default.
struct ZBand {
  double min_z = 0.0;
  double max_z = 0.0;
};

struct Endpoint {
  double x = 0.0;
  double y = 0.0;
  double intensity = 0.0;
};

/// floor(sqrt(n)) computed exactly on integers.
std::size_t azimuth_bin_count(std::size_t point_count);

/// Bin index of azimuth theta for the given bin count; theta = pi clamps to
/// the last bin.
std::size_t azimuth_bin_index(double theta, std::size_t bin_count);

/// Projects every point onto the xy-plane and appends (range, intensity) to
/// the bin of its azimuth. z is discarded.
Scan2D translate_cloud(const PointCloud& cloud, const std::optional<ZBand>& z_band = std::nullopt);

/// World endpoints of every bin entry, placed at the bin-center azimuth and
/// moved by the planar part (x, y, yaw) of `pose`.
std::vector<Endpoint> scan2d_to_endpoints(const Scan2D& scan, const PoseSE3& pose);

/// Debug dump as `bin_index,range,intensity`.
void write_scan2d_csv(const std::filesystem::path& path, const Scan2D& scan);

}  // namespace ttogm
