#include "ttogm/translation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>

#include "ttogm/error.hpp"

namespace ttogm {

std::size_t Scan2D::entry_count() const {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.size();
  return n;
}

double Scan2D::bin_center(std::size_t b) const {
  const double width = 2.0 * std::numbers::pi / static_cast<double>(bins.size());
  return -std::numbers::pi + (static_cast<double>(b) + 0.5) * width;
}

std::size_t azimuth_bin_count(std::size_t point_count) {
  auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(point_count)));
  while (r * r > point_count) --r;
  while ((r + 1) * (r + 1) <= point_count) ++r;
  return r;
}

std::size_t azimuth_bin_index(double theta, std::size_t bin_count) {
  const double raw = std::floor((theta + std::numbers::pi) / (2.0 * std::numbers::pi) * static_cast<double>(bin_count));
  if (raw <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(raw), bin_count - 1);
}

Scan2D translate_cloud(const PointCloud& cloud, const std::optional<ZBand>& z_band) {
  std::vector<const Point3*> kept;
  kept.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    if (z_band && (p.z < z_band->min_z || p.z > z_band->max_z)) continue;
    kept.push_back(&p);
  }
  if (kept.empty()) throw PreconditionError(fmt::format("translate_cloud: scan {} has no points", cloud.scan_index));

  Scan2D scan;
  scan.scan_index = cloud.scan_index;
  const std::size_t bins = azimuth_bin_count(kept.size());
  scan.bins.resize(bins);
  for (const Point3* p : kept) {
    const double theta = std::atan2(p->y, p->x);
    scan.bins[azimuth_bin_index(theta, bins)].push_back({std::hypot(p->x, p->y), p->intensity});
  }
  return scan;
}

std::vector<Endpoint> scan2d_to_endpoints(const Scan2D& scan, const PoseSE3& pose) {
  const double yaw = pose.yaw();
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  const double tx = pose.translation().x();
  const double ty = pose.translation().y();
  std::vector<Endpoint> out;
  out.reserve(scan.entry_count());
  for (std::size_t b = 0; b < scan.bin_count(); ++b) {
    if (scan.bins[b].empty()) continue;
    const double a = scan.bin_center(b);
    const double ca = std::cos(a);
    const double sa = std::sin(a);
    for (const auto& e : scan.bins[b]) {
      const double lx = e.range * ca;
      const double ly = e.range * sa;
      out.push_back({tx + c * lx - s * ly, ty + s * lx + c * ly, e.intensity});
    }
  }
  return out;
}

void write_scan2d_csv(const std::filesystem::path& path, const Scan2D& scan) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << "bin_index,range,intensity\n";
  for (std::size_t b = 0; b < scan.bin_count(); ++b) {
    for (const auto& e : scan.bins[b]) out << fmt::format("{},{},{}\n", b, e.range, e.intensity);
  }
}

}  // namespace ttogm
