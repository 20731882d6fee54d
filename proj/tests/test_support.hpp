#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "ttogm/pointcloud.hpp"

namespace ttogm::fixtures {

/// Fresh scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ttogm") {
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

/// Points sampled on the floor, ceiling and walls of a 6 x 4 x 2.5 m room
/// with two box-shaped pieces of furniture, centered on the origin.
inline PointCloud room_cloud(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud cloud;
  const double hx = 3.0, hy = 2.0, z0 = -1.0, z1 = 1.5;
  for (int i = 0; i < count; ++i) {
    const double a = u(rng), b = u(rng);
    Point3 p;
    switch (i % 8) {
      case 0: p = {-hx + 2 * hx * a, -hy + 2 * hy * b, z0}; break;
      case 1: p = {-hx + 2 * hx * a, -hy + 2 * hy * b, z1}; break;
      case 2: p = {-hx, -hy + 2 * hy * a, z0 + (z1 - z0) * b}; break;
      case 3: p = {hx, -hy + 2 * hy * a, z0 + (z1 - z0) * b}; break;
      case 4: p = {-hx + 2 * hx * a, -hy, z0 + (z1 - z0) * b}; break;
      case 5: p = {-hx + 2 * hx * a, hy, z0 + (z1 - z0) * b}; break;
      case 6: p = {1.0 + 0.8 * a, -1.5, z0 + 0.9 * b}; break;          // cabinet front face
      default: p = {-2.0, 0.5 + 0.7 * a, z0 + 0.6 * b}; break;         // desk side face
    }
    p.intensity = u(rng);
    cloud.points.push_back(p);
  }
  return cloud;
}

}  // namespace ttogm::fixtures
