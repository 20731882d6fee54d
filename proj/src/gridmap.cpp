#include "ttogm/gridmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "ttogm/error.hpp"
#include "ttogm/grid_line.hpp"
#include "ttogm/image_io.hpp"

namespace ttogm {

std::pair<double, double> DiscreteMap::cell_center(int row, int col) const {
  const auto& g = geometry;
  return {g.origin_x + (col + 0.5) * g.resolution, g.origin_y + (g.height - 1 - row + 0.5) * g.resolution};
}

bool DiscreteMap::is_discretized() const {
  return std::all_of(cells.begin(), cells.end(),
                     [](std::uint8_t v) { return v == kFree || v == kOccupied || v == kUnknown; });
}

std::size_t DiscreteMap::count(std::uint8_t code) const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), code));
}

void FiltrationConfig::validate() const {
  if (!(0.0 < t1 && t1 < t2 && t2 < t3 && t3 < 1.0)) {
    throw ConfigError(fmt::format("filtration thresholds must satisfy 0 < t1 < t2 < t3 < 1, got {} {} {}", t1, t2, t3));
  }
  if (!(0.0 < t1_out && t1_out < t2_out && t2_out < 1.0)) {
    throw ConfigError(
        fmt::format("output thresholds must satisfy 0 < t1_out < t2_out < 1, got {} {}", t1_out, t2_out));
  }
  if (neighbor_min < 0 || neighbor_min > 4) {
    throw ConfigError(fmt::format("neighbor_min must be in [0, 4], got {}", neighbor_min));
  }
}

std::uint8_t FiltrationConfig::classify_input(double likelihood) const {
  if (likelihood < t1) return c1;
  if (likelihood >= t2 && likelihood <= t3) return c2;
  return c3;
}

std::uint8_t FiltrationConfig::classify_output(double value) const {
  if (value < t1_out) return c1;
  if (value <= t2_out) return c2;
  return c3;
}

void EvidenceConfig::validate() const {
  if (!(l_hit > 0.0)) throw ConfigError(fmt::format("l_hit must be > 0, got {}", l_hit));
  if (!(l_miss < 0.0)) throw ConfigError(fmt::format("l_miss must be < 0, got {}", l_miss));
  if (!(clamp_min < 0.0 && clamp_max > 0.0)) {
    throw ConfigError(fmt::format("log-odds clamp must straddle 0, got [{}, {}]", clamp_min, clamp_max));
  }
  if (!(resolution > 0.0)) throw ConfigError(fmt::format("resolution must be > 0, got {}", resolution));
  if (!(initial_size > 0.0)) throw ConfigError(fmt::format("initial_size must be > 0, got {}", initial_size));
}

OccupancyGrid::OccupancyGrid(const EvidenceConfig& cfg, double center_x, double center_y) : cfg_(cfg) {
  cfg_.validate();
  const int n = std::max(1, static_cast<int>(std::ceil(cfg.initial_size / cfg.resolution)));
  geometry_.width = n;
  geometry_.height = n;
  geometry_.resolution = cfg.resolution;
  // Keep the origin on the world lattice of cell size so grids built from
  // different starting points share cell boundaries.
  geometry_.origin_x = std::floor(center_x / cfg.resolution - n / 2.0) * cfg.resolution;
  geometry_.origin_y = std::floor(center_y / cfg.resolution - n / 2.0) * cfg.resolution;
  cells_.assign(geometry_.cell_count(), Cell{});
  stamp_.assign(geometry_.cell_count(), 0);
}

OccupancyGrid::OccupancyGrid(const MapGeometry& geometry, const EvidenceConfig& cfg) : geometry_(geometry), cfg_(cfg) {
  cfg_.validate();
  geometry_.resolution = cfg.resolution;
  if (geometry.resolution != cfg.resolution) {
    throw ConfigError(fmt::format("grid resolution {} differs from evidence resolution {}", geometry.resolution,
                                  cfg.resolution));
  }
  cells_.assign(geometry_.cell_count(), Cell{});
  stamp_.assign(geometry_.cell_count(), 0);
}

double OccupancyGrid::likelihood(int cx, int cy) const {
  return 1.0 / (1.0 + std::exp(-cell(cx, cy).log_odds));
}

std::pair<int, int> OccupancyGrid::world_to_cell(double x, double y) const {
  return {static_cast<int>(std::floor((x - geometry_.origin_x) / geometry_.resolution)),
          static_cast<int>(std::floor((y - geometry_.origin_y) / geometry_.resolution))};
}

std::optional<std::pair<int, int>> OccupancyGrid::find_cell(double x, double y) const {
  const auto c = world_to_cell(x, y);
  if (!contains(c.first, c.second)) return std::nullopt;
  return c;
}

void OccupancyGrid::ensure_contains(double min_x, double min_y, double max_x, double max_y) {
  auto [lo_x, lo_y] = world_to_cell(min_x, min_y);
  auto [hi_x, hi_y] = world_to_cell(max_x, max_y);
  int add_left = 0, add_bottom = 0;
  int w = geometry_.width;
  int h = geometry_.height;
  while (lo_x + add_left < 0) {
    add_left += w;
    w *= 2;
  }
  while (hi_x + add_left >= w) w *= 2;
  while (lo_y + add_bottom < 0) {
    add_bottom += h;
    h *= 2;
  }
  while (hi_y + add_bottom >= h) h *= 2;
  if (w == geometry_.width && h == geometry_.height) return;

  std::vector<Cell> cells(static_cast<std::size_t>(w) * h);
  for (int cy = 0; cy < geometry_.height; ++cy) {
    const auto src = cells_.begin() + static_cast<std::ptrdiff_t>(cy) * geometry_.width;
    std::copy(src, src + geometry_.width,
              cells.begin() + static_cast<std::ptrdiff_t>(cy + add_bottom) * w + add_left);
  }
  geometry_.origin_x -= add_left * geometry_.resolution;
  geometry_.origin_y -= add_bottom * geometry_.resolution;
  geometry_.width = w;
  geometry_.height = h;
  cells_ = std::move(cells);
  stamp_.assign(cells_.size(), 0);
}

void OccupancyGrid::integrate_scan(const Scan2D& scan, const PoseSE3& pose) {
  if (!pose.is_finite()) throw PreconditionError("integrate_scan: pose is not finite");
  integrate_endpoints(pose.translation().x(), pose.translation().y(), scan2d_to_endpoints(scan, pose));
}

void OccupancyGrid::integrate_endpoints(double sensor_x, double sensor_y, const std::vector<Endpoint>& endpoints) {
  if (endpoints.empty()) return;
  double min_x = sensor_x, max_x = sensor_x, min_y = sensor_y, max_y = sensor_y;
  for (const auto& e : endpoints) {
    min_x = std::min(min_x, e.x);
    max_x = std::max(max_x, e.x);
    min_y = std::min(min_y, e.y);
    max_y = std::max(max_y, e.y);
  }
  ensure_contains(min_x, min_y, max_x, max_y);

  ++scan_counter_;
  const std::uint32_t miss_mark = 2 * scan_counter_;
  const std::uint32_t hit_mark = miss_mark + 1;
  auto apply = [this](Cell& c, double delta) {
    c.log_odds = std::clamp(c.log_odds + delta, cfg_.clamp_min, cfg_.clamp_max);
    c.observed = true;
  };

  std::vector<std::size_t> endpoint_cells;
  endpoint_cells.reserve(endpoints.size());
  for (const auto& e : endpoints) {
    const auto [cx, cy] = world_to_cell(e.x, e.y);
    if (!contains(cx, cy)) {
      // Only reachable through rounding right at the expanded boundary.
      endpoint_cells.push_back(cells_.size());
      continue;
    }
    const std::size_t i = index(cx, cy);
    endpoint_cells.push_back(i);
    Cell& c = cells_[i];
    ++c.hits;
    c.mean_intensity += (e.intensity - c.mean_intensity) / static_cast<double>(c.hits);
    if (stamp_[i] != hit_mark) {
      stamp_[i] = hit_mark;
      apply(c, cfg_.l_hit);
    }
  }

  const double res = geometry_.resolution;
  const double u0 = (sensor_x - geometry_.origin_x) / res;
  const double v0 = (sensor_y - geometry_.origin_y) / res;
  for (std::size_t k = 0; k < endpoints.size(); ++k) {
    const double u1 = (endpoints[k].x - geometry_.origin_x) / res;
    const double v1 = (endpoints[k].y - geometry_.origin_y) / res;
    const std::size_t end_cell = endpoint_cells[k];
    traverse_supercover(u0, v0, u1, v1, [&](int cx, int cy) {
      if (!contains(cx, cy)) return;
      const std::size_t i = index(cx, cy);
      if (i == end_cell || stamp_[i] == hit_mark || stamp_[i] == miss_mark) return;
      stamp_[i] = miss_mark;
      apply(cells_[i], cfg_.l_miss);
    });
  }
}

DiscreteMap input_filter(const OccupancyGrid& grid, const FiltrationConfig& cfg) {
  DiscreteMap out(grid.geometry(), kUnknown);
  const int h = grid.height();
  for (int row = 0; row < h; ++row) {
    const int cy = h - 1 - row;
    for (int cx = 0; cx < grid.width(); ++cx) {
      if (!grid.cell(cx, cy).observed) {
        out.at(row, cx) = cfg.c3;
        continue;
      }
      out.at(row, cx) = cfg.classify_input(grid.likelihood(cx, cy));
    }
  }
  return out;
}

OccupancyGrid lift_to_grid(const DiscreteMap& map, const FiltrationConfig& cfg) {
  EvidenceConfig ecfg;
  ecfg.resolution = map.geometry.resolution;
  OccupancyGrid grid(map.geometry, ecfg);
  const double mid = 0.5 * (cfg.t2 + cfg.t3);
  const double occupied_log_odds = std::log(mid / (1.0 - mid));
  const int h = map.height();
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < map.width(); ++col) {
      const auto v = map.at(row, col);
      auto& c = grid.cell(col, h - 1 - row);
      if (v == cfg.c1) {
        c.observed = true;
        c.log_odds = ecfg.clamp_min;
      } else if (v == cfg.c2) {
        c.observed = true;
        c.log_odds = occupied_log_odds;
      }
    }
  }
  return grid;
}

DiscreteMap remove_floating_points(const DiscreteMap& map, const FiltrationConfig& cfg) {
  if (!map.is_discretized()) {
    throw PreconditionError("remove_floating_points: map holds values outside {0, 100, 255}");
  }
  DiscreteMap out = map;
  const int w = map.width();
  const int h = map.height();
  constexpr int dr[4] = {-1, 1, 0, 0};
  constexpr int dc[4] = {0, 0, -1, 1};
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const auto v = map.at(row, col);
      if (v == kUnknown) continue;
      int same = 0;
      for (int k = 0; k < 4; ++k) {
        const int r = row + dr[k];
        const int c = col + dc[k];
        if (r >= 0 && r < h && c >= 0 && c < w && map.at(r, c) == v) ++same;
      }
      if (same < cfg.neighbor_min) out.at(row, col) = kUnknown;
    }
  }
  return out;
}

DiscreteMap output_filter(const LikelihoodMap& map, const FiltrationConfig& cfg) {
  DiscreteMap out(map.geometry, kUnknown);
  for (std::size_t i = 0; i < map.cells.size(); ++i) out.cells[i] = cfg.classify_output(map.cells[i]);
  return out;
}

LikelihoodMap to_likelihood(const DiscreteMap& map) {
  LikelihoodMap out(map.geometry, 0.0f);
  for (std::size_t i = 0; i < map.cells.size(); ++i) out.cells[i] = static_cast<float>(map.cells[i]) / 255.0f;
  return out;
}

void Trajectory::record(std::uint64_t scan_index, const PoseSE3& pose) {
  if (!entries_.empty() && scan_index <= entries_.back().scan_index) {
    throw PreconditionError(fmt::format("record_pose: scan index {} does not follow {}", scan_index,
                                        entries_.back().scan_index));
  }
  entries_.push_back({scan_index, pose});
}

void Trajectory::write_tum(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write trajectory '{}'", path.string()));
  for (const auto& e : entries_) {
    const auto& t = e.pose.translation();
    const auto& q = e.pose.rotation();
    out << fmt::format("{} {} {} {} {} {} {} {}\n", e.scan_index, t.x(), t.y(), t.z(), q.w(), q.x(), q.y(), q.z());
  }
}

Trajectory Trajectory::read_tum(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open trajectory '{}'", path.string()));
  Trajectory traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::uint64_t k = 0;
    double tx, ty, tz, qw, qx, qy, qz;
    if (!(ls >> k >> tx >> ty >> tz >> qw >> qx >> qy >> qz)) {
      throw FormatError(fmt::format("{}:{}: expected 'k tx ty tz qw qx qy qz'", path.string(), lineno));
    }
    traj.record(k, PoseSE3(Eigen::Quaterniond(qw, qx, qy, qz), {tx, ty, tz}));
  }
  return traj;
}

Trajectory record_pose(Trajectory traj, std::uint64_t scan_index, const PoseSE3& pose) {
  traj.record(scan_index, pose);
  return traj;
}

std::filesystem::path metadata_path(const std::filesystem::path& image_path) {
  auto p = image_path;
  p.replace_extension(".meta");
  return p;
}

void write_map(const std::filesystem::path& image_path, const DiscreteMap& map,
               const std::optional<FiltrationConfig>& thresholds) {
  GrayImage img{map.width(), map.height(), map.cells};
  write_pgm(image_path, img);
  std::ofstream meta(metadata_path(image_path), std::ios::trunc);
  if (!meta) throw IoError(fmt::format("cannot write '{}'", metadata_path(image_path).string()));
  const auto& g = map.geometry;
  meta << "# occupancy map metadata\n"
       << "# Pixel (i, j) is image row i from the top and column j from the left.\n"
       << "# Row 0 holds the largest y; the origin is the world position of the\n"
       << "# lower-left corner of pixel (height-1, 0).\n"
       << "# Codes: 0 free, 100 occupied, 255 unknown.\n"
       << "image: " << image_path.filename().string() << "\n"
       << fmt::format("width: {}\nheight: {}\nresolution: {}\n", g.width, g.height, g.resolution)
       << fmt::format("origin_x: {}\norigin_y: {}\norigin_yaw: {}\n", g.origin_x, g.origin_y, g.origin_yaw);
  if (thresholds) {
    const auto& t = *thresholds;
    meta << fmt::format("t1: {}\nt2: {}\nt3: {}\nt1_out: {}\nt2_out: {}\nneighbor_min: {}\n", t.t1, t.t2, t.t3,
                        t.t1_out, t.t2_out, t.neighbor_min);
  }
  if (!meta) throw IoError(fmt::format("failed writing '{}'", metadata_path(image_path).string()));
}

DiscreteMap read_map(const std::filesystem::path& image_path) {
  const auto meta_path = metadata_path(image_path);
  if (!std::filesystem::exists(meta_path)) {
    throw DataError(fmt::format("map '{}' has no metadata file '{}'", image_path.string(), meta_path.string()));
  }
  std::ifstream in(meta_path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw FormatError(fmt::format("{}: bad line '{}'", meta_path.string(), line));
    auto value = line.substr(colon + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    kv[line.substr(0, colon)] = value;
  }
  auto number = [&](const char* key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(fmt::format("{}: missing '{}'", meta_path.string(), key));
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw FormatError(fmt::format("{}: '{}' is not a number", meta_path.string(), key));
    }
  };
  MapGeometry g;
  g.width = static_cast<int>(number("width"));
  g.height = static_cast<int>(number("height"));
  g.resolution = number("resolution");
  g.origin_x = number("origin_x");
  g.origin_y = number("origin_y");
  g.origin_yaw = kv.count("origin_yaw") ? number("origin_yaw") : 0.0;
  if (!(g.resolution > 0.0)) throw FormatError(fmt::format("{}: resolution must be > 0", meta_path.string()));

  const auto img = read_gray_image(image_path);
  if (img.width != g.width || img.height != g.height) {
    throw FormatError(fmt::format("{}: image is {}x{} but metadata says {}x{}", image_path.string(), img.width,
                                  img.height, g.width, g.height));
  }
  DiscreteMap map;
  map.geometry = g;
  map.cells = img.pixels;
  return map;
}

}  // namespace ttogm
