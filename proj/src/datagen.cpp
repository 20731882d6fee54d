#include "ttogm/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ttogm/error.hpp"
#include "ttogm/eval.hpp"
#include "ttogm/grid_line.hpp"
#include "ttogm/image_io.hpp"

namespace ttogm {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();
// Fractional beam offset (golden-ratio based): keeps beams off cell corners.
constexpr double kBeamPhase = 0.38196601125010515;

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0) a += 2.0 * kPi;
  return a - kPi;
}

/// Uniform doubles from a fully specified engine, so streams are identical
/// across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t bits() { return engine_(); }
  bool coin(double p = 0.5) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Walks the cells of a W x H lattice (cell (cx, cy) spans
/// [cx*res, (cx+1)*res) x [cy*res, (cy+1)*res)) met by the ray from (x, y)
/// along the unit direction (dx, dy), in order of entry distance. Stops when
/// the ray leaves the lattice, reaches t_max, or `visit` returns false.
/// `visit(cx, cy, t_in, t_out)`. At an exact corner crossing both side cells
/// are reported (with t_in == t_out) before the diagonal cell.
template <class Visit>
void walk_ray(double x, double y, double dx, double dy, double res, int w, int h, double t_max, Visit&& visit) {
  int cx = static_cast<int>(std::floor(x / res));
  int cy = static_cast<int>(std::floor(y / res));
  const int sx = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int sy = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  auto inside = [&](int i, int j) { return i >= 0 && j >= 0 && i < w && j < h; };
  double t_in = 0.0;
  while (inside(cx, cy) && t_in < t_max) {
    const double tx = sx > 0 ? (static_cast<double>(cx + 1) * res - x) / dx
                             : (sx < 0 ? (static_cast<double>(cx) * res - x) / dx : kInf);
    const double ty = sy > 0 ? (static_cast<double>(cy + 1) * res - y) / dy
                             : (sy < 0 ? (static_cast<double>(cy) * res - y) / dy : kInf);
    const double t_out = std::min(tx, ty);
    if (!visit(cx, cy, t_in, t_out)) return;
    if (tx < ty) {
      cx += sx;
      t_in = tx;
    } else if (ty < tx) {
      cy += sy;
      t_in = ty;
    } else {
      if (!(tx < t_max)) return;
      if (inside(cx + sx, cy) && !visit(cx + sx, cy, tx, tx)) return;
      if (inside(cx, cy + sy) && !visit(cx, cy + sy, tx, tx)) return;
      cx += sx;
      cy += sy;
      t_in = tx;
    }
  }
}

/// Image-order index of lattice cell (cx, cy).
inline int image_index(int cx, int cy, int w, int h) { return (h - 1 - cy) * w + cx; }

struct RayCell {
  int index;
  bool occupied;
  double t_in;
  double t_out;
};

/// Outcome of one ray through the true floorplan.
struct Cast {
  std::vector<int> free_cells;
  std::vector<int> hit_cells;
  bool hit = false;
  double range = 0.0;  // distance to the middle of the hit cell's chord
};

/// Ray through the floorplan. Cells entered before the first occupied cell
/// are free; the occupied cells entered at that same distance are hits.
/// With a passthrough probability, thin obstacles may be crossed as if free.
Cast cast_ray(const FloorplanRaster& fp, double x, double y, double angle, const RenderConfig& cfg,
              double passthrough_rate, Rng* rng, std::vector<RayCell>& scratch) {
  scratch.clear();
  walk_ray(x, y, std::cos(angle), std::sin(angle), fp.resolution, fp.width, fp.height, cfg.max_range,
           [&](int cx, int cy, double t_in, double t_out) {
             const int idx = image_index(cx, cy, fp.width, fp.height);
             scratch.push_back({idx, fp.occupied[static_cast<std::size_t>(idx)] != 0, t_in, t_out});
             return true;
           });
  Cast out;
  const std::size_t n = scratch.size();
  std::size_t first_hit = n;
  std::vector<std::uint8_t> passed;
  std::size_t i = 0;
  while (i < n) {
    if (!scratch[i].occupied) {
      ++i;
      continue;
    }
    if (passthrough_rate > 0.0 && rng != nullptr) {
      std::size_t j = i;
      while (j < n && scratch[j].occupied) ++j;
      if (j < n && static_cast<int>(j - i) <= cfg.thin_cells && rng->coin(passthrough_rate)) {
        i = j;
        continue;
      }
    }
    first_hit = i;
    break;
  }
  if (first_hit == n) {
    for (const auto& c : scratch) out.free_cells.push_back(c.index);
    return out;
  }
  const double t_hit = scratch[first_hit].t_in;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = scratch[k];
    if (k < first_hit && c.t_in < t_hit) {
      out.free_cells.push_back(c.index);
    } else if (c.t_in == t_hit && c.occupied) {
      out.hit_cells.push_back(c.index);
    } else if (c.t_in > t_hit) {
      break;
    }
  }
  out.hit = true;
  out.range = 0.5 * (t_hit + scratch[first_hit].t_out);
  return out;
}

/// Per-cell ray statistics combined into a map: occupied when evidence from
/// hits outweighs evidence from pass-throughs.
struct RayCounts {
  std::vector<std::uint32_t> hits;
  std::vector<std::uint32_t> misses;

  explicit RayCounts(std::size_t n) : hits(n, 0), misses(n, 0) {}

  void add(const std::vector<int>& free_cells, const std::vector<int>& hit_cells) {
    for (int i : free_cells) ++misses[static_cast<std::size_t>(i)];
    for (int i : hit_cells) ++hits[static_cast<std::size_t>(i)];
  }

  DiscreteMap to_map(const MapGeometry& g) const {
    DiscreteMap m(g, kUnknown);
    for (std::size_t i = 0; i < m.cells.size(); ++i) {
      const double score = 0.85 * hits[i] - 0.4 * misses[i];
      if (hits[i] > 0 && score > 0.0) {
        m.cells[i] = kOccupied;
      } else if (misses[i] > 0) {
        m.cells[i] = kFree;
      }
    }
    return m;
  }
};

// ------------------------------------------------------------ floorplans

void set_occupied(FloorplanRaster& fp, double x0, double y0, double x1, double y1) { fp.fill_box(x0, y0, x1, y1, 1); }
void set_free(FloorplanRaster& fp, double x0, double y0, double x1, double y1) { fp.fill_box(x0, y0, x1, y1, 0); }

int count_largest_free_component(const FloorplanRaster& fp) {
  std::vector<std::uint8_t> seen(fp.occupied.size(), 0);
  int best = 0;
  std::vector<int> stack;
  for (std::size_t s = 0; s < fp.occupied.size(); ++s) {
    if (fp.occupied[s] || seen[s]) continue;
    int size = 0;
    stack.assign(1, static_cast<int>(s));
    seen[s] = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      ++size;
      const int r = i / fp.width, c = i % fp.width;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& n : nbr) {
        if (!fp.inside(n[0], n[1])) continue;
        const auto j = static_cast<std::size_t>(n[0] * fp.width + n[1]);
        if (fp.occupied[j] || seen[j]) continue;
        seen[j] = 1;
        stack.push_back(static_cast<int>(j));
      }
    }
    best = std::max(best, size);
  }
  return best;
}

// ------------------------------------------------------------ planning

struct Cell2 {
  int row;
  int col;
};

std::pair<double, double> cell_world(const FloorplanRaster& fp, int row, int col) {
  return {(col + 0.5) * fp.resolution, (fp.height - row - 0.5) * fp.resolution};
}

/// Approximate Euclidean distance (cells) to the nearest occupied cell or
/// the raster border; two-pass chamfer with 1 / sqrt(2) weights.
std::vector<double> clearance_cells(const FloorplanRaster& fp) {
  const int w = fp.width, h = fp.height;
  std::vector<double> d(fp.occupied.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const bool border = r == 0 || c == 0 || r == h - 1 || c == w - 1;
      d[static_cast<std::size_t>(r * w + c)] = fp.at(r, c) ? 0.0 : (border ? 1.0 : kInf);
    }
  }
  const double diag = std::numbers::sqrt2;
  auto relax = [&](int r, int c, int rr, int cc, double wgt) {
    if (rr < 0 || cc < 0 || rr >= h || cc >= w) return;
    auto& v = d[static_cast<std::size_t>(r * w + c)];
    v = std::min(v, d[static_cast<std::size_t>(rr * w + cc)] + wgt);
  };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      relax(r, c, r - 1, c, 1.0);
      relax(r, c, r, c - 1, 1.0);
      relax(r, c, r - 1, c - 1, diag);
      relax(r, c, r - 1, c + 1, diag);
    }
  }
  for (int r = h - 1; r >= 0; --r) {
    for (int c = w - 1; c >= 0; --c) {
      relax(r, c, r + 1, c, 1.0);
      relax(r, c, r, c + 1, 1.0);
      relax(r, c, r + 1, c + 1, diag);
      relax(r, c, r + 1, c - 1, diag);
    }
  }
  return d;
}

/// Free cells visible from a world point within `radius` using `rays` rays.
void visible_cells(const FloorplanRaster& fp, double x, double y, double radius, int rays,
                   std::vector<std::uint32_t>& stamp, std::uint32_t tag, std::vector<int>& out) {
  for (int k = 0; k < rays; ++k) {
    const double a = 2.0 * kPi * (k + kBeamPhase) / rays;
    walk_ray(x, y, std::cos(a), std::sin(a), fp.resolution, fp.width, fp.height, radius,
             [&](int cx, int cy, double, double) {
               const int idx = image_index(cx, cy, fp.width, fp.height);
               if (fp.occupied[static_cast<std::size_t>(idx)]) return false;
               if (stamp[static_cast<std::size_t>(idx)] != tag) {
                 stamp[static_cast<std::size_t>(idx)] = tag;
                 out.push_back(idx);
               }
               return true;
             });
  }
}

/// 8-connected breadth-first search over `allowed` cells from `start`.
void bfs(const FloorplanRaster& fp, const std::vector<std::uint8_t>& allowed, int start, std::vector<int>& dist,
         std::vector<int>& parent) {
  dist.assign(allowed.size(), -1);
  parent.assign(allowed.size(), -1);
  std::deque<int> queue{start};
  dist[static_cast<std::size_t>(start)] = 0;
  static constexpr int kDr[8] = {-1, 1, 0, 0, -1, -1, 1, 1};
  static constexpr int kDc[8] = {0, 0, -1, 1, -1, 1, -1, 1};
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    const int r = i / fp.width, c = i % fp.width;
    for (int k = 0; k < 8; ++k) {
      const int rr = r + kDr[k], cc = c + kDc[k];
      if (!fp.inside(rr, cc)) continue;
      const int j = rr * fp.width + cc;
      if (!allowed[static_cast<std::size_t>(j)] || dist[static_cast<std::size_t>(j)] >= 0) continue;
      // No diagonal corner cutting.
      if (k >= 4 && (!allowed[static_cast<std::size_t>(r * fp.width + cc)] ||
                     !allowed[static_cast<std::size_t>(rr * fp.width + c)])) {
        continue;
      }
      dist[static_cast<std::size_t>(j)] = dist[static_cast<std::size_t>(i)] + 1;
      parent[static_cast<std::size_t>(j)] = i;
      queue.push_back(j);
    }
  }
}

bool line_of_sight(const FloorplanRaster& fp, const std::vector<std::uint8_t>& allowed, int a, int b) {
  const int ar = a / fp.width, ac = a % fp.width, br = b / fp.width, bc = b % fp.width;
  bool ok = true;
  traverse_supercover(ac + 0.5, ar + 0.5, bc + 0.5, br + 0.5, [&](int c, int r) {
    if (!fp.inside(r, c) || !allowed[static_cast<std::size_t>(r * fp.width + c)]) ok = false;
  });
  return ok;
}

}  // namespace

// ------------------------------------------------------------ FloorplanRaster

MapGeometry FloorplanRaster::geometry() const {
  MapGeometry g;
  g.width = width;
  g.height = height;
  g.resolution = resolution;
  return g;
}

DiscreteMap FloorplanRaster::truth_map() const {
  DiscreteMap m(geometry(), kFree);
  for (std::size_t i = 0; i < occupied.size(); ++i) m.cells[i] = occupied[i] ? kOccupied : kFree;
  return m;
}

void FloorplanRaster::fill_box(double x0, double y0, double x1, double y1, std::uint8_t value) {
  const int c0 = std::max(0, static_cast<int>(std::ceil(x0 / resolution - 0.5)));
  const int c1 = std::min(width - 1, static_cast<int>(std::floor(x1 / resolution - 0.5)));
  const int cy0 = std::max(0, static_cast<int>(std::ceil(y0 / resolution - 0.5)));
  const int cy1 = std::min(height - 1, static_cast<int>(std::floor(y1 / resolution - 0.5)));
  for (int cy = cy0; cy <= cy1; ++cy) {
    for (int c = c0; c <= c1; ++c) at(height - 1 - cy, c) = value;
  }
}

void check_traversable(const FloorplanRaster& fp) {
  if (fp.width <= 0 || fp.height <= 0 || fp.occupied.size() != static_cast<std::size_t>(fp.width) * fp.height) {
    throw DataError(fmt::format("floorplan '{}' is empty or malformed", fp.id));
  }
  const int largest = count_largest_free_component(fp);
  if (largest < 100) {
    throw DataError(fmt::format("floorplan '{}' has no traversable region (largest free area {} cells, need 100)",
                                fp.id, largest));
  }
}

FloorplanRaster load_floorplan(const std::filesystem::path& path, double resolution) {
  if (!(resolution > 0.0)) throw ConfigError(fmt::format("floorplan resolution must be > 0, got {}", resolution));
  const GrayImage img = read_gray_image(path);
  FloorplanRaster fp(img.width, img.height, resolution);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) fp.occupied[i] = img.pixels[i] < 128 ? 1 : 0;
  fp.id = path.filename().string();
  check_traversable(fp);
  return fp;
}

void write_floorplan(const std::filesystem::path& path, const FloorplanRaster& fp) {
  GrayImage img;
  img.width = fp.width;
  img.height = fp.height;
  img.pixels.resize(fp.occupied.size());
  for (std::size_t i = 0; i < fp.occupied.size(); ++i) img.pixels[i] = fp.occupied[i] ? 0 : 255;
  write_pgm(path, img);
}

FloorplanRaster corridor_room_world(double resolution) {
  const double w = 20.0, h = 10.0, t = 0.2;
  FloorplanRaster fp(static_cast<int>(std::lround(w / resolution)), static_cast<int>(std::lround(h / resolution)),
                     resolution, 1);
  fp.id = "corridor_room";
  set_free(fp, t, t, w - t, h - t);
  // Corridor along the south side, separated from the rooms by a wall with doors.
  set_occupied(fp, t, 2.6, w - t, 2.8);
  set_free(fp, 3.0, 2.6, 4.0, 2.8);
  set_free(fp, 9.5, 2.6, 10.5, 2.8);
  set_free(fp, 16.0, 2.6, 17.0, 2.8);
  // Room partitions: a solid wall with a door, and a glass pane.
  set_occupied(fp, 6.6, 2.8, 6.8, h - t);
  set_free(fp, 6.6, 6.5, 6.8, 7.5);
  set_occupied(fp, 13.3, 2.8, 13.35, h - t);
  set_free(fp, 13.3, 8.2, 13.35, 9.2);
  // Furniture and a corridor pillar.
  set_occupied(fp, 1.5, 5.5, 3.0, 6.5);
  set_occupied(fp, 4.8, 8.6, 6.6, 9.8);
  set_occupied(fp, 9.0, 7.5, 11.0, 8.5);
  set_occupied(fp, 11.8, 4.0, 12.4, 4.6);
  set_occupied(fp, 17.5, 4.0, w - t, 4.6);
  set_occupied(fp, 15.0, 7.0, 16.2, 7.8);
  set_occupied(fp, 12.0, 1.2, 12.3, 1.5);
  check_traversable(fp);
  return fp;
}

FloorplanRaster corridor_world(double length, double width, double resolution) {
  const double t = 0.2;
  if (!(length > 1.0 && width > 0.5)) {
    throw ConfigError(fmt::format("corridor must be longer than 1 m and wider than 0.5 m, got {} x {}", length, width));
  }
  FloorplanRaster fp(static_cast<int>(std::lround((length + 2 * t) / resolution)),
                     static_cast<int>(std::lround((width + 2 * t) / resolution)), resolution, 1);
  fp.id = "corridor";
  set_free(fp, t, t, t + length, t + width);
  check_traversable(fp);
  return fp;
}

FloorplanRaster random_floorplan(std::uint64_t seed, double resolution) {
  Rng rng(splitmix64(seed ^ 0x466c6f6f72ull));
  const double w = std::round(rng.uniform(8.0, 14.0) / resolution) * resolution;
  const double h = std::round(rng.uniform(6.0, 10.0) / resolution) * resolution;
  const double t = 0.15;
  FloorplanRaster fp(static_cast<int>(std::lround(w / resolution)), static_cast<int>(std::lround(h / resolution)),
                     resolution, 1);
  fp.id = fmt::format("random_{}", seed);
  set_free(fp, t, t, w - t, h - t);

  struct Door {
    double x, y;
  };
  std::vector<Door> doors;
  struct Room {
    double x0, y0, x1, y1;
    int depth;
  };
  std::vector<Room> leaves;
  std::vector<Room> stack{{t, t, w - t, h - t, 0}};
  while (!stack.empty()) {
    const Room r = stack.back();
    stack.pop_back();
    const double rw = r.x1 - r.x0, rh = r.y1 - r.y0;
    const bool can_split = (rw > 3.5 || rh > 3.5) && r.depth < 4 && (r.depth < 1 || rng.coin(0.8));
    if (!can_split) {
      leaves.push_back(r);
      continue;
    }
    const bool vertical = rw >= rh;  // wall runs along y
    const double thick = rng.coin(0.25) ? resolution : 2 * resolution;
    const double lo = (vertical ? r.x0 : r.y0) + 1.5, hi = (vertical ? r.x1 : r.y1) - 1.5;
    double pos = 0.5 * (lo + hi);
    for (int attempt = 0; attempt < 12; ++attempt) {
      const double cand = rng.uniform(lo, hi);
      const bool near_door = std::any_of(doors.begin(), doors.end(), [&](const Door& d) {
        return vertical ? std::abs(d.x - cand) < 0.7 && d.y >= r.y0 - 0.3 && d.y <= r.y1 + 0.3
                        : std::abs(d.y - cand) < 0.7 && d.x >= r.x0 - 0.3 && d.x <= r.x1 + 0.3;
      });
      if (!near_door) {
        pos = cand;
        break;
      }
    }
    pos = std::round(pos / resolution) * resolution;
    const double span_lo = vertical ? r.y0 : r.x0, span_hi = vertical ? r.y1 : r.x1;
    const double door = std::round(rng.uniform(span_lo + 0.2 + 0.45, span_hi - 0.2 - 0.45) / resolution) * resolution;
    if (vertical) {
      set_occupied(fp, pos, r.y0, pos + thick, r.y1);
      set_free(fp, pos, door - 0.45, pos + thick, door + 0.45);
      doors.push_back({pos + 0.5 * thick, door});
      stack.push_back({r.x0, r.y0, pos, r.y1, r.depth + 1});
      stack.push_back({pos + thick, r.y0, r.x1, r.y1, r.depth + 1});
    } else {
      set_occupied(fp, r.x0, pos, r.x1, pos + thick);
      set_free(fp, door - 0.45, pos, door + 0.45, pos + thick);
      doors.push_back({door, pos + 0.5 * thick});
      stack.push_back({r.x0, r.y0, r.x1, pos, r.depth + 1});
      stack.push_back({r.x0, pos + thick, r.x1, r.y1, r.depth + 1});
    }
  }
  for (const auto& r : leaves) {
    const int items = static_cast<int>(rng.bits() % 3);
    for (int k = 0; k < items; ++k) {
      const double bw = rng.uniform(0.4, 1.0), bh = rng.uniform(0.4, 1.0);
      const double m = 0.7;
      if (r.x1 - r.x0 < bw + 2 * m || r.y1 - r.y0 < bh + 2 * m) continue;
      const double bx = rng.uniform(r.x0 + m, r.x1 - m - bw), by = rng.uniform(r.y0 + m, r.y1 - m - bh);
      set_occupied(fp, bx, by, bx + bw, by + bh);
    }
  }
  check_traversable(fp);
  return fp;
}

// ------------------------------------------------------------ planning

void PlannerConfig::validate() const {
  if (!(step > 0.0)) throw ConfigError(fmt::format("planner step must be > 0, got {}", step));
  if (!(clearance >= 0.0)) throw ConfigError(fmt::format("planner clearance must be >= 0, got {}", clearance));
  if (!(view_radius > 0.0)) throw ConfigError(fmt::format("planner view_radius must be > 0, got {}", view_radius));
  if (!(viewpoint_spacing > 0.0)) {
    throw ConfigError(fmt::format("planner viewpoint_spacing must be > 0, got {}", viewpoint_spacing));
  }
  if (!(max_yaw_step_deg > 0.0 && max_yaw_step_deg <= 180.0)) {
    throw ConfigError(fmt::format("planner max_yaw_step_deg must be in (0, 180], got {}", max_yaw_step_deg));
  }
  if (!(coverage_goal > 0.0 && coverage_goal <= 1.0)) {
    throw ConfigError(fmt::format("planner coverage_goal must be in (0, 1], got {}", coverage_goal));
  }
  if (visibility_rays < 8) throw ConfigError(fmt::format("planner visibility_rays must be >= 8, got {}", visibility_rays));
}

std::vector<Pose2D> plan_trajectory(const FloorplanRaster& fp, std::uint64_t seed, const PlannerConfig& cfg) {
  cfg.validate();
  check_traversable(fp);
  Rng rng(splitmix64(seed ^ 0x506c616eull));
  const std::size_t n = fp.occupied.size();
  const auto clearance = clearance_cells(fp);
  double max_clear = 0.0;
  for (double c : clearance) {
    if (std::isfinite(c)) max_clear = std::max(max_clear, c);
  }
  const double need = std::min(cfg.clearance / fp.resolution, 0.6 * max_clear);
  std::vector<std::uint8_t> safe(n, 0);
  for (std::size_t i = 0; i < n; ++i) safe[i] = !fp.occupied[i] && clearance[i] >= need ? 1 : 0;

  // Largest 8-connected safe component.
  std::vector<int> comp(n, -1);
  int best_comp = -1, best_size = 0, comp_count = 0;
  std::vector<int> dist, parent;
  for (std::size_t s = 0; s < n; ++s) {
    if (!safe[s] || comp[s] >= 0) continue;
    bfs(fp, safe, static_cast<int>(s), dist, parent);
    int size = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (dist[i] >= 0) {
        comp[i] = comp_count;
        ++size;
      }
    }
    if (size > best_size) {
      best_size = size;
      best_comp = comp_count;
    }
    ++comp_count;
  }
  if (best_comp < 0) throw DataError(fmt::format("floorplan '{}' has no cell with enough clearance", fp.id));
  std::vector<std::uint8_t> region(n, 0);
  for (std::size_t i = 0; i < n; ++i) region[i] = comp[i] == best_comp ? 1 : 0;

  // Candidate viewpoints on a seeded lattice inside the region.
  const int spacing = std::max(1, static_cast<int>(std::lround(cfg.viewpoint_spacing / fp.resolution)));
  const int off_r = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(spacing));
  const int off_c = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(spacing));
  std::vector<int> candidates;
  int widest = -1;
  for (int r = 0; r < fp.height; ++r) {
    for (int c = 0; c < fp.width; ++c) {
      const int i = r * fp.width + c;
      if (!region[static_cast<std::size_t>(i)]) continue;
      if (widest < 0 || clearance[static_cast<std::size_t>(i)] > clearance[static_cast<std::size_t>(widest)]) widest = i;
      if ((r - off_r) % spacing == 0 && (c - off_c) % spacing == 0) candidates.push_back(i);
    }
  }
  if (candidates.empty()) candidates.push_back(widest);

  // Greedy coverage of what the candidates can see.
  std::vector<std::vector<int>> vis(candidates.size());
  std::vector<std::uint32_t> stamp(n, 0);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto [x, y] = cell_world(fp, candidates[k] / fp.width, candidates[k] % fp.width);
    visible_cells(fp, x, y, cfg.view_radius, cfg.visibility_rays, stamp, static_cast<std::uint32_t>(k + 1), vis[k]);
  }
  std::vector<std::uint8_t> seen_any(n, 0), covered(n, 0);
  std::size_t universe = 0;
  for (const auto& v : vis) {
    for (int i : v) {
      if (!seen_any[static_cast<std::size_t>(i)]) {
        seen_any[static_cast<std::size_t>(i)] = 1;
        ++universe;
      }
    }
  }
  std::vector<int> chosen;
  std::size_t covered_count = 0;
  std::vector<std::uint8_t> used(candidates.size(), 0);
  while (static_cast<double>(covered_count) < cfg.coverage_goal * static_cast<double>(universe)) {
    std::size_t best = candidates.size(), best_gain = 0;
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      if (used[k]) continue;
      std::size_t gain = 0;
      for (int i : vis[k]) gain += covered[static_cast<std::size_t>(i)] ? 0 : 1;
      if (gain > best_gain) {
        best_gain = gain;
        best = k;
      }
    }
    if (best == candidates.size()) break;
    used[best] = 1;
    chosen.push_back(candidates[best]);
    for (int i : vis[best]) {
      if (!covered[static_cast<std::size_t>(i)]) {
        covered[static_cast<std::size_t>(i)] = 1;
        ++covered_count;
      }
    }
  }
  if (chosen.empty()) chosen.push_back(candidates.front());

  // Visit order: seeded start, then nearest unvisited by path length.
  std::vector<int> cells;           // concatenated cell path
  std::vector<std::size_t> stops;   // positions of viewpoints in `cells`
  std::size_t current = static_cast<std::size_t>(rng.bits() % chosen.size());
  std::vector<std::uint8_t> visited(chosen.size(), 0);
  visited[current] = 1;
  cells.push_back(chosen[current]);
  stops.push_back(0);
  for (std::size_t step = 1; step < chosen.size(); ++step) {
    bfs(fp, region, chosen[current], dist, parent);
    std::size_t next = chosen.size();
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      if (visited[k] || dist[static_cast<std::size_t>(chosen[k])] < 0) continue;
      if (next == chosen.size() || dist[static_cast<std::size_t>(chosen[k])] < dist[static_cast<std::size_t>(chosen[next])]) {
        next = k;
      }
    }
    if (next == chosen.size()) break;
    std::vector<int> path;
    for (int i = chosen[next]; i != chosen[current]; i = parent[static_cast<std::size_t>(i)]) path.push_back(i);
    cells.insert(cells.end(), path.rbegin(), path.rend());
    stops.push_back(cells.size() - 1);
    visited[next] = 1;
    current = next;
  }

  spdlog::debug("planner: {} candidates, {} viewpoints, {}/{} cells covered, path {} cells", candidates.size(),
                chosen.size(), covered_count, universe, cells.size());
  // Shortcut the cell path where the straight line stays in the region,
  // never skipping a viewpoint.
  std::vector<int> waypoints{cells.front()};
  std::size_t anchor = 0;
  std::size_t stop = 0;
  while (anchor + 1 < cells.size()) {
    while (stops[stop] <= anchor) ++stop;
    std::size_t far = anchor + 1;
    const std::size_t limit = std::min(stops[stop], anchor + 120);
    for (std::size_t j = limit; j > anchor + 1; --j) {
      if (line_of_sight(fp, region, cells[anchor], cells[j])) {
        far = j;
        break;
      }
    }
    waypoints.push_back(cells[far]);
    anchor = far;
  }

  // Resample the polyline at `step` and attach headings.
  std::vector<std::pair<double, double>> pts;
  for (int i : waypoints) pts.push_back(cell_world(fp, i / fp.width, i % fp.width));
  std::vector<Pose2D> out;
  if (pts.size() == 1) {
    const double turn = cfg.max_yaw_step_deg * kPi / 180.0;
    const int spins = static_cast<int>(std::ceil(2.0 * kPi / turn));
    for (int k = 0; k < spins; ++k) out.push_back({pts[0].first, pts[0].second, wrap_angle(k * turn)});
    return out;
  }
  double carry = 0.0;
  for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
    const double dx = pts[s + 1].first - pts[s].first, dy = pts[s + 1].second - pts[s].second;
    const double len = std::hypot(dx, dy);
    const double yaw = std::atan2(dy, dx);
    double d = carry;
    while (d < len) {
      out.push_back({pts[s].first + dx * d / len, pts[s].second + dy * d / len, yaw});
      d += cfg.step;
    }
    carry = d - len;
  }
  {
    const auto& a = pts[pts.size() - 2];
    const auto& b = pts.back();
    out.push_back({b.first, b.second, std::atan2(b.second - a.second, b.first - a.first)});
  }
  // Turn in place where the heading changes too much between poses.
  const double max_turn = cfg.max_yaw_step_deg * kPi / 180.0;
  std::vector<Pose2D> smooth{out.front()};
  for (std::size_t k = 1; k < out.size(); ++k) {
    const Pose2D prev = smooth.back();
    const double delta = wrap_angle(out[k].yaw - prev.yaw);
    const int extra = static_cast<int>(std::ceil(std::abs(delta) / max_turn - 1e-9)) - 1;
    for (int e = 1; e <= extra; ++e) {
      smooth.push_back({prev.x, prev.y, wrap_angle(prev.yaw + delta * e / (extra + 1))});
    }
    smooth.push_back(out[k]);
  }
  return smooth;
}

double trajectory_coverage(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, double view_radius, int rays) {
  std::vector<std::uint32_t> stamp(fp.occupied.size(), 0);
  std::vector<int> seen;
  for (const auto& p : traj) visible_cells(fp, p.x, p.y, view_radius, rays, stamp, 1, seen);
  const auto free_cells = static_cast<std::size_t>(std::count(fp.occupied.begin(), fp.occupied.end(), 0));
  return free_cells == 0 ? 0.0 : static_cast<double>(seen.size()) / static_cast<double>(free_cells);
}

std::vector<Pose2D> resample_trajectory(const std::vector<Pose2D>& traj, std::size_t n) {
  if (traj.empty()) throw PreconditionError("cannot resample an empty trajectory");
  if (n == 0) return {};
  constexpr double kMetersPerRad = 0.5;
  std::vector<double> s(traj.size(), 0.0);
  for (std::size_t k = 1; k < traj.size(); ++k) {
    s[k] = s[k - 1] + std::hypot(traj[k].x - traj[k - 1].x, traj[k].y - traj[k - 1].y) +
           kMetersPerRad * std::abs(wrap_angle(traj[k].yaw - traj[k - 1].yaw));
  }
  std::vector<Pose2D> out;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = n == 1 ? 0.0 : s.back() * static_cast<double>(i) / static_cast<double>(n - 1);
    while (seg + 1 < traj.size() - 1 && s[seg + 1] < target) ++seg;
    if (traj.size() == 1) {
      out.push_back(traj[0]);
      continue;
    }
    const double span = s[seg + 1] - s[seg];
    const double f = span > 0 ? std::clamp((target - s[seg]) / span, 0.0, 1.0) : 0.0;
    const auto& a = traj[seg];
    const auto& b = traj[seg + 1];
    out.push_back({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), wrap_angle(a.yaw + f * wrap_angle(b.yaw - a.yaw))});
  }
  return out;
}

std::vector<Pose2D> scan_trajectory(const FloorplanRaster& fp, std::uint64_t seed, std::size_t n,
                                    const PlannerConfig& cfg, int smoothing) {
  if (smoothing < 0) throw ConfigError(fmt::format("heading smoothing must be >= 0, got {}", smoothing));
  const auto planned = plan_trajectory(fp, seed, cfg);
  std::vector<Pose2D> path;
  for (const auto& p : planned) {
    if (path.empty() || std::hypot(p.x - path.back().x, p.y - path.back().y) > 1e-9) path.push_back({p.x, p.y, 0.0});
  }
  if (n == 0) return {};
  if (path.size() < 2) return std::vector<Pose2D>(n, planned.front());
  auto out = resample_trajectory(path, n);  // yaw is constant, so spacing is by distance only
  if (n < 2) {
    out[0].yaw = planned.front().yaw;
    return out;
  }
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  std::vector<double> heading(n);
  for (std::ptrdiff_t k = 0; k <= last; ++k) {
    const auto& a = out[static_cast<std::size_t>(std::max<std::ptrdiff_t>(k - 1, 0))];
    const auto& b = out[static_cast<std::size_t>(std::min(k + 1, last))];
    heading[static_cast<std::size_t>(k)] = std::atan2(b.y - a.y, b.x - a.x);
  }
  for (std::ptrdiff_t k = 0; k <= last; ++k) {
    double sx = 0.0, sy = 0.0;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(k - smoothing, 0); j <= std::min(k + smoothing, last); ++j) {
      sx += std::cos(heading[static_cast<std::size_t>(j)]);
      sy += std::sin(heading[static_cast<std::size_t>(j)]);
    }
    out[static_cast<std::size_t>(k)].yaw = std::atan2(sy, sx);
  }
  return out;
}

// ------------------------------------------------------------ rendering

void ErrorSpec::validate() const {
  auto check = [](bool ok, const char* name, double v) {
    if (!ok) throw ConfigError(fmt::format("error spec '{}' out of range: {}", name, v));
  };
  check(linear_drift >= 0.0 && std::isfinite(linear_drift), "linear_drift", linear_drift);
  check(angular_drift >= 0.0 && std::isfinite(angular_drift), "angular_drift", angular_drift);
  check(speckle_rate >= 0.0 && speckle_rate <= 1.0, "speckle_rate", speckle_rate);
  check(passthrough_rate >= 0.0 && passthrough_rate <= 1.0, "passthrough_rate", passthrough_rate);
  check(dropout_arc >= 0.0 && dropout_arc <= 360.0, "dropout_arc", dropout_arc);
  check(partial_coverage > 0.0 && partial_coverage <= 1.0, "partial_coverage", partial_coverage);
}

bool ErrorSpec::is_zero() const {
  return linear_drift == 0.0 && angular_drift == 0.0 && speckle_rate == 0.0 && passthrough_rate == 0.0 &&
         dropout_arc == 0.0 && partial_coverage == 1.0;
}

void RenderConfig::validate() const {
  if (beams < 1) throw ConfigError(fmt::format("render beams must be >= 1, got {}", beams));
  if (!(max_range > 0.0)) throw ConfigError(fmt::format("render max_range must be > 0, got {}", max_range));
  if (thin_cells < 1) throw ConfigError(fmt::format("render thin_cells must be >= 1, got {}", thin_cells));
}

std::vector<double> beam_angles(int beams) {
  std::vector<double> a(static_cast<std::size_t>(std::max(0, beams)));
  for (int k = 0; k < beams; ++k) a[static_cast<std::size_t>(k)] = 2.0 * kPi * (k + kBeamPhase) / beams - kPi;
  return a;
}

DiscreteMap render_clean(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, const RenderConfig& cfg) {
  cfg.validate();
  RayCounts counts(fp.occupied.size());
  std::vector<RayCell> scratch;
  const auto angles = beam_angles(cfg.beams);
  for (const auto& p : traj) {
    for (double a : angles) {
      const Cast c = cast_ray(fp, p.x, p.y, p.yaw + a, cfg, 0.0, nullptr, scratch);
      counts.add(c.free_cells, c.hit_cells);
    }
  }
  return counts.to_map(fp.geometry());
}

std::vector<Pose2D> apply_drift(const std::vector<Pose2D>& traj, const ErrorSpec& spec) {
  spec.validate();
  if (traj.empty()) return {};
  Rng rng(splitmix64(spec.seed ^ 0x4472696674ull));
  const double sign_lin = rng.coin() ? 1.0 : -1.0;
  const double sign_ang = rng.coin() ? 1.0 : -1.0;
  const double scale = 1.0 + sign_lin * spec.linear_drift;
  const double yaw_rate = sign_ang * spec.angular_drift * kPi / 180.0;  // rad per m
  std::vector<Pose2D> out{traj.front()};
  if (spec.linear_drift == 0.0 && spec.angular_drift == 0.0) return traj;
  double arc = 0.0;
  for (std::size_t k = 1; k < traj.size(); ++k) {
    const auto& a = traj[k - 1];
    const auto& b = traj[k];
    const double wx = b.x - a.x, wy = b.y - a.y;
    const double ds = std::hypot(wx, wy);
    arc += ds;
    // Increment in the previous true frame, replayed from the drifted pose.
    const double lx = std::cos(a.yaw) * wx + std::sin(a.yaw) * wy;
    const double ly = -std::sin(a.yaw) * wx + std::cos(a.yaw) * wy;
    const Pose2D& d = out.back();
    Pose2D next;
    next.x = d.x + scale * (std::cos(d.yaw) * lx - std::sin(d.yaw) * ly);
    next.y = d.y + scale * (std::sin(d.yaw) * lx + std::cos(d.yaw) * ly);
    next.yaw = wrap_angle(b.yaw + yaw_rate * arc);
    out.push_back(next);
  }
  return out;
}

DatasetPair render_pair(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, const ErrorSpec& spec,
                        const RenderConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (traj.empty()) throw PreconditionError("cannot render from an empty trajectory");
  DatasetPair pair;
  pair.floorplan_id = fp.id;
  pair.spec = spec;
  pair.clean = render_clean(fp, traj, cfg);

  const auto used = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(spec.partial_coverage * static_cast<double>(traj.size()) - 1e-9)));
  const std::vector<Pose2D> truth(traj.begin(), traj.begin() + static_cast<std::ptrdiff_t>(used));
  const auto drawn = apply_drift(truth, spec);
  Rng rng(splitmix64(spec.seed ^ 0x4e6f697365ull));
  RayCounts counts(fp.occupied.size());
  std::vector<RayCell> scratch;
  std::vector<int> free_cells, hit_cells;
  const auto angles = beam_angles(cfg.beams);
  const double dropout = spec.dropout_arc * kPi / 180.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double sector_start = dropout > 0.0 ? rng.uniform(-kPi, kPi) : 0.0;
    for (double a : angles) {
      if (dropout > 0.0 && wrap_angle(a - sector_start) + kPi < dropout) continue;
      const Cast c = cast_ray(fp, truth[k].x, truth[k].y, truth[k].yaw + a, cfg, spec.passthrough_rate, &rng, scratch);
      if (drawn[k] == truth[k]) {
        counts.add(c.free_cells, c.hit_cells);
        continue;
      }
      // Same measurement drawn from the drifted pose.
      free_cells.clear();
      hit_cells.clear();
      const double reach = c.hit ? c.range : cfg.max_range;
      const double ang = drawn[k].yaw + a;
      walk_ray(drawn[k].x, drawn[k].y, std::cos(ang), std::sin(ang), fp.resolution, fp.width, fp.height,
               c.hit ? kInf : cfg.max_range, [&](int cx, int cy, double t_in, double t_out) {
                 const int idx = image_index(cx, cy, fp.width, fp.height);
                 if (c.hit && t_in <= reach && reach < t_out) {
                   hit_cells.push_back(idx);
                   return false;
                 }
                 if (t_in >= reach) return false;
                 free_cells.push_back(idx);
                 return true;
               });
      counts.add(free_cells, hit_cells);
    }
  }
  pair.erroneous = counts.to_map(fp.geometry());
  if (spec.speckle_rate > 0.0) {
    for (auto& v : pair.erroneous.cells) {
      if (v == kUnknown) continue;
      if (rng.coin(spec.speckle_rate)) v = v == kFree ? kOccupied : kFree;
    }
  }
  return pair;
}

// ------------------------------------------------------------ datasets

void ErrorRanges::validate() const {
  auto check = [](const double (&r)[2], const char* name, double lo, double hi) {
    if (!(r[0] >= lo && r[0] <= r[1] && r[1] <= hi)) {
      throw ConfigError(fmt::format("error range '{}' must satisfy {} <= min <= max <= {}, got [{}, {}]", name, lo, hi,
                                    r[0], r[1]));
    }
  };
  check(linear_drift, "linear_drift", 0.0, 1.0);
  check(angular_drift, "angular_drift", 0.0, 90.0);
  check(speckle_rate, "speckle_rate", 0.0, 1.0);
  check(passthrough_rate, "passthrough_rate", 0.0, 1.0);
  check(dropout_arc, "dropout_arc", 0.0, 360.0);
  check(partial_coverage, "partial_coverage", 1e-9, 1.0);
}

ErrorSpec ErrorRanges::sample(std::uint64_t seed) const {
  validate();
  Rng rng(splitmix64(seed ^ 0x53706563ull));
  ErrorSpec s;
  s.linear_drift = rng.uniform(linear_drift[0], linear_drift[1]);
  s.angular_drift = rng.uniform(angular_drift[0], angular_drift[1]);
  s.speckle_rate = rng.uniform(speckle_rate[0], speckle_rate[1]);
  s.passthrough_rate = rng.uniform(passthrough_rate[0], passthrough_rate[1]);
  s.dropout_arc = rng.uniform(dropout_arc[0], dropout_arc[1]);
  s.partial_coverage = rng.uniform(partial_coverage[0], partial_coverage[1]);
  s.seed = seed;
  return s;
}

std::uint64_t pair_seed(std::uint64_t seed, std::uint64_t id) { return splitmix64(splitmix64(seed) ^ id); }

std::vector<std::filesystem::path> list_floorplans(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(fmt::format("floorplan directory '{}' not found", dir.string()));
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".pgm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError(fmt::format("no floorplans (.png/.pgm) in '{}'", dir.string()));
  return out;
}

DatasetSummary generate_dataset(const std::vector<std::filesystem::path>& floorplans, const DatasetOptions& options,
                                const std::filesystem::path& out_dir) {
  options.ranges.validate();
  options.render.validate();
  options.planner.validate();
  if (floorplans.empty()) throw PreconditionError("no floorplans given");
  if (options.workers < 1) throw ConfigError(fmt::format("workers must be >= 1, got {}", options.workers));

  std::vector<FloorplanRaster> plans;
  std::vector<std::vector<Pose2D>> trajectories;
  for (const auto& path : floorplans) {
    plans.push_back(load_floorplan(path));
    trajectories.push_back(plan_trajectory(plans.back(), options.seed, options.planner));
    spdlog::debug("floorplan {}: {} poses", plans.back().id, trajectories.back().size());
  }
  std::filesystem::create_directories(out_dir / "pairs");

  std::vector<std::string> rows(options.count);
  std::vector<std::uint8_t> out_of_band(options.count, 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t id = next++; id < options.count; id = next++) {
      try {
        const std::size_t f = id % plans.size();
        const auto spec = options.ranges.sample(pair_seed(options.seed, id));
        const auto pair = render_pair(plans[f], trajectories[f], spec, options.render);
        const std::string name = fmt::format("{:05d}", id);
        write_map(out_dir / "pairs" / (name + "_err.pgm"), pair.erroneous);
        write_map(out_dir / "pairs" / (name + "_clean.pgm"), pair.clean);
        const double occ_err = static_cast<double>(pair.erroneous.count(kOccupied));
        const double occ_clean = static_cast<double>(pair.clean.count(kOccupied));
        if (occ_err < 0.3 * occ_clean || occ_err > 3.0 * occ_clean) {
          out_of_band[id] = 1;
          spdlog::warn("pair {}: erroneous map has {} occupied cells against {} clean (outside [0.3x, 3x])", name,
                       occ_err, occ_clean);
        }
        rows[id] = fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", name,
                               floorplans[f].filename().string(), spec.seed, spec.linear_drift, spec.angular_drift,
                               spec.speckle_rate, spec.passthrough_rate, spec.dropout_arc, spec.partial_coverage);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = options.count;
      }
    }
  };
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.workers), options.count));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < workers; ++k) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::ofstream manifest(out_dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError(fmt::format("cannot write '{}'", (out_dir / "manifest.csv").string()));
  manifest << "id,floorplan,seed,linear_drift,angular_drift,speckle_rate,passthrough_rate,dropout_arc,"
              "partial_coverage\n";
  for (const auto& r : rows) manifest << r << '\n';
  if (!manifest) throw IoError(fmt::format("failed writing '{}'", (out_dir / "manifest.csv").string()));

  DatasetSummary summary;
  summary.pairs = options.count;
  summary.out_of_band = static_cast<std::size_t>(std::count(out_of_band.begin(), out_of_band.end(), 1));
  return summary;
}

// ------------------------------------------------------------ 3D scans

void LidarConfig::validate() const {
  if (channels < 1) throw ConfigError(fmt::format("lidar channels must be >= 1, got {}", channels));
  if (azimuths < 1) throw ConfigError(fmt::format("lidar azimuths must be >= 1, got {}", azimuths));
  if (!(min_elevation_deg <= max_elevation_deg && min_elevation_deg > -90.0 && max_elevation_deg < 90.0)) {
    throw ConfigError(fmt::format("lidar elevations must satisfy -90 < min <= max < 90, got [{}, {}]",
                                  min_elevation_deg, max_elevation_deg));
  }
  if (!(wall_height > 0.0 && sensor_height > 0.0 && sensor_height < wall_height)) {
    throw ConfigError(fmt::format("lidar sensor height {} must lie strictly between floor and wall top {}",
                                  sensor_height, wall_height));
  }
  if (!(max_range > 0.0)) throw ConfigError(fmt::format("lidar max_range must be > 0, got {}", max_range));
}

PointCloud render_lidar_scan(const FloorplanRaster& fp, const Pose2D& pose, const LidarConfig& cfg) {
  cfg.validate();
  PointCloud cloud;
  const auto azimuths = beam_angles(cfg.azimuths);
  std::vector<double> tans(static_cast<std::size_t>(cfg.channels));
  for (int c = 0; c < cfg.channels; ++c) {
    const double e = cfg.channels == 1
                         ? cfg.min_elevation_deg
                         : cfg.min_elevation_deg + (cfg.max_elevation_deg - cfg.min_elevation_deg) * c / (cfg.channels - 1);
    tans[static_cast<std::size_t>(c)] = std::tan(e * kPi / 180.0);
  }
  cloud.points.reserve(azimuths.size() * tans.size());
  for (double a : azimuths) {
    const double ang = pose.yaw + a;
    double t_in = kInf, t_out = kInf;
    walk_ray(pose.x, pose.y, std::cos(ang), std::sin(ang), fp.resolution, fp.width, fp.height, cfg.max_range,
             [&](int cx, int cy, double ti, double to) {
               if (!fp.occupied[static_cast<std::size_t>(image_index(cx, cy, fp.width, fp.height))]) return true;
               t_in = ti;
               t_out = to;
               return false;
             });
    const double ca = std::cos(a), sa = std::sin(a);
    for (double t : tans) {
      double d = kInf, z = 0.0, intensity = 0.0;
      const double z_enter = cfg.sensor_height + t_in * t;
      if (std::isfinite(t_in) && z_enter >= 0.0 && z_enter <= cfg.wall_height) {
        d = 0.5 * (t_in + t_out);
        z = std::clamp(cfg.sensor_height + d * t, 0.0, cfg.wall_height);
        intensity = 0.6;
      }
      if (cfg.floor && t < 0.0) {
        const double df = cfg.sensor_height / -t;
        if (df < d) {
          d = df;
          z = 0.0;
          intensity = 0.3;
        }
      }
      if (cfg.ceiling && t > 0.0) {
        const double dc = (cfg.wall_height - cfg.sensor_height) / t;
        if (dc < d) {
          d = dc;
          z = cfg.wall_height;
          intensity = 0.4;
        }
      }
      if (!std::isfinite(d) || std::hypot(d, z - cfg.sensor_height) > cfg.max_range) continue;
      cloud.points.push_back({d * ca, d * sa, z - cfg.sensor_height, intensity});
    }
  }
  return cloud;
}

void write_scan_sequence(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, const LidarConfig& cfg,
                         const std::filesystem::path& out_dir) {
  cfg.validate();
  if (traj.empty()) throw PreconditionError("cannot render a scan sequence from an empty trajectory");
  std::filesystem::create_directories(out_dir / "scans");
  Trajectory truth;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    PointCloud cloud = render_lidar_scan(fp, traj[k], cfg);
    cloud.scan_index = k;
    cloud.timestamp = 0.1 * static_cast<double>(k);
    write_cloud(out_dir / "scans" / fmt::format("scan_{:05d}.pcd", k), cloud, CloudFormat::PcdBinary);
    truth.record(k, PoseSE3::from_xyz_yaw(traj[k].x, traj[k].y, cfg.sensor_height, traj[k].yaw));
  }
  truth.write_tum(out_dir / "ground_truth.txt");
  write_map(out_dir / "truth.pgm", fp.truth_map());
  // The mapper's frame is the first scan's sensor frame.
  Alignment2D align;
  align.theta = -traj[0].yaw;
  align.tx = -(std::cos(align.theta) * traj[0].x - std::sin(align.theta) * traj[0].y);
  align.ty = -(std::sin(align.theta) * traj[0].x + std::cos(align.theta) * traj[0].y);
  align.write(out_dir / "alignment.txt");
}

}  // namespace ttogm
