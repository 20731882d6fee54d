#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "ttogm/datagen.hpp"
#include "ttogm/gridmap.hpp"

/// Independent reference implementations shared by the unit tests and the
/// acceptance suite. They restate the rules directly instead of calling the
/// library code they check.
namespace ttogm::oracles {

/// Threshold table of the input filter.
inline std::uint8_t oracle_input(double I) {
  if (I < 0.12) return 0;
  if (0.93 <= I && I <= 0.96) return 100;
  return 255;
}

/// Threshold table of the output filter.
inline std::uint8_t oracle_output(double I) {
  if (I < 0.21) return 0;
  if (I <= 0.86) return 100;
  return 255;
}

/// Brute-force clean map: for every ray, test the segment against every
/// cell box (slab method). The first occupied box entered sets the hit
/// distance; free boxes entered strictly earlier are observed free.
inline DiscreteMap oracle_clean(const FloorplanRaster& fp, const std::vector<Pose2D>& traj, const RenderConfig& cfg) {
  const double inf = std::numeric_limits<double>::infinity();
  const double res = fp.resolution;
  std::vector<std::uint8_t> hit(fp.occupied.size(), 0), miss(fp.occupied.size(), 0);
  struct Touch {
    std::size_t idx;
    double t;
    bool occ;
  };
  std::vector<Touch> touched;
  for (const auto& p : traj) {
    for (double a : beam_angles(cfg.beams)) {
      const double ang = p.yaw + a;
      const double dx = std::cos(ang), dy = std::sin(ang);
      touched.clear();
      for (int cy = 0; cy < fp.height; ++cy) {
        double ylo, yhi;
        if (dy != 0.0) {
          const double t1 = (static_cast<double>(cy) * res - p.y) / dy;
          const double t2 = (static_cast<double>(cy + 1) * res - p.y) / dy;
          ylo = std::min(t1, t2);
          yhi = std::max(t1, t2);
        } else if (p.y >= cy * res && p.y <= (cy + 1) * res) {
          ylo = -inf;
          yhi = inf;
        } else {
          continue;
        }
        for (int cx = 0; cx < fp.width; ++cx) {
          double xlo, xhi;
          if (dx != 0.0) {
            const double t1 = (static_cast<double>(cx) * res - p.x) / dx;
            const double t2 = (static_cast<double>(cx + 1) * res - p.x) / dx;
            xlo = std::min(t1, t2);
            xhi = std::max(t1, t2);
          } else if (p.x >= cx * res && p.x <= (cx + 1) * res) {
            xlo = -inf;
            xhi = inf;
          } else {
            continue;
          }
          const double t_entry = std::max({xlo, ylo, 0.0});
          const double t_exit = std::min(xhi, yhi);
          if (t_entry > t_exit || t_entry >= cfg.max_range) continue;
          const auto idx = static_cast<std::size_t>((fp.height - 1 - cy) * fp.width + cx);
          touched.push_back({idx, t_entry, fp.occupied[idx] != 0});
        }
      }
      double t_hit = inf;
      for (const auto& t : touched) {
        if (t.occ) t_hit = std::min(t_hit, t.t);
      }
      for (const auto& t : touched) {
        if (t.occ && t.t == t_hit) hit[t.idx] = 1;
        if (!t.occ && t.t < t_hit) miss[t.idx] = 1;
      }
    }
  }
  DiscreteMap m(fp.geometry(), kUnknown);
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    if (hit[i]) {
      m.cells[i] = kOccupied;
    } else if (miss[i]) {
      m.cells[i] = kFree;
    }
  }
  return m;
}

inline FloorplanRaster box_room(double w, double h) {
  FloorplanRaster fp(static_cast<int>(std::lround(w / 0.05)), static_cast<int>(std::lround(h / 0.05)), 0.05, 1);
  fp.fill_box(0.1, 0.1, w - 0.1, h - 0.1, 0);
  fp.id = "box";
  return fp;
}

inline RenderConfig clean_map_fixture_config() {
  RenderConfig cfg;
  cfg.beams = 90;
  cfg.max_range = 4.0;
  return cfg;
}

/// Five small worlds with hand-placed poses: an empty room, a pillar, an
/// L-shape, a one-cell partition with a gap, and scattered obstacles.
inline std::vector<std::pair<FloorplanRaster, std::vector<Pose2D>>> clean_map_fixtures() {
  std::vector<std::pair<FloorplanRaster, std::vector<Pose2D>>> cases;
  {
    auto fp = box_room(3.0, 2.0);
    cases.push_back({fp, {{1.0, 1.0, 0.0}, {2.1, 0.73, 1.0}}});
  }
  {
    auto fp = box_room(3.0, 3.0);
    fp.fill_box(1.4, 1.4, 1.6, 1.6, 1);  // pillar
    cases.push_back({fp, {{0.6, 0.6, 0.3}, {2.4, 2.2, -2.0}, {0.5, 2.5, 3.1}}});
  }
  {
    auto fp = box_room(4.0, 3.0);
    fp.fill_box(2.0, 0.1, 4.0, 1.5, 1);  // L-shape
    cases.push_back({fp, {{0.7, 0.7, 0.0}, {3.1, 2.2, -1.2}}});
  }
  {
    auto fp = box_room(4.0, 2.5);
    fp.fill_box(2.0, 0.1, 2.05, 2.4, 1);  // one-cell partition with a gap
    fp.fill_box(2.0, 1.0, 2.05, 1.5, 0);
    cases.push_back({fp, {{1.0, 1.25, 0.1}, {3.0, 0.5, 2.5}}});
  }
  {
    auto fp = box_room(5.0, 5.0);
    fp.fill_box(1.0, 3.0, 2.2, 3.4, 1);
    fp.fill_box(3.3, 1.0, 3.5, 2.6, 1);
    fp.fill_box(0.1, 1.6, 1.8, 1.7, 1);
    cases.push_back({fp, {{2.5, 2.5, 0.0}, {4.2, 4.1, 2.0}, {0.6, 0.5, 0.7}, {4.5, 0.6, -0.4}}});
  }
  return cases;
}

}  // namespace ttogm::oracles
