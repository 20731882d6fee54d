#include "ttogm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ttogm/error.hpp"

namespace ttogm {

void Alignment2D::validate() const {
  if (!(scale > 0.0 && std::isfinite(scale))) throw ConfigError(fmt::format("alignment scale must be > 0, got {}", scale));
  if (!std::isfinite(theta) || !std::isfinite(tx) || !std::isfinite(ty)) {
    throw ConfigError("alignment parameters must be finite");
  }
}

std::pair<double, double> Alignment2D::apply(double x, double y) const {
  const double c = std::cos(theta), s = std::sin(theta);
  return {scale * (c * x - s * y) + tx, scale * (s * x + c * y) + ty};
}

Alignment2D Alignment2D::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open alignment file '{}'", path.string()));
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    Alignment2D a;
    if (!(ss >> a.scale >> a.theta >> a.tx >> a.ty)) {
      throw FormatError(fmt::format("{}: expected 'scale theta tx ty', got '{}'", path.string(), line));
    }
    a.validate();
    return a;
  }
  throw FormatError(fmt::format("{}: no alignment line", path.string()));
}

void Alignment2D::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << "# p_map = scale * R(theta) * p_truth + (tx, ty)\n# scale theta tx ty\n"
      << fmt::format("{:.17g} {:.17g} {:.17g} {:.17g}\n", scale, theta, tx, ty);
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

IoUResult compute_iou(const DiscreteMap& map, const DiscreteMap& truth, const Alignment2D& align) {
  align.validate();
  if (!map.is_discretized() || !truth.is_discretized()) {
    throw PreconditionError("IoU needs maps with codes {0, 100, 255} only");
  }
  const auto& g = map.geometry;
  std::size_t inter[2] = {0, 0}, uni[2] = {0, 0};
  IoUResult r;
  for (int row = 0; row < truth.height(); ++row) {
    for (int col = 0; col < truth.width(); ++col) {
      const auto t = truth.at(row, col);
      if (t == kUnknown) continue;
      const auto [px, py] = truth.cell_center(row, col);
      const auto [mx, my] = align.apply(px, py);
      const int mc = static_cast<int>(std::floor((mx - g.origin_x) / g.resolution));
      const int mr = g.height - 1 - static_cast<int>(std::floor((my - g.origin_y) / g.resolution));
      if (mc < 0 || mr < 0 || mc >= g.width || mr >= g.height) continue;
      const auto m = map.at(mr, mc);
      if (m == kUnknown) continue;
      ++r.compared_cells;
      for (int k = 0; k < 2; ++k) {
        const std::uint8_t code = k == 0 ? kFree : kOccupied;
        const bool a = m == code, b = t == code;
        inter[k] += a && b;
        uni[k] += a || b;
      }
    }
  }
  auto score = [](std::size_t i, std::size_t u, bool& undefined, const char* name) {
    if (u == 0) {
      undefined = true;
      spdlog::warn("{} class empty in both maps; IoU reported as 1.0", name);
      return 1.0;
    }
    return static_cast<double>(i) / static_cast<double>(u);
  };
  r.unoccupied = score(inter[0], uni[0], r.unoccupied_undefined, "unoccupied");
  r.occupied = score(inter[1], uni[1], r.occupied_undefined, "occupied");
  return r;
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Filtering: return "filtering";
    case Stage::Registration: return "registration";
    case Stage::Translation: return "translation";
    case Stage::Integration: return "integration";
    case Stage::Cleaning: return "cleaning";
  }
  return "unknown";
}

LatencyStats summarize_latency(std::vector<double> samples) {
  LatencyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  s.median_ms = n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = samples[std::max<std::size_t>(rank, 1) - 1];
  s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  s.max_ms = samples.back();
  return s;
}

void LatencyReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << "stage,count,median_ms,p95_ms,mean_ms,max_ms\n";
  auto row = [&](const char* name, const LatencyStats& s) {
    out << fmt::format("{},{},{:.3f},{:.3f},{:.3f},{:.3f}\n", name, s.count, s.median_ms, s.p95_ms, s.mean_ms, s.max_ms);
  };
  for (std::size_t k = 0; k < kStageCount; ++k) row(stage_name(static_cast<Stage>(k)), stats(static_cast<Stage>(k)));
  row("per_scan", per_scan());
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::string LatencyReport::table() const {
  std::string t = fmt::format("{:<14}{:>8}{:>12}{:>12}{:>12}{:>12}\n", "stage", "count", "median ms", "p95 ms", "mean ms",
                              "max ms");
  auto row = [&](const char* name, const LatencyStats& s) {
    t += fmt::format("{:<14}{:>8}{:>12.2f}{:>12.2f}{:>12.2f}{:>12.2f}\n", name, s.count, s.median_ms, s.p95_ms,
                     s.mean_ms, s.max_ms);
  };
  for (std::size_t k = 0; k < kStageCount; ++k) row(stage_name(static_cast<Stage>(k)), stats(static_cast<Stage>(k)));
  row("per_scan", per_scan());
  return t;
}

}  // namespace ttogm
