#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_support.hpp"
#include "ttogm/error.hpp"
#include "ttogm/grid_line.hpp"
#include "ttogm/gridmap.hpp"
#include "ttogm/image_io.hpp"

using namespace ttogm;

namespace {

double sigmoid(double l) { return 1.0 / (1.0 + std::exp(-l)); }

DiscreteMap map_from(const std::vector<std::string>& rows) {
  MapGeometry g;
  g.height = static_cast<int>(rows.size());
  g.width = static_cast<int>(rows[0].size());
  DiscreteMap m(g, kUnknown);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      const char ch = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      m.at(r, c) = ch == '#' ? kOccupied : ch == '.' ? kFree : kUnknown;
    }
  }
  return m;
}

/// Grid holding one observed cell per likelihood value.
OccupancyGrid grid_with_likelihoods(const std::vector<double>& values) {
  MapGeometry g;
  g.width = static_cast<int>(values.size());
  g.height = 1;
  OccupancyGrid grid(g, EvidenceConfig{});
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& c = grid.cell(static_cast<int>(i), 0);
    c.observed = true;
    const double v = std::clamp(values[i], 1e-300, 1.0 - 1e-16);
    c.log_odds = std::log(v / (1.0 - v));
  }
  return grid;
}

}  // namespace

TEST(Filtration, InputFilterWorkedExamples) {
  const FiltrationConfig cfg;
  EXPECT_EQ(cfg.classify_input(0.05), 0);
  EXPECT_EQ(cfg.classify_input(0.94), 100);
  EXPECT_EQ(cfg.classify_input(0.97), 255);
  EXPECT_EQ(cfg.classify_input(0.50), 255);
}

TEST(Filtration, OutputFilterWorkedExamples) {
  const FiltrationConfig cfg;
  EXPECT_EQ(cfg.classify_output(0.10), 0);
  EXPECT_EQ(cfg.classify_output(0.50), 100);
  EXPECT_EQ(cfg.classify_output(0.90), 255);
}

TEST(Filtration, ExhaustiveScanMatchesTables) {
  const FiltrationConfig cfg;
  std::vector<double> values;
  for (int i = 0; i < 1024; ++i) values.push_back(i / 1023.0);
  const auto grid = grid_with_likelihoods(values);
  const auto in = input_filter(grid, cfg);
  for (int i = 0; i < 1024; ++i) {
    const double I = grid.likelihood(i, 0);
    EXPECT_EQ(in.at(0, i), oracles::oracle_input(I)) << "I=" << I;
    EXPECT_EQ(cfg.classify_output(values[static_cast<std::size_t>(i)]),
              oracles::oracle_output(values[static_cast<std::size_t>(i)]));
  }
}

TEST(Filtration, ThresholdBoundaries) {
  const FiltrationConfig cfg;
  EXPECT_EQ(cfg.classify_input(0.12), 255);
  EXPECT_EQ(cfg.classify_input(std::nextafter(0.12, 0.0)), 0);
  EXPECT_EQ(cfg.classify_input(0.93), 100);
  EXPECT_EQ(cfg.classify_input(0.96), 100);
  EXPECT_EQ(cfg.classify_input(std::nextafter(0.96, 1.0)), 255);
  EXPECT_EQ(cfg.classify_output(0.21), 100);
  EXPECT_EQ(cfg.classify_output(0.86), 100);
  EXPECT_EQ(cfg.classify_output(std::nextafter(0.86, 1.0)), 255);
}

TEST(Filtration, BothFiltersIdempotent) {
  const FiltrationConfig cfg;
  std::vector<double> values;
  for (int i = 0; i < 1024; ++i) values.push_back(i / 1023.0);
  const auto once = input_filter(grid_with_likelihoods(values), cfg);
  EXPECT_TRUE(once.is_discretized());
  EXPECT_EQ(input_filter(lift_to_grid(once, cfg), cfg), once);

  LikelihoodMap lm;
  lm.geometry.width = 1024;
  lm.geometry.height = 1;
  for (double v : values) lm.cells.push_back(static_cast<float>(v));
  const auto out = output_filter(lm, cfg);
  EXPECT_TRUE(out.is_discretized());
  EXPECT_EQ(output_filter(to_likelihood(out), cfg), out);
}

TEST(Filtration, UnobservedCellsStayUnknown) {
  EvidenceConfig ecfg;
  ecfg.initial_size = 1.0;
  const OccupancyGrid grid(ecfg);
  const auto m = input_filter(grid, FiltrationConfig{});
  EXPECT_EQ(m.count(kUnknown), m.cells.size());
}

TEST(Filtration, ConfigRejectsBadOrdering) {
  FiltrationConfig cfg;
  cfg.t2 = 0.97;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FiltrationConfig{};
  cfg.t1_out = 0.9;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = FiltrationConfig{};
  cfg.t1 = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(FiltrationConfig{}.validate());
}

TEST(FloatingPoints, NeighborCountFixtures) {
  const FiltrationConfig cfg;
  // 0 same-valued neighbors: removed.
  auto m0 = map_from({"...", ".#.", "..."});
  EXPECT_EQ(remove_floating_points(m0, cfg).at(1, 1), kUnknown);
  // Exactly 2: removed.
  auto m2b = map_from({"...", "##.", ".#."});
  EXPECT_EQ(remove_floating_points(m2b, cfg).at(1, 1), kUnknown);
  // Exactly 3: kept.
  auto m3 = map_from({".#.", "##.", ".#."});
  EXPECT_EQ(remove_floating_points(m3, cfg).at(1, 1), kOccupied);
}

TEST(FloatingPoints, SinglePassWithoutCascade) {
  const FiltrationConfig cfg;
  // A plus shape: the center has 4 occupied neighbors, each arm only 1.
  const auto m = map_from({"?#?", "###", "?#?"});
  const auto out = remove_floating_points(m, cfg);
  EXPECT_EQ(out.at(1, 1), kOccupied);  // decided on the snapshot
  EXPECT_EQ(out.at(0, 1), kUnknown);
}

TEST(FloatingPoints, OnlyEverProducesUnknownAndNeverTouchesUnknown) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(0, 2);
  MapGeometry g;
  g.width = 64;
  g.height = 48;
  DiscreteMap m(g, kUnknown);
  for (auto& v : m.cells) v = std::array<std::uint8_t, 3>{kFree, kOccupied, kUnknown}[static_cast<std::size_t>(d(rng))];
  const auto out = remove_floating_points(m, FiltrationConfig{});
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    if (out.cells[i] != m.cells[i]) {
      EXPECT_EQ(out.cells[i], kUnknown);
    }
    if (m.cells[i] == kUnknown) {
      EXPECT_EQ(out.cells[i], kUnknown);
    }
  }
}

TEST(FloatingPoints, RejectsNonDiscretized) {
  auto m = map_from({"..", ".."});
  m.at(0, 0) = 42;
  EXPECT_THROW(remove_floating_points(m, FiltrationConfig{}), PreconditionError);
}

TEST(Evidence, SingleRayLikelihoods) {
  OccupancyGrid grid(EvidenceConfig{}, 0.0, 0.0);
  grid.integrate_endpoints(0.025, 0.025, {{2.025, 0.025, 0.5}});
  const auto [ex, ey] = *grid.find_cell(2.025, 0.025);
  EXPECT_NEAR(grid.likelihood(ex, ey), sigmoid(0.85), 1e-12);
  EXPECT_NEAR(grid.likelihood(ex, ey), 0.7006, 1e-4);
  EXPECT_NEAR(grid.cell(ex, ey).mean_intensity, 0.5, 1e-12);
  const auto [sx, sy] = *grid.find_cell(0.025, 0.025);
  for (int cx = sx; cx < ex; ++cx) {
    EXPECT_NEAR(grid.likelihood(cx, sy), sigmoid(-0.4), 1e-12);
    EXPECT_TRUE(grid.cell(cx, sy).observed);
  }
  EXPECT_NEAR(sigmoid(-0.4), 0.4013, 1e-4);
  EXPECT_EQ(ex - sx, 40);
}

TEST(Evidence, EmptyScanLeavesGridUnchanged) {
  OccupancyGrid grid(EvidenceConfig{});
  const auto before = input_filter(grid, FiltrationConfig{});
  Scan2D empty;
  empty.bins.resize(3);
  grid.integrate_scan(empty, PoseSE3::identity());
  EXPECT_EQ(input_filter(grid, FiltrationConfig{}), before);
}

TEST(Evidence, ExpansionKeepsWorldGeometry) {
  OccupancyGrid grid(EvidenceConfig{});
  grid.integrate_endpoints(0.0, 0.0, {{1.0, 1.0, 0.3}, {-2.0, 0.5, 0.1}});
  std::vector<std::tuple<double, double, double>> probe;
  for (double x = -4.9; x < 4.9; x += 0.137) {
    for (double y = -4.9; y < 4.9; y += 0.173) {
      const auto c = grid.find_cell(x, y);
      probe.emplace_back(x, y, grid.cell(c->first, c->second).log_odds);
    }
  }
  const int w0 = grid.width();
  grid.integrate_endpoints(99.0, 0.0, {{100.0, 0.0, 1.0}});
  EXPECT_GT(grid.width(), w0);
  ASSERT_TRUE(grid.find_cell(100.0, 0.0).has_value());
  grid.integrate_endpoints(0.0, -60.0, {{0.0, -61.0, 1.0}});
  for (const auto& [x, y, l] : probe) {
    const auto c = grid.find_cell(x, y);
    ASSERT_TRUE(c.has_value());
    EXPECT_EQ(grid.cell(c->first, c->second).log_odds, l) << x << "," << y;
  }
  // Doubling only.
  EXPECT_EQ(grid.width() % w0, 0);
}

TEST(Evidence, RepeatedScanMovesMonotonicallyAndClamps) {
  EvidenceConfig ecfg;
  OccupancyGrid grid(ecfg);
  Scan2D scan;
  scan.bins.resize(36);
  for (auto& b : scan.bins) b.push_back({3.0, 0.5});
  grid.integrate_scan(scan, PoseSE3::identity());
  std::vector<double> first;
  for (int cy = 0; cy < grid.height(); ++cy)
    for (int cx = 0; cx < grid.width(); ++cx) first.push_back(grid.cell(cx, cy).log_odds);
  grid.integrate_scan(scan, PoseSE3::identity());
  std::size_t i = 0;
  for (int cy = 0; cy < grid.height(); ++cy) {
    for (int cx = 0; cx < grid.width(); ++cx, ++i) {
      const double a = first[i], b = grid.cell(cx, cy).log_odds;
      if (a > 0) {
        EXPECT_NEAR(b, 2 * a, 1e-12);
      }
      if (a < 0) {
        EXPECT_NEAR(b, 2 * a, 1e-12);
      }
      if (a == 0) {
        EXPECT_EQ(b, 0.0);
      }
    }
  }
  for (int k = 0; k < 20; ++k) grid.integrate_scan(scan, PoseSE3::identity());
  for (int cy = 0; cy < grid.height(); ++cy) {
    for (int cx = 0; cx < grid.width(); ++cx) {
      EXPECT_LE(grid.cell(cx, cy).log_odds, ecfg.clamp_max);
      EXPECT_GE(grid.cell(cx, cy).log_odds, ecfg.clamp_min);
    }
  }
}

TEST(Evidence, SupercoverVisitsEveryCrossedCell) {
  // Oracle: sample the segment densely and collect the cells it touches.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int t = 0; t < 200; ++t) {
    const double x0 = u(rng), y0 = u(rng), x1 = u(rng), y1 = u(rng);
    std::set<std::pair<int, int>> visited;
    traverse_supercover(x0, y0, x1, y1, [&](int cx, int cy) { visited.emplace(cx, cy); });
    for (int s = 0; s <= 20000; ++s) {
      const double f = s / 20000.0;
      const int cx = static_cast<int>(std::floor(x0 + f * (x1 - x0)));
      const int cy = static_cast<int>(std::floor(y0 + f * (y1 - y0)));
      ASSERT_TRUE(visited.count({cx, cy})) << "trial " << t;
    }
  }
}

TEST(Trajectory, RecordingRules) {
  Trajectory traj = record_pose(Trajectory{}, 0, PoseSE3::identity());
  EXPECT_EQ(traj.size(), 1u);
  traj = record_pose(traj, 7, PoseSE3::identity());
  EXPECT_THROW(record_pose(traj, 5, PoseSE3::identity()), PreconditionError);
  EXPECT_THROW(record_pose(traj, 7, PoseSE3::identity()), PreconditionError);
}

TEST(Trajectory, TumExportHasOneLinePerPose) {
  fixtures::TempDir dir;
  Trajectory traj;
  for (int k = 0; k < 100; ++k) traj.record(static_cast<std::uint64_t>(k), PoseSE3::from_xyz_yaw(0.1 * k, 0, 0, 0.01 * k));
  traj.write_tum(dir / "t.txt");
  std::ifstream in(dir / "t.txt");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 100);
  const auto back = Trajectory::read_tum(dir / "t.txt");
  ASSERT_EQ(back.size(), 100u);
  EXPECT_LT(translation_distance(back.entries()[42].pose, traj.entries()[42].pose), 1e-12);
}

TEST(MapIo, RoundTripIsBitExact) {
  fixtures::TempDir dir;
  MapGeometry g;
  g.width = 37;
  g.height = 21;
  g.resolution = 0.05;
  g.origin_x = -3.15;
  g.origin_y = 12.4;
  DiscreteMap m(g, kUnknown);
  std::mt19937_64 rng(8);
  for (auto& v : m.cells) v = std::array<std::uint8_t, 3>{kFree, kOccupied, kUnknown}[rng() % 3];
  write_map(dir / "m.pgm", m, FiltrationConfig{});
  EXPECT_TRUE(std::filesystem::exists(dir / "m.meta"));
  const auto back = read_map(dir / "m.pgm");
  EXPECT_EQ(back, m);
  // Cell (row, col) maps to the documented world position.
  const auto [x, y] = m.cell_center(20, 0);
  EXPECT_NEAR(x, g.origin_x + 0.025, 1e-12);
  EXPECT_NEAR(y, g.origin_y + 0.025, 1e-12);
}

TEST(MapIo, MissingMetadataIsAnError) {
  fixtures::TempDir dir;
  write_pgm(dir / "x.pgm", GrayImage{2, 2, {0, 100, 255, 0}});
  EXPECT_THROW(read_map(dir / "x.pgm"), DataError);
}
