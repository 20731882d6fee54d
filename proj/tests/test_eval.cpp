#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ttogm/error.hpp"
#include "ttogm/eval.hpp"

using namespace ttogm;

namespace {

DiscreteMap make_map(int w, int h, const std::vector<std::uint8_t>& cells) {
  MapGeometry g;
  g.width = w;
  g.height = h;
  g.resolution = 0.05;
  DiscreteMap m(g, kUnknown);
  m.cells = cells;
  return m;
}

DiscreteMap random_map(int w, int h, std::mt19937& rng) {
  static constexpr std::uint8_t codes[] = {kFree, kOccupied, kUnknown};
  std::uniform_int_distribution<int> pick(0, 2);
  std::vector<std::uint8_t> cells(static_cast<std::size_t>(w * h));
  for (auto& c : cells) c = codes[pick(rng)];
  return make_map(w, h, cells);
}

}  // namespace

TEST(IoU, IdenticalMapsScoreOne) {
  const auto m = make_map(3, 2, {0, 100, 255, 0, 0, 100});
  const auto r = compute_iou(m, m);
  EXPECT_DOUBLE_EQ(r.unoccupied, 1.0);
  EXPECT_DOUBLE_EQ(r.occupied, 1.0);
  EXPECT_EQ(r.compared_cells, 5u);
}

TEST(IoU, HandComputedCounts) {
  // truth:  0   0 100 100      map:  0 100 100 255
  //         0 255   0 100            0   0   0   0
  const auto truth = make_map(4, 2, {0, 0, 100, 100, 0, 255, 0, 100});
  const auto map = make_map(4, 2, {0, 100, 100, 255, 0, 0, 0, 0});
  const auto r = compute_iou(map, truth);
  // Compared: (0,0) (0,1) (0,2) (1,0) (1,2) (1,3); (0,3) unknown in map, (1,1) unknown in truth.
  EXPECT_EQ(r.compared_cells, 6u);
  // Free: map {00,10,12,13}, truth {00,01,10,12}: I = 3, U = 5.
  EXPECT_DOUBLE_EQ(r.unoccupied, 3.0 / 5.0);
  // Occupied: map {01,02}, truth {02,13}: I = 1, U = 3.
  EXPECT_DOUBLE_EQ(r.occupied, 1.0 / 3.0);
}

TEST(IoU, EmptyClassScoresOneAndIsFlagged) {
  const auto m = make_map(2, 1, {0, 0});
  const auto r = compute_iou(m, m);
  EXPECT_DOUBLE_EQ(r.occupied, 1.0);
  EXPECT_TRUE(r.occupied_undefined);
  EXPECT_FALSE(r.unoccupied_undefined);
}

TEST(IoU, AlignmentResamplesTheMap) {
  // Truth: L-shaped pattern; map: the same pattern rotated by 90 degrees
  // about the origin and shifted so it stays on the raster.
  MapGeometry g;
  g.width = 6;
  g.height = 4;
  DiscreteMap truth(g, kFree);
  truth.at(0, 0) = kOccupied;
  truth.at(1, 0) = kOccupied;
  truth.at(3, 5) = kOccupied;
  truth.at(2, 3) = kUnknown;
  MapGeometry mg;
  mg.width = 4;
  mg.height = 6;
  mg.origin_x = -0.2;  // rotated x spans [-0.2, 0]
  DiscreteMap map(mg, kFree);
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      const auto [x, y] = truth.cell_center(r, c);
      const double mx = -y, my = x;
      const int mc = static_cast<int>(std::floor((mx - mg.origin_x) / mg.resolution));
      const int mr = mg.height - 1 - static_cast<int>(std::floor(my / mg.resolution));
      map.at(mr, mc) = truth.at(r, c);
    }
  }
  Alignment2D a;
  a.theta = std::numbers::pi / 2;
  const auto r = compute_iou(map, truth, a);
  EXPECT_DOUBLE_EQ(r.unoccupied, 1.0);
  EXPECT_DOUBLE_EQ(r.occupied, 1.0);
  EXPECT_EQ(r.compared_cells, 23u);
  const auto unaligned = compute_iou(map, truth);
  EXPECT_LT(unaligned.compared_cells, 23u);
}

TEST(IoU, SymmetricWithoutAlignment) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_map(9, 7, rng), b = random_map(9, 7, rng);
    const auto ab = compute_iou(a, b), ba = compute_iou(b, a);
    EXPECT_DOUBLE_EQ(ab.unoccupied, ba.unoccupied);
    EXPECT_DOUBLE_EQ(ab.occupied, ba.occupied);
    EXPECT_EQ(ab.compared_cells, ba.compared_cells);
  }
}

TEST(IoU, SwappedClassesScoreZero) {
  const auto truth = make_map(3, 1, {0, 100, 0});
  const auto map = make_map(3, 1, {100, 0, 100});
  const auto r = compute_iou(map, truth);
  EXPECT_DOUBLE_EQ(r.unoccupied, 0.0);
  EXPECT_DOUBLE_EQ(r.occupied, 0.0);
}

TEST(IoU, CorrectingACellNeverLowersEitherScore) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto truth = random_map(8, 8, rng);
    auto map = random_map(8, 8, rng);
    auto before = compute_iou(map, truth);
    for (std::size_t i = 0; i < map.cells.size(); ++i) {
      if (truth.cells[i] == kUnknown || map.cells[i] == kUnknown || map.cells[i] == truth.cells[i]) continue;
      map.cells[i] = truth.cells[i];
      const auto after = compute_iou(map, truth);
      EXPECT_GE(after.unoccupied, before.unoccupied);
      EXPECT_GE(after.occupied, before.occupied);
      before = after;
    }
    EXPECT_DOUBLE_EQ(before.unoccupied, 1.0);
    EXPECT_DOUBLE_EQ(before.occupied, 1.0);
  }
}

TEST(IoU, RejectsUndiscretizedMaps) {
  const auto m = make_map(2, 1, {0, 7});
  EXPECT_THROW(compute_iou(m, m), PreconditionError);
  Alignment2D a;
  a.scale = 0.0;
  EXPECT_THROW(compute_iou(make_map(1, 1, {0}), make_map(1, 1, {0}), a), ConfigError);
}

TEST(Alignment, FileRoundTrip) {
  fixtures::TempDir dir;
  Alignment2D a{1.5, -0.25, 3.0, -4.125};
  a.write(dir / "a.txt");
  const auto b = Alignment2D::read(dir / "a.txt");
  EXPECT_EQ(b.scale, a.scale);
  EXPECT_EQ(b.theta, a.theta);
  EXPECT_EQ(b.tx, a.tx);
  EXPECT_EQ(b.ty, a.ty);
  std::ofstream(dir / "bad.txt") << "# c\n1 2 x\n";
  EXPECT_THROW(Alignment2D::read(dir / "bad.txt"), FormatError);
  EXPECT_THROW(Alignment2D::read(dir / "none.txt"), IoError);
}

TEST(Latency, MedianAndNearestRankP95) {
  std::vector<double> v;
  for (int i = 10; i >= 1; --i) v.push_back(i);
  auto s = summarize_latency(v);
  EXPECT_DOUBLE_EQ(s.median_ms, 5.5);
  EXPECT_DOUBLE_EQ(s.p95_ms, 10.0);
  EXPECT_DOUBLE_EQ(s.mean_ms, 5.5);
  v.clear();
  for (int i = 1; i <= 20; ++i) v.push_back(i);
  s = summarize_latency(v);
  EXPECT_DOUBLE_EQ(s.p95_ms, 19.0);
  EXPECT_DOUBLE_EQ(s.median_ms, 10.5);
  EXPECT_EQ(summarize_latency({}).count, 0u);
  EXPECT_DOUBLE_EQ(summarize_latency({3.0}).median_ms, 3.0);
}

TEST(Latency, ReportCsvAndTable) {
  fixtures::TempDir dir;
  LatencyReport rep;
  rep.add(Stage::Registration, 12.0);
  rep.add(Stage::Registration, 14.0);
  rep.add(Stage::Cleaning, 80.0);
  rep.add_scan(20.0);
  rep.write_csv(dir / "lat.csv");
  std::ifstream in(dir / "lat.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0], "stage,count,median_ms,p95_ms,mean_ms,max_ms");
  EXPECT_EQ(lines[2], "registration,2,13.000,14.000,13.000,14.000");
  EXPECT_EQ(lines[5].substr(0, 11), "cleaning,1,");
  EXPECT_EQ(lines[6].substr(0, 11), "per_scan,1,");
  EXPECT_NE(rep.table().find("integration"), std::string::npos);
}
