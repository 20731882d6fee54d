#include <cstdio>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ttogm/datagen.hpp"
#include "ttogm/gridmap.hpp"
#include "ttogm/pipeline.hpp"

using namespace ttogm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(TTOGM_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

DiscreteMap gap_fixture() {
  MapGeometry g;
  g.width = 16;
  g.height = 8;
  DiscreteMap m(g, kFree);
  for (int c = 0; c <= 10; ++c) {
    if (c != 5) m.at(3, c) = kOccupied;
  }
  for (int c = 12; c < 16; ++c) m.at(6, c) = kUnknown;
  return m;
}

/// Small corridor floorplan so that datagen runs stay quick.
fs::path small_floorplan(const fixtures::TempDir& dir) {
  fs::create_directories(dir / "plans");
  const auto path = dir / "plans" / "corridor.pgm";
  write_floorplan(path, corridor_world(6.0, 2.0));
  return dir / "plans";
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("map").code, 1);
  EXPECT_EQ(run("--every-n many map x").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, ConfigSubcommandPrintsParsableDefaults) {
  const auto r = run("config");
  ASSERT_EQ(r.code, 0);
  EXPECT_NO_THROW(PipelineConfig::from_document(ConfigDocument::parse(r.out)));
}

TEST(Cli, EvalIdenticalMapsPrintsOne) {
  fixtures::TempDir dir("ttogm_cli");
  write_map(dir / "m.pgm", gap_fixture());
  const auto r = run("eval " + q(dir / "m.pgm") + " " + q(dir / "m.pgm"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("unoccupied_iou 1.000000"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("occupied_iou 1.000000"), std::string::npos) << r.out;
}

TEST(Cli, EvalMissingTruthIsADataError) {
  fixtures::TempDir dir("ttogm_cli");
  write_map(dir / "m.pgm", gap_fixture());
  EXPECT_EQ(run("eval " + q(dir / "m.pgm") + " " + q(dir / "absent.pgm")).code, 2);
}

TEST(Cli, CleanIdentityIsBitwiseAndMorphClosesGap) {
  fixtures::TempDir dir("ttogm_cli");
  write_map(dir / "m.pgm", gap_fixture());
  ASSERT_EQ(run("--cleaner identity --output " + q(dir / "id") + " clean " + q(dir / "m.pgm")).code, 0);
  EXPECT_EQ(slurp(dir / "id" / "m_clean.pgm"), slurp(dir / "m.pgm"));
  ASSERT_EQ(run("--cleaner morph --output " + q(dir / "morph") + " clean " + q(dir / "m.pgm")).code, 0);
  EXPECT_EQ(read_map(dir / "morph" / "m_clean.pgm").at(3, 5), kOccupied);
}

TEST(Cli, CleanWithMissingModelFailsWithoutOutput) {
  fixtures::TempDir dir("ttogm_cli");
  write_map(dir / "m.pgm", gap_fixture());
  const auto r = run("--cleaner model:" + (dir / "absent.onnx").string() + " --output " + q(dir / "out") + " clean " +
                     q(dir / "m.pgm"));
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, CleanThroughOnnxBridge) {
  if (std::system("python3 -c 'import onnx, onnxruntime, numpy' >/dev/null 2>&1") != 0) {
    GTEST_SKIP() << "python onnx/onnxruntime not installed";
  }
  fixtures::TempDir dir("ttogm_cli");
  const auto model = dir / "identity.onnx";
  const std::string make_model =
      "python3 -c \"import onnx; from onnx import helper as h, TensorProto as T; "
      "v = lambda n: h.make_tensor_value_info(n, T.FLOAT, ['n', 1, 'h', 'w']); "
      "g = h.make_graph([h.make_node('Identity', ['x'], ['y'])], 'id', [v('x')], [v('y')]); "
      "onnx.save(h.make_model(g, opset_imports=[h.make_opsetid('', 13)], ir_version=8), '" +
      model.string() + "')\"";
  ASSERT_EQ(std::system(make_model.c_str()), 0);
  write_map(dir / "m.pgm", gap_fixture());
  ASSERT_EQ(run("--cleaner model:" + model.string() + " --output " + q(dir / "out") + " clean " + q(dir / "m.pgm")).code,
            0);
  EXPECT_EQ(slurp(dir / "out" / "m_clean.pgm"), slurp(dir / "m.pgm"));
}

TEST(Cli, DatagenPairsWritesRastersAndManifest) {
  fixtures::TempDir dir("ttogm_cli");
  const auto plans = small_floorplan(dir);
  const auto r = run("--seed 11 --output " + q(dir / "a") + " datagen --mode pairs --count 3 --floorplans " + q(plans));
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t rasters = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "pairs")) rasters += e.path().extension() == ".pgm";
  EXPECT_EQ(rasters, 6u);
  std::ifstream manifest(dir / "a" / "manifest.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(manifest, line)) ++lines;
  EXPECT_EQ(lines, 4u);

  ASSERT_EQ(run("--seed 11 --output " + q(dir / "b") + " datagen --mode pairs --count 3 --floorplans " + q(plans) +
                " --workers 2")
                .code,
            0);
  EXPECT_EQ(slurp(dir / "a" / "manifest.csv"), slurp(dir / "b" / "manifest.csv"));
  for (const auto& e : fs::directory_iterator(dir / "a" / "pairs")) {
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / "pairs" / e.path().filename())) << e.path();
  }
}

TEST(Cli, DatagenFloorplansAreTraversable) {
  fixtures::TempDir dir("ttogm_cli");
  ASSERT_EQ(run("--output " + q(dir / "fp") + " datagen --mode floorplans --count 2").code, 0);
  const auto plans = list_floorplans(dir / "fp");
  ASSERT_EQ(plans.size(), 2u);
  for (const auto& p : plans) EXPECT_NO_THROW(check_traversable(load_floorplan(p)));
}

TEST(Cli, MapRunsAreByteIdentical) {
  fixtures::TempDir dir("ttogm_cli");
  ASSERT_EQ(run("--output " + q(dir / "seq") + " datagen --mode scans --world corridor --scans 20").code, 0);
  ASSERT_EQ(run("-q --every-n 5 --output " + q(dir / "m1") + " map " + q(dir / "seq" / "scans")).code, 0);
  ASSERT_EQ(run("-q --every-n 5 --output " + q(dir / "m2") + " map " + q(dir / "seq" / "scans")).code, 0);
  for (const char* name : {"map.pgm", "map.meta", "map_filtered.pgm", "trajectory.txt"}) {
    EXPECT_EQ(slurp(dir / "m1" / name), slurp(dir / "m2" / name)) << name;
  }
  const auto r = run("eval " + q(dir / "m1" / "map.pgm") + " " + q(dir / "seq" / "truth.pgm") + " --alignment " +
                     q(dir / "seq" / "alignment.txt"));
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, MapRejectsSingleScanAndBadConfig) {
  fixtures::TempDir dir("ttogm_cli");
  ASSERT_EQ(run("--output " + q(dir / "seq") + " datagen --mode scans --world corridor --scans 2").code, 0);
  fs::remove(dir / "seq" / "scans" / "scan_00001.pcd");
  EXPECT_EQ(run("--output " + q(dir / "m") + " map " + q(dir / "seq" / "scans")).code, 2);

  std::ofstream(dir / "bad.toml") << "[filtration]\nt1 = 0.95\n";
  EXPECT_EQ(run("--config " + q(dir / "bad.toml") + " --output " + q(dir / "m2") + " map " + q(dir / "nowhere")).code,
            1);
  EXPECT_FALSE(fs::exists(dir / "m2"));
}

TEST(Cli, BenchWritesLatencyTable) {
  fixtures::TempDir dir("ttogm_cli");
  ASSERT_EQ(run("--output " + q(dir / "seq") + " datagen --mode scans --world corridor --scans 5").code, 0);
  const auto r = run("--output " + q(dir / "bench") + " bench " + q(dir / "seq" / "scans"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("per_scan"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "bench" / "latency.csv"));
}
