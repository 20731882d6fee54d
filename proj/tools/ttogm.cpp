#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ttogm/error.hpp"
#include "ttogm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ttogm;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kModel = 3 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string cleaner;
  std::optional<int> every_n;
  std::string output;
  bool verbose = false;
  bool quiet = false;
};

/// Defaults <- config file <- command-line overrides, validated before any
/// input is touched.
PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : PipelineConfig::load(g.config_path);
  if (g.seed) cfg.datagen.seed = *g.seed;
  if (!g.cleaner.empty()) cfg.cleaner = CleanerKind::parse(g.cleaner);
  if (g.every_n) cfg.every_n = *g.every_n;
  cfg.validate();
  return cfg;
}

fs::path output_dir(const Globals& g, const char* fallback) { return g.output.empty() ? fs::path(fallback) : fs::path(g.output); }

int cmd_map(const Globals& g, const std::string& input) {
  const auto cfg = resolve_config(g);
  const auto scans = list_scans(input);
  const auto out = output_dir(g, "map_out");
  const auto summary = run_mapping(scans, cfg, out);
  fmt::print("mapped {} scans ({} keyframes, {} prior fallbacks)\n", summary.scans, summary.keyframes,
             summary.fallbacks);
  fmt::print("map: {} ({}x{} cells, {} free, {} occupied)\n", (out / "map.pgm").string(), summary.map.width(),
             summary.map.height(), summary.map.count(kFree), summary.map.count(kOccupied));
  return kOk;
}

int cmd_clean(const Globals& g, const std::string& input) {
  const auto cfg = resolve_config(g);
  // Build the cleaner first: a broken model must fail before any output exists.
  const auto cleaner = make_cleaner(cfg.cleaner, cfg.clean);
  const auto map = read_map(input);
  const auto cleaned = clean_map(map, *cleaner, cfg.filtration, cfg.clean);
  const auto out = output_dir(g, "clean_out");
  fs::create_directories(out);
  const auto path = out / (fs::path(input).stem().string() + "_clean.pgm");
  write_map(path, cleaned, cfg.filtration);
  fmt::print("cleaned with {}: {}\n", cleaner->name(), path.string());
  return kOk;
}

int cmd_datagen(const Globals& g, const std::string& mode, const std::string& floorplans, const std::string& world,
                std::optional<std::size_t> count, std::optional<std::size_t> scans, int workers) {
  const auto cfg = resolve_config(g);
  const auto out = output_dir(g, "datagen_out");
  const auto& d = cfg.datagen;
  if (mode == "floorplans") {
    const std::size_t n = count.value_or(d.count);
    fs::create_directories(out);
    for (std::size_t i = 0; i < n; ++i) {
      write_floorplan(out / fmt::format("floorplan_{:05d}.pgm", i), random_floorplan(pair_seed(d.seed, i)));
    }
    fmt::print("wrote {} floorplans to {}\n", n, out.string());
    return kOk;
  }
  if (mode == "pairs") {
    std::vector<fs::path> plans;
    if (floorplans.empty()) {
      // Built-in worlds: the corridor-and-rooms layout plus procedural ones.
      const auto dir = out / "floorplans";
      fs::create_directories(dir);
      write_floorplan(dir / "corridor_room.pgm", corridor_room_world());
      for (std::uint64_t i = 0; i < 4; ++i) {
        write_floorplan(dir / fmt::format("random_{}.pgm", i), random_floorplan(pair_seed(d.seed, i)));
      }
      plans = list_floorplans(dir);
    } else {
      plans = list_floorplans(floorplans);
    }
    DatasetOptions opt;
    opt.count = count.value_or(d.count);
    opt.seed = d.seed;
    opt.ranges = d.ranges;
    opt.render = d.render;
    opt.planner = d.planner;
    opt.workers = workers;
    const auto summary = generate_dataset(plans, opt, out);
    fmt::print("wrote {} pairs to {} ({} outside the occupied-count band)\n", summary.pairs, out.string(),
               summary.out_of_band);
    return kOk;
  }
  if (mode == "scans") {
    FloorplanRaster fp;
    if (world == "corridor_room") {
      fp = corridor_room_world();
    } else if (world == "corridor") {
      fp = corridor_world(20.0, 2.0);
    } else {
      fp = load_floorplan(world);
    }
    const std::size_t n = scans.value_or(d.scans);
    if (n < 2) throw PreconditionError(fmt::format("a scan sequence needs at least 2 scans, got {}", n));
    const auto traj = scan_trajectory(fp, d.seed, n, d.scan_planner);
    write_scan_sequence(fp, traj, d.lidar, out);
    fmt::print("wrote {} scans of '{}' to {}\n", n, fp.id, out.string());
    return kOk;
  }
  throw ConfigError(fmt::format("unknown datagen mode '{}'", mode));
}

int cmd_eval(const std::string& map_path, const std::string& truth_path, const std::string& alignment_path) {
  const auto map = read_map(map_path);
  const auto truth = read_map(truth_path);
  const Alignment2D align = alignment_path.empty() ? Alignment2D{} : Alignment2D::read(alignment_path);
  const auto r = compute_iou(map, truth, align);
  fmt::print("unoccupied_iou {:.6f}{}\n", r.unoccupied, r.unoccupied_undefined ? " (empty in both)" : "");
  fmt::print("occupied_iou {:.6f}{}\n", r.occupied, r.occupied_undefined ? " (empty in both)" : "");
  fmt::print("compared_cells {}\n", r.compared_cells);
  return kOk;
}

int cmd_bench(const Globals& g, const std::string& input) {
  const auto cfg = resolve_config(g);
  const auto paths = list_scans(input);
  CloudLoadOptions load;
  load.intensity_divisor = cfg.intensity_divisor;
  std::vector<PointCloud> clouds;
  for (const auto& p : paths) clouds.push_back(load_cloud(p, detect_cloud_format(p), load));
  const auto report = benchmark_pipeline(clouds, cfg);
  fmt::print("{}", report.table());
  if (!g.output.empty()) {
    fs::create_directories(g.output);
    report.write_csv(fs::path(g.output) / "latency.csv");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occupancy grid mapping from 3D LiDAR scans, with map cleaning and synthetic data generation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Configuration file (see the `config` subcommand)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for data generation");
  app.add_option("--cleaner", g.cleaner, "identity | morph | model:<path> [args]");
  app.add_option("--every-n", g.every_n, "Clean a snapshot every N scans; 0 disables cleaning");
  app.add_option("--output", g.output, "Output directory");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Warnings and errors only");

  std::string map_input;
  auto* map = app.add_subcommand("map", "Build a map from a directory of .pcd/.csv scans");
  map->add_option("input", map_input, "Scan directory (files are processed in name order)")->required();

  std::string clean_input;
  auto* clean = app.add_subcommand("clean", "Clean an existing map offline");
  clean->add_option("map", clean_input, "Map image with its .meta sidecar")->required();

  std::string mode = "pairs", floorplans, world = "corridor_room";
  std::optional<std::size_t> count, scans;
  int workers = 1;
  auto* datagen = app.add_subcommand("datagen", "Generate synthetic training pairs, floorplans or LiDAR scans");
  datagen->add_option("--mode", mode, "pairs | floorplans | scans")
      ->check(CLI::IsMember({"pairs", "floorplans", "scans"}));
  datagen->add_option("--floorplans", floorplans, "Floorplan directory for pairs (default: built-in worlds)");
  datagen->add_option("--world", world, "Scan world: corridor_room | corridor | <floorplan image>");
  datagen->add_option("--count", count, "Number of pairs or floorplans");
  datagen->add_option("--scans", scans, "Number of scans in a sequence");
  datagen->add_option("--workers", workers, "Parallel workers for pairs")->check(CLI::PositiveNumber);

  std::string eval_map, eval_truth, eval_align;
  auto* eval = app.add_subcommand("eval", "Per-class IoU of a map against ground truth");
  eval->add_option("map", eval_map, "Map image")->required();
  eval->add_option("truth", eval_truth, "Ground-truth image")->required();
  eval->add_option("--alignment", eval_align, "File with `scale theta tx ty` (truth -> map)");

  std::string bench_input;
  auto* bench = app.add_subcommand("bench", "Per-stage latency of the mapping pipeline");
  bench->add_option("input", bench_input, "Scan directory")->required();

  auto* config = app.add_subcommand("config", "Print the default configuration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  auto logger = spdlog::stderr_color_mt("ttogm");
  spdlog::set_default_logger(logger);
  spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*map) return cmd_map(g, map_input);
    if (*clean) return cmd_clean(g, clean_input);
    if (*datagen) return cmd_datagen(g, mode, floorplans, world, count, scans, workers);
    if (*eval) return cmd_eval(eval_map, eval_truth, eval_align);
    if (*bench) return cmd_bench(g, bench_input);
    if (*config) {
      fmt::print("{}", default_config_text());
      return kOk;
    }
  } catch (const ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return kUsage;
  } catch (const ModelError& e) {
    spdlog::error("model: {}", e.what());
    return kModel;
  } catch (const DataError& e) {
    spdlog::error("data: {}", e.what());
    return kData;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kData;
  }
  return kUsage;
}
