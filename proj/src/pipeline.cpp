#include "ttogm/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>
#include <chrono>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ttogm/error.hpp"

namespace ttogm {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Rethrows the active library error with `context` prefixed, keeping the
/// error category so callers can still map it to an exit status.
[[noreturn]] void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const ShapeMismatchError& e) {
    throw ShapeMismatchError(context + ": " + e.what());
  } catch (const ModelError& e) {
    throw ModelError(context + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const NoCorrespondencesError& e) {
    throw NoCorrespondencesError(context + ": " + e.what());
  } catch (const PreconditionError& e) {
    throw PreconditionError(context + ": " + e.what());
  } catch (const RecordCountError& e) {
    throw RecordCountError(context + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(context + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(context + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(context + ": " + e.what());
  } catch (const Error& e) {
    throw Error(context + ": " + e.what());
  } catch (const std::bad_alloc&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(context + ": " + e.what());
  }
}

// ------------------------------------------------------------ config values

double as_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("'{}': expected a number, got '{}'", key, v));
  return out;
}

long long as_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("'{}': expected an integer, got '{}'", key, v));
  return out;
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("'{}': expected a non-negative integer, got '{}'", key, v));
  }
  return out;
}

int as_int32(const std::string& key, const std::string& v) {
  const long long x = as_int(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError(fmt::format("'{}': integer out of range: {}", key, v));
  }
  return static_cast<int>(x);
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(fmt::format("'{}': expected true or false, got '{}'", key, v));
}

std::string as_string(const std::string& key, const std::string& v) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') {
    throw ConfigError(fmt::format("'{}': expected a double-quoted string, got '{}'", key, v));
  }
  return v.substr(1, v.size() - 2);
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto num = [&](const char* k, auto member) {
      t[k] = [member](PipelineConfig& c, const std::string& key, const std::string& v) {
        member(c) = as_double(key, v);
      };
    };
    auto integer = [&](const char* k, auto member) {
      t[k] = [member](PipelineConfig& c, const std::string& key, const std::string& v) {
        member(c) = as_int32(key, v);
      };
    };
    num("preprocess.box_half_width", [](PipelineConfig& c) -> double& { return c.preprocess.box_half_width; });
    num("preprocess.voxel_resolution", [](PipelineConfig& c) -> double& { return c.preprocess.voxel_resolution; });
    t["input.intensity_divisor"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      const double d = as_double(key, v);
      c.intensity_divisor = d == 0.0 ? std::nullopt : std::optional<double>(d);
    };

    integer("gicp.knn", [](PipelineConfig& c) -> int& { return c.gicp.knn; });
    num("gicp.cov_epsilon", [](PipelineConfig& c) -> double& { return c.gicp.cov_epsilon; });
    integer("gicp.max_iterations", [](PipelineConfig& c) -> int& { return c.gicp.max_iterations; });
    num("gicp.translation_tol", [](PipelineConfig& c) -> double& { return c.gicp.translation_tol; });
    num("gicp.rotation_tol", [](PipelineConfig& c) -> double& { return c.gicp.rotation_tol; });
    num("gicp.max_correspondence_dist",
        [](PipelineConfig& c) -> double& { return c.gicp.max_correspondence_dist; });
    num("gicp.keyframe_dist", [](PipelineConfig& c) -> double& { return c.gicp.keyframe_dist; });
    num("gicp.keyframe_angle", [](PipelineConfig& c) -> double& { return c.gicp.keyframe_angle; });
    integer("gicp.submap_k_nearest", [](PipelineConfig& c) -> int& { return c.gicp.submap_k_nearest; });

    num("grid.resolution", [](PipelineConfig& c) -> double& { return c.grid.resolution; });
    num("grid.l_hit", [](PipelineConfig& c) -> double& { return c.grid.l_hit; });
    num("grid.l_miss", [](PipelineConfig& c) -> double& { return c.grid.l_miss; });
    num("grid.clamp_min", [](PipelineConfig& c) -> double& { return c.grid.clamp_min; });
    num("grid.clamp_max", [](PipelineConfig& c) -> double& { return c.grid.clamp_max; });
    num("grid.initial_size", [](PipelineConfig& c) -> double& { return c.grid.initial_size; });

    t["translation.z_band"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      if (as_bool(key, v)) {
        if (!c.z_band) c.z_band = ZBand{-0.5, 0.5};
      } else {
        c.z_band.reset();
      }
    };
    // z_min / z_max are applied after all keys are read, see from_document.

    num("filtration.t1", [](PipelineConfig& c) -> double& { return c.filtration.t1; });
    num("filtration.t2", [](PipelineConfig& c) -> double& { return c.filtration.t2; });
    num("filtration.t3", [](PipelineConfig& c) -> double& { return c.filtration.t3; });
    num("filtration.t1_out", [](PipelineConfig& c) -> double& { return c.filtration.t1_out; });
    num("filtration.t2_out", [](PipelineConfig& c) -> double& { return c.filtration.t2_out; });
    integer("filtration.neighbor_min", [](PipelineConfig& c) -> int& { return c.filtration.neighbor_min; });

    t["cleaner.kind"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      try {
        c.cleaner = CleanerKind::parse(as_string(key, v));
      } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("'{}': {}", key, e.what()));
      }
    };
    integer("cleaner.every_n", [](PipelineConfig& c) -> int& { return c.every_n; });
    t["cleaner.background"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      c.background_cleaning = as_bool(key, v);
    };
    integer("cleaner.tile_size", [](PipelineConfig& c) -> int& { return c.clean.tile_size; });
    integer("cleaner.overlap", [](PipelineConfig& c) -> int& { return c.clean.overlap; });
    integer("cleaner.workers", [](PipelineConfig& c) -> int& { return c.clean.workers; });
    num("cleaner.timeout_seconds", [](PipelineConfig& c) -> double& { return c.clean.timeout_seconds; });

    t["datagen.seed"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      c.datagen.seed = as_u64(key, v);
    };
    t["datagen.count"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      c.datagen.count = as_u64(key, v);
    };
    t["datagen.scans"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      c.datagen.scans = as_u64(key, v);
    };
    integer("datagen.beams", [](PipelineConfig& c) -> int& { return c.datagen.render.beams; });
    num("datagen.max_range", [](PipelineConfig& c) -> double& { return c.datagen.render.max_range; });
    integer("datagen.thin_cells", [](PipelineConfig& c) -> int& { return c.datagen.render.thin_cells; });
    num("datagen.planner_step", [](PipelineConfig& c) -> double& { return c.datagen.planner.step; });
    num("datagen.planner_clearance", [](PipelineConfig& c) -> double& { return c.datagen.planner.clearance; });
    num("datagen.planner_view_radius", [](PipelineConfig& c) -> double& { return c.datagen.planner.view_radius; });
    num("datagen.scan_view_radius", [](PipelineConfig& c) -> double& { return c.datagen.scan_planner.view_radius; });
    num("datagen.scan_coverage_goal",
        [](PipelineConfig& c) -> double& { return c.datagen.scan_planner.coverage_goal; });
    auto range = [&](const char* name, auto member) {
      t[fmt::format("datagen.{}_min", name)] = [member](PipelineConfig& c, const std::string& key,
                                                        const std::string& v) { member(c)[0] = as_double(key, v); };
      t[fmt::format("datagen.{}_max", name)] = [member](PipelineConfig& c, const std::string& key,
                                                        const std::string& v) { member(c)[1] = as_double(key, v); };
    };
    range("linear_drift", [](PipelineConfig& c) -> double(&)[2] { return c.datagen.ranges.linear_drift; });
    range("angular_drift", [](PipelineConfig& c) -> double(&)[2] { return c.datagen.ranges.angular_drift; });
    range("speckle_rate", [](PipelineConfig& c) -> double(&)[2] { return c.datagen.ranges.speckle_rate; });
    range("passthrough_rate", [](PipelineConfig& c) -> double(&)[2] { return c.datagen.ranges.passthrough_rate; });
    range("dropout_arc", [](PipelineConfig& c) -> double(&)[2] { return c.datagen.ranges.dropout_arc; });
    range("partial_coverage", [](PipelineConfig& c) -> double(&)[2] { return c.datagen.ranges.partial_coverage; });

    integer("lidar.channels", [](PipelineConfig& c) -> int& { return c.datagen.lidar.channels; });
    num("lidar.min_elevation_deg", [](PipelineConfig& c) -> double& { return c.datagen.lidar.min_elevation_deg; });
    num("lidar.max_elevation_deg", [](PipelineConfig& c) -> double& { return c.datagen.lidar.max_elevation_deg; });
    integer("lidar.azimuths", [](PipelineConfig& c) -> int& { return c.datagen.lidar.azimuths; });
    num("lidar.sensor_height", [](PipelineConfig& c) -> double& { return c.datagen.lidar.sensor_height; });
    num("lidar.wall_height", [](PipelineConfig& c) -> double& { return c.datagen.lidar.wall_height; });
    num("lidar.max_range", [](PipelineConfig& c) -> double& { return c.datagen.lidar.max_range; });
    t["lidar.floor"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      c.datagen.lidar.floor = as_bool(key, v);
    };
    t["lidar.ceiling"] = [](PipelineConfig& c, const std::string& key, const std::string& v) {
      c.datagen.lidar.ceiling = as_bool(key, v);
    };
    return t;
  }();
  return table;
}

}  // namespace

// ------------------------------------------------------------ ConfigDocument

ConfigDocument ConfigDocument::parse(const std::string& text, const std::string& origin) {
  ConfigDocument doc;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Strip a trailing comment that is not inside a string.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError(fmt::format("{}:{}: malformed section header '{}'", origin, lineno, line));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError(fmt::format("{}:{}: expected 'key = value'", origin, lineno));
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (!doc.values_.emplace(full, value).second) {
      throw ConfigError(fmt::format("{}:{}: duplicate key '{}'", origin, lineno, full));
    }
  }
  return doc;
}

ConfigDocument ConfigDocument::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

// ------------------------------------------------------------ PipelineConfig

PipelineConfig::PipelineConfig() {
  cleaner.type = CleanerKind::Type::Morphological;
  // Saturated log-odds must stay inside the occupied likelihood band
  // [t2, t3]; logistic(3.0) = 0.9526.
  grid.clamp_max = 3.0;
}

void PipelineConfig::validate() const {
  preprocess.validate();
  gicp.validate();
  grid.validate();
  filtration.validate();
  clean.validate();
  if (z_band && !(z_band->min_z < z_band->max_z)) {
    throw ConfigError(fmt::format("translation z band must satisfy z_min < z_max, got [{}, {}]", z_band->min_z,
                                  z_band->max_z));
  }
  if (every_n < 0) throw ConfigError(fmt::format("cleaner.every_n must be >= 0, got {}", every_n));
  if (intensity_divisor && !(*intensity_divisor > 0.0)) {
    throw ConfigError(fmt::format("input.intensity_divisor must be > 0, got {}", *intensity_divisor));
  }
  datagen.render.validate();
  datagen.planner.validate();
  datagen.scan_planner.validate();
  datagen.ranges.validate();
  datagen.lidar.validate();
}

PipelineConfig PipelineConfig::from_document(const ConfigDocument& doc) {
  PipelineConfig cfg;
  const auto& table = setters();
  std::optional<double> z_min, z_max;
  for (const auto& [key, value] : doc.values()) {
    if (key == "translation.z_min") {
      z_min = as_double(key, value);
      continue;
    }
    if (key == "translation.z_max") {
      z_max = as_double(key, value);
      continue;
    }
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
    it->second(cfg, key, value);
  }
  if (cfg.z_band) {
    if (z_min) cfg.z_band->min_z = *z_min;
    if (z_max) cfg.z_band->max_z = *z_max;
  }
  cfg.validate();
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  return from_document(ConfigDocument::load(path));
}

std::string default_config_text() {
  const PipelineConfig c;
  const auto& d = c.datagen;
  return fmt::format(R"(# Occupancy-grid mapping configuration. Every key is optional; the values
# below are the defaults. Format: [section] headers, `key = value` lines,
# `#` comments, strings in double quotes.

[input]
# Divisor for raw intensities; 0 uses the file's declared maximum (or 255).
intensity_divisor = 0

[preprocess]
# Points inside this cube around the sensor (robot body) are dropped, m.
box_half_width = {}
# Voxel edge of the downsampling grid used for registration, m.
voxel_resolution = {}

[gicp]
# Neighbors per covariance estimate (the point itself included).
knn = {}
# Smallest regularized covariance eigenvalue (plane thickness).
cov_epsilon = {}
max_iterations = {}
# Convergence: increment below both tolerances (m, rad).
translation_tol = {}
rotation_tol = {}
# Pairs farther apart than this are ignored, m.
max_correspondence_dist = {}
# New keyframe when the nearest one is this far away (m) or rotated this much (deg).
keyframe_dist = {}
keyframe_angle = {}
# Keyframes merged into the scan-to-map target.
submap_k_nearest = {}

[grid]
resolution = {}
# Log-odds added per scan for an endpoint cell / a traversed cell.
l_hit = {}
l_miss = {}
# Log-odds bounds. The upper bound keeps saturated cells inside the occupied
# likelihood band [t2, t3] (logistic(3) = 0.953).
clamp_min = {}
clamp_max = {}
# Side of the first allocated square, m; the grid doubles as needed.
initial_size = {}

[translation]
# Keep only points with z_min <= z <= z_max (sensor frame) when flattening.
z_band = false
z_min = -0.5
z_max = 0.5

[filtration]
# Input filter on likelihood: < t1 free, [t2, t3] occupied, else unknown.
t1 = {}
t2 = {}
t3 = {}
# Output filter on cleaner values: < t1_out free, [t1_out, t2_out] occupied, else unknown.
t1_out = {}
t2_out = {}
# Cells with fewer same-valued 4-neighbors become unknown.
neighbor_min = {}

[cleaner]
# "identity", "morph", or "model:<path> [args]" (.onnx files use the bundled bridge).
kind = "{}"
# Clean a snapshot every N scans and at the end; 0 disables cleaning.
every_n = {}
# Clean snapshots on a worker thread while mapping continues.
background = {}
tile_size = {}
overlap = {}
# Patch workers for cleaners that allow concurrent calls.
workers = {}
# Per-patch response timeout for external models, s.
timeout_seconds = {}

[datagen]
seed = {}
# Map pairs to generate.
count = {}
# Poses rendered for a LiDAR scan sequence.
scans = {}
# 2D ray casting: beams per pose, range (m), thickest pass-through obstacle (cells).
beams = {}
max_range = {}
thin_cells = {}
# Trajectory planner: pose spacing (m), preferred clearance (m), coverage sight range (m).
planner_step = {}
planner_clearance = {}
planner_view_radius = {}
# Tour for LiDAR scan sequences: coverage sight range (m) and coverage goal.
scan_view_radius = {}
scan_coverage_goal = {}
# Error parameter ranges, sampled uniformly per pair.
linear_drift_min = {}
linear_drift_max = {}
angular_drift_min = {}
angular_drift_max = {}
speckle_rate_min = {}
speckle_rate_max = {}
passthrough_rate_min = {}
passthrough_rate_max = {}
dropout_arc_min = {}
dropout_arc_max = {}
partial_coverage_min = {}
partial_coverage_max = {}

[lidar]
channels = {}
min_elevation_deg = {}
max_elevation_deg = {}
azimuths = {}
sensor_height = {}
wall_height = {}
max_range = {}
floor = {}
ceiling = {}
)",
                     c.preprocess.box_half_width, c.preprocess.voxel_resolution, c.gicp.knn, c.gicp.cov_epsilon,
                     c.gicp.max_iterations, c.gicp.translation_tol, c.gicp.rotation_tol,
                     c.gicp.max_correspondence_dist, c.gicp.keyframe_dist, c.gicp.keyframe_angle,
                     c.gicp.submap_k_nearest, c.grid.resolution, c.grid.l_hit, c.grid.l_miss, c.grid.clamp_min,
                     c.grid.clamp_max, c.grid.initial_size, c.filtration.t1, c.filtration.t2, c.filtration.t3,
                     c.filtration.t1_out, c.filtration.t2_out, c.filtration.neighbor_min, c.cleaner.to_string(),
                     c.every_n, c.background_cleaning, c.clean.tile_size, c.clean.overlap, c.clean.workers,
                     c.clean.timeout_seconds, d.seed, d.count, d.scans, d.render.beams, d.render.max_range,
                     d.render.thin_cells, d.planner.step, d.planner.clearance, d.planner.view_radius,
                     d.scan_planner.view_radius, d.scan_planner.coverage_goal,
                     d.ranges.linear_drift[0], d.ranges.linear_drift[1], d.ranges.angular_drift[0],
                     d.ranges.angular_drift[1], d.ranges.speckle_rate[0], d.ranges.speckle_rate[1],
                     d.ranges.passthrough_rate[0], d.ranges.passthrough_rate[1], d.ranges.dropout_arc[0],
                     d.ranges.dropout_arc[1], d.ranges.partial_coverage[0], d.ranges.partial_coverage[1],
                     d.lidar.channels, d.lidar.min_elevation_deg, d.lidar.max_elevation_deg, d.lidar.azimuths,
                     d.lidar.sensor_height, d.lidar.wall_height, d.lidar.max_range, d.lidar.floor, d.lidar.ceiling);
}

// ------------------------------------------------------------ Mapper

Mapper::Mapper(const PipelineConfig& cfg, std::shared_ptr<PatchCleaner> cleaner)
    : cfg_(cfg), cleaner_(std::move(cleaner)) {
  cfg_.validate();
}

Mapper::~Mapper() {
  if (pending_.valid()) pending_.wait();
}

ScanReport Mapper::process(const PointCloud& cloud) {
  const std::uint64_t index = processed_;
  const char* stage = "filtering";
  ScanReport report;
  report.scan_index = index;
  try {
    const auto scan_start = Clock::now();
    auto t0 = Clock::now();
    const PointCloud body_free = box_filter(cloud, cfg_.preprocess);
    const PointCloud filtered = voxel_grid_filter(body_free, cfg_.preprocess);
    report.filtered_points = filtered.size();
    latency_.add(Stage::Filtering, elapsed_ms(t0));

    stage = "registration";
    t0 = Clock::now();
    CovCloud covs = estimate_covariances(filtered, cfg_.gicp);
    PoseSE3 pose;
    if (index == 0) {
      pose = PoseSE3::identity();
    } else {
      // Scan-to-scan odometry gives the prior for scan-to-map refinement.
      PoseSE3 motion = last_motion_;
      try {
        const auto s2s = gicp_align(covs, *previous_scan_, last_motion_, cfg_.gicp);
        if (s2s.diverged) {
          spdlog::warn("scan {}: scan-to-scan alignment diverged, assuming constant velocity", index);
        } else {
          motion = s2s.pose;
        }
      } catch (const NoCorrespondencesError&) {
        spdlog::warn("scan {}: no scan-to-scan correspondences, assuming constant velocity", index);
      }
      const PoseSE3 prior = last_pose_ * motion;
      try {
        const auto s2m = scan_to_map_align(covs, *submap_, prior, cfg_.gicp);
        pose = s2m.pose;
        report.fell_back_to_prior = s2m.fell_back_to_prior;
      } catch (const NoCorrespondencesError&) {
        spdlog::warn("scan {}: no scan-to-map correspondences, keeping the odometry prior", index);
        pose = prior;
        report.fell_back_to_prior = true;
      }
    }
    stage = "keyframes";
    report.keyframe_added = keyframes_.maybe_add(pose, filtered, covs, cfg_.gicp);
    const auto ids = keyframes_.nearest_ids(pose, cfg_.gicp);
    if (!submap_ || ids != submap_ids_) {
      submap_ = std::make_unique<GicpTarget>(keyframes_.build_submap(ids).points);
      submap_ids_ = ids;
    }
    last_motion_ = index == 0 ? PoseSE3::identity() : last_pose_.inverse() * pose;
    last_pose_ = pose;
    previous_scan_ = std::make_unique<GicpTarget>(std::move(covs));
    latency_.add(Stage::Registration, elapsed_ms(t0));

    stage = "translation";
    t0 = Clock::now();
    const Scan2D scan2d = translate_cloud(body_free, cfg_.z_band);
    latency_.add(Stage::Translation, elapsed_ms(t0));

    stage = "integration";
    t0 = Clock::now();
    if (!grid_ready_) {
      grid_ = OccupancyGrid(cfg_.grid, pose.translation().x(), pose.translation().y());
      grid_ready_ = true;
    }
    grid_.integrate_scan(scan2d, pose);
    trajectory_.record(index, pose);
    latency_.add(Stage::Integration, elapsed_ms(t0));
    latency_.add_scan(elapsed_ms(scan_start));
    report.pose = pose;
    ++processed_;

    stage = "cleaning";
    if (cleaner_ && cfg_.every_n > 0 && processed_ % static_cast<std::size_t>(cfg_.every_n) == 0) start_cleaning();
  } catch (...) {
    rethrow_with_context(fmt::format("scan {} ({})", index, stage));
  }
  return report;
}

DiscreteMap Mapper::snapshot() const {
  if (!grid_ready_) throw PreconditionError("no scan has been mapped yet");
  return remove_floating_points(input_filter(grid_, cfg_.filtration), cfg_.filtration);
}

void Mapper::start_cleaning() {
  collect_cleaning();
  auto snap = std::make_shared<const DiscreteMap>(snapshot());
  published_at_ = processed_;
  auto job = [cleaner = cleaner_, snap, filtration = cfg_.filtration, options = cfg_.clean] {
    const auto t0 = Clock::now();
    DiscreteMap cleaned = clean_map(*snap, *cleaner, filtration, options);
    return std::make_pair(std::move(cleaned), elapsed_ms(t0));
  };
  if (cfg_.background_cleaning) {
    pending_ = std::async(std::launch::async, job);
  } else {
    std::promise<std::pair<DiscreteMap, double>> done;
    done.set_value(job());
    pending_ = done.get_future();
  }
}

void Mapper::collect_cleaning() {
  if (!pending_.valid()) return;
  try {
    auto [map, ms] = pending_.get();
    latency_.add(Stage::Cleaning, ms);
    published_ = std::move(map);
  } catch (...) {
    rethrow_with_context(fmt::format("cleaning snapshot after scan {}", published_at_ == 0 ? 0 : published_at_ - 1));
  }
}

DiscreteMap Mapper::finish() {
  if (!grid_ready_) throw PreconditionError("no scan has been mapped yet");
  collect_cleaning();
  if (!cleaner_ || cfg_.every_n == 0) return snapshot();
  if (!published_ || published_at_ != processed_) {
    cfg_.background_cleaning = false;
    start_cleaning();
    collect_cleaning();
  }
  return *published_;
}

// ------------------------------------------------------------ runs

std::vector<std::filesystem::path> list_scans(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(fmt::format("scan directory '{}' not found", dir.string()));
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".pcd" || ext == ".csv") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::shared_ptr<PatchCleaner> make_pipeline_cleaner(const PipelineConfig& cfg) {
  if (cfg.every_n == 0) return nullptr;
  return std::shared_ptr<PatchCleaner>(make_cleaner(cfg.cleaner, cfg.clean));
}

MapRunSummary run_mapping(const std::vector<std::filesystem::path>& scans, const PipelineConfig& cfg,
                          const std::filesystem::path& out_dir) {
  cfg.validate();
  if (scans.size() < 2) {
    throw PreconditionError(fmt::format("mapping needs at least 2 scans, got {}", scans.size()));
  }
  Mapper mapper(cfg, make_pipeline_cleaner(cfg));
  CloudLoadOptions load;
  load.intensity_divisor = cfg.intensity_divisor;
  MapRunSummary summary;
  for (std::size_t k = 0; k < scans.size(); ++k) {
    PointCloud cloud;
    try {
      cloud = load_cloud(scans[k], detect_cloud_format(scans[k]), load);
    } catch (...) {
      rethrow_with_context(fmt::format("scan {} (loading '{}')", k, scans[k].filename().string()));
    }
    const auto report = mapper.process(cloud);
    summary.fallbacks += report.fell_back_to_prior ? 1 : 0;
  }
  const DiscreteMap filtered = mapper.snapshot();
  summary.map = mapper.finish();
  summary.scans = mapper.scans_processed();
  summary.keyframes = mapper.keyframes();

  std::filesystem::create_directories(out_dir);
  write_map(out_dir / "map.pgm", summary.map, cfg.filtration);
  write_map(out_dir / "map_filtered.pgm", filtered, cfg.filtration);
  mapper.trajectory().write_tum(out_dir / "trajectory.txt");
  mapper.latency().write_csv(out_dir / "latency.csv");
  return summary;
}

LatencyReport benchmark_pipeline(const std::vector<PointCloud>& clouds, const PipelineConfig& cfg) {
  cfg.validate();
  if (clouds.empty()) throw PreconditionError("benchmark needs at least one scan");
  PipelineConfig run = cfg;
  run.background_cleaning = false;  // cleaning is timed on its own, not overlapped with mapping
  Mapper mapper(run, make_pipeline_cleaner(run));
  for (const auto& c : clouds) mapper.process(c);
  mapper.finish();
  return mapper.latency();
}

}  // namespace ttogm
