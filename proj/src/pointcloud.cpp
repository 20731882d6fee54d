#include "ttogm/pointcloud.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ttogm/error.hpp"

namespace ttogm {

void PreprocessConfig::validate() const {
  if (!(box_half_width > 0.0)) {
    throw ConfigError(fmt::format("box_half_width must be > 0, got {}", box_half_width));
  }
  if (!(voxel_resolution > 0.0)) {
    throw ConfigError(fmt::format("voxel_resolution must be > 0, got {}", voxel_resolution));
  }
}

namespace {

struct PcdField {
  std::string name;
  int size = 4;
  char type = 'F';
  int count = 1;
  std::size_t offset = 0;
};

struct PcdHeader {
  std::vector<PcdField> fields;
  std::size_t points = 0;
  std::string data;
  std::optional<double> intensity_max;
  std::size_t record_size = 0;
};

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

PcdHeader parse_pcd_header(std::istream& in, const std::filesystem::path& path) {
  PcdHeader h;
  std::optional<std::size_t> width, height, points;
  std::vector<std::string> names, sizes, types, counts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto toks = split_ws(line.substr(1));
      if (toks.size() == 2 && toks[0] == "INTENSITY_MAX") {
        try {
          h.intensity_max = std::stod(toks[1]);
        } catch (const std::exception&) {
          throw FormatError(fmt::format("{}: bad INTENSITY_MAX '{}'", path.string(), toks[1]));
        }
      }
      continue;
    }
    auto toks = split_ws(line);
    const std::string& key = toks[0];
    std::vector<std::string> rest(toks.begin() + 1, toks.end());
    try {
      if (key == "VERSION" || key == "VIEWPOINT") {
      } else if (key == "FIELDS") {
        names = rest;
      } else if (key == "SIZE") {
        sizes = rest;
      } else if (key == "TYPE") {
        types = rest;
      } else if (key == "COUNT") {
        counts = rest;
      } else if (key == "WIDTH") {
        width = std::stoull(rest.at(0));
      } else if (key == "HEIGHT") {
        height = std::stoull(rest.at(0));
      } else if (key == "POINTS") {
        points = std::stoull(rest.at(0));
      } else if (key == "DATA") {
        h.data = rest.at(0);
        break;
      } else {
        throw FormatError(fmt::format("{}: unknown PCD header key '{}'", path.string(), key));
      }
    } catch (const std::out_of_range&) {
      throw FormatError(fmt::format("{}: header key '{}' has no value", path.string(), key));
    } catch (const std::invalid_argument&) {
      throw FormatError(fmt::format("{}: header key '{}' has a non-numeric value", path.string(), key));
    }
  }
  if (h.data.empty()) throw FormatError(fmt::format("{}: PCD header has no DATA line", path.string()));
  if (names.empty()) throw FormatError(fmt::format("{}: PCD header has no FIELDS", path.string()));
  if (sizes.size() != names.size() || types.size() != names.size() ||
      (!counts.empty() && counts.size() != names.size())) {
    throw FormatError(fmt::format("{}: FIELDS/SIZE/TYPE/COUNT lengths differ", path.string()));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    PcdField f;
    f.name = names[i];
    f.size = std::stoi(sizes[i]);
    f.type = types[i].empty() ? '?' : types[i][0];
    f.count = counts.empty() ? 1 : std::stoi(counts[i]);
    if (f.type != 'F' && f.type != 'U' && f.type != 'I') {
      throw FormatError(fmt::format("{}: unsupported TYPE '{}'", path.string(), types[i]));
    }
    if (!(f.size == 1 || f.size == 2 || f.size == 4 || f.size == 8) || (f.type == 'F' && f.size < 4)) {
      throw FormatError(fmt::format("{}: unsupported SIZE {} for field {}", path.string(), f.size, f.name));
    }
    f.offset = offset;
    offset += static_cast<std::size_t>(f.size) * f.count;
    h.fields.push_back(f);
  }
  h.record_size = offset;
  if (points) {
    h.points = *points;
  } else if (width && height) {
    h.points = *width * *height;
  } else {
    throw FormatError(fmt::format("{}: PCD header declares neither POINTS nor WIDTH/HEIGHT", path.string()));
  }
  if (width && height && *width * *height != h.points) {
    throw FormatError(fmt::format("{}: WIDTH*HEIGHT={} but POINTS={}", path.string(), *width * *height, h.points));
  }
  for (const char* required : {"x", "y", "z", "intensity"}) {
    if (std::none_of(h.fields.begin(), h.fields.end(), [&](const PcdField& f) { return f.name == required; })) {
      throw FormatError(fmt::format("{}: PCD is missing field '{}'", path.string(), required));
    }
  }
  return h;
}

double decode_binary(const char* p, const PcdField& f) {
  auto read = [p]<typename T>(T) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  };
  if (f.type == 'F') return f.size == 4 ? read(float{}) : read(double{});
  if (f.type == 'U') {
    switch (f.size) {
      case 1: return read(std::uint8_t{});
      case 2: return read(std::uint16_t{});
      case 4: return read(std::uint32_t{});
      default: return read(std::uint64_t{});
    }
  }
  switch (f.size) {
    case 1: return read(std::int8_t{});
    case 2: return read(std::int16_t{});
    case 4: return read(std::int32_t{});
    default: return read(std::int64_t{});
  }
}

class CloudBuilder {
 public:
  CloudBuilder(double divisor, CloudLoadStats* stats) : divisor_(divisor), stats_(stats) {}

  void add(double x, double y, double z, double raw_intensity) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      ++local_.dropped_non_finite;
      return;
    }
    double i = raw_intensity / divisor_;
    if (!(i >= 0.0 && i <= 1.0)) {
      ++local_.clamped_intensity;
      i = std::isfinite(i) ? std::clamp(i, 0.0, 1.0) : 0.0;
    }
    cloud_.points.push_back({x, y, z, i});
  }

  PointCloud finish(const std::filesystem::path& path) {
    if (local_.dropped_non_finite > 0) {
      spdlog::warn("{}: dropped {} points with non-finite coordinates", path.string(), local_.dropped_non_finite);
    }
    if (local_.clamped_intensity > 0) {
      spdlog::warn("{}: clamped {} intensities into [0,1]", path.string(), local_.clamped_intensity);
    }
    if (stats_) *stats_ = local_;
    return std::move(cloud_);
  }

  void reserve(std::size_t n) { cloud_.points.reserve(n); }

 private:
  double divisor_;
  CloudLoadStats* stats_;
  CloudLoadStats local_;
  PointCloud cloud_;
};

double pick_divisor(const CloudLoadOptions& options, std::optional<double> declared) {
  double d = options.intensity_divisor.value_or(declared.value_or(255.0));
  if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError(fmt::format("intensity divisor must be > 0, got {}", d));
  return d;
}

PointCloud load_pcd(const std::filesystem::path& path, CloudFormat format, const CloudLoadOptions& options,
                    CloudLoadStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open point cloud '{}'", path.string()));
  PcdHeader h = parse_pcd_header(in, path);
  const bool ascii = h.data == "ascii";
  if (!ascii && h.data != "binary") {
    throw FormatError(fmt::format("{}: unsupported DATA '{}'", path.string(), h.data));
  }
  const CloudFormat declared = ascii ? CloudFormat::PcdAscii : CloudFormat::PcdBinary;
  if (declared != format) {
    throw FormatError(fmt::format("{}: file declares DATA {} but a different PCD format was requested",
                                  path.string(), h.data));
  }
  auto index_of = [&](const char* name) {
    return static_cast<std::size_t>(
        std::find_if(h.fields.begin(), h.fields.end(), [&](const PcdField& f) { return f.name == name; }) -
        h.fields.begin());
  };
  const std::array<std::size_t, 4> idx{index_of("x"), index_of("y"), index_of("z"), index_of("intensity")};
  CloudBuilder builder(pick_divisor(options, h.intensity_max), stats);
  builder.reserve(h.points);

  if (ascii) {
    std::size_t columns = 0;
    std::vector<std::size_t> column_of(h.fields.size());
    for (std::size_t i = 0; i < h.fields.size(); ++i) {
      column_of[i] = columns;
      columns += h.fields[i].count;
    }
    std::string line;
    std::size_t records = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      auto toks = split_ws(line);
      if (toks.empty()) continue;
      ++records;
      if (records > h.points) {
        throw RecordCountError(fmt::format("{}: header declares {} points but body has more", path.string(), h.points));
      }
      if (toks.size() != columns) {
        throw FormatError(fmt::format("{}: record {} has {} fields, expected {}", path.string(), records,
                                      toks.size(), columns));
      }
      std::array<double, 4> v{};
      for (int k = 0; k < 4; ++k) {
        const std::string& t = toks[column_of[idx[k]]];
        char* end = nullptr;
        v[k] = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0') {
          throw FormatError(fmt::format("{}: record {} has non-numeric value '{}'", path.string(), records, t));
        }
      }
      builder.add(v[0], v[1], v[2], v[3]);
    }
    if (records != h.points) {
      throw RecordCountError(
          fmt::format("{}: header declares {} points but body has {}", path.string(), h.points, records));
    }
  } else {
    std::vector<char> body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t expected = h.points * h.record_size;
    if (body.size() != expected) {
      throw RecordCountError(fmt::format("{}: header declares {} points ({} bytes) but body has {} bytes",
                                         path.string(), h.points, expected, body.size()));
    }
    for (std::size_t r = 0; r < h.points; ++r) {
      const char* rec = body.data() + r * h.record_size;
      std::array<double, 4> v{};
      for (int k = 0; k < 4; ++k) v[k] = decode_binary(rec + h.fields[idx[k]].offset, h.fields[idx[k]]);
      builder.add(v[0], v[1], v[2], v[3]);
    }
  }
  return builder.finish(path);
}

PointCloud load_csv(const std::filesystem::path& path, const CloudLoadOptions& options, CloudLoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open point cloud '{}'", path.string()));
  CloudBuilder builder(pick_divisor(options, std::nullopt), stats);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("x,", 0) == 0) {
      if (line != "x,y,z,intensity") {
        throw FormatError(fmt::format("{}: CSV header must be 'x,y,z,intensity'", path.string()));
      }
      continue;
    }
    std::array<double, 4> v{};
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const std::string tok = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (n >= 4) {
        throw FormatError(fmt::format("{}:{}: expected 4 fields", path.string(), lineno));
      }
      char* end = nullptr;
      v[n] = std::strtod(tok.c_str(), &end);
      if (tok.empty() || *end != '\0') {
        throw FormatError(fmt::format("{}:{}: non-numeric field '{}'", path.string(), lineno, tok));
      }
      ++n;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (n != 4) throw FormatError(fmt::format("{}:{}: expected 4 fields, got {}", path.string(), lineno, n));
    builder.add(v[0], v[1], v[2], v[3]);
  }
  return builder.finish(path);
}

}  // namespace

CloudFormat detect_cloud_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv" || ext == ".txt") return CloudFormat::XyziCsv;
  if (ext != ".pcd") throw FormatError(fmt::format("cannot infer point cloud format of '{}'", path.string()));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open point cloud '{}'", path.string()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("DATA", 0) == 0) {
      return line.find("binary") != std::string::npos ? CloudFormat::PcdBinary : CloudFormat::PcdAscii;
    }
  }
  throw FormatError(fmt::format("{}: PCD header has no DATA line", path.string()));
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format, const CloudLoadOptions& options,
                      CloudLoadStats* stats) {
  if (!std::filesystem::exists(path)) throw IoError(fmt::format("point cloud '{}' does not exist", path.string()));
  if (format == CloudFormat::XyziCsv) return load_csv(path, options, stats);
  return load_pcd(path, format, options, stats);
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud, CloudFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write point cloud '{}'", path.string()));
  if (format == CloudFormat::XyziCsv) {
    // CSV carries no declared maximum, so intensities go out on the raw
    // 0-255 scale that the reader's default divisor undoes.
    out << "x,y,z,intensity\n";
    for (const auto& p : cloud.points) out << fmt::format("{},{},{},{}\n", p.x, p.y, p.z, p.intensity * 255.0);
  } else {
    const bool ascii = format == CloudFormat::PcdAscii;
    out << "# .PCD v0.7 - Point Cloud Data file format\n"
        << "# INTENSITY_MAX 1\n"
        << "VERSION 0.7\n"
        << "FIELDS x y z intensity\n"
        << "SIZE 4 4 4 4\n"
        << "TYPE F F F F\n"
        << "COUNT 1 1 1 1\n"
        << "WIDTH " << cloud.size() << "\n"
        << "HEIGHT 1\n"
        << "VIEWPOINT 0 0 0 1 0 0 0\n"
        << "POINTS " << cloud.size() << "\n"
        << "DATA " << (ascii ? "ascii" : "binary") << "\n";
    if (ascii) {
      // {} on float prints the shortest representation that round-trips.
      for (const auto& p : cloud.points) {
        out << fmt::format("{} {} {} {}\n", static_cast<float>(p.x), static_cast<float>(p.y),
                           static_cast<float>(p.z), static_cast<float>(p.intensity));
      }
    } else {
      std::vector<float> buf;
      buf.reserve(cloud.size() * 4);
      for (const auto& p : cloud.points) {
        buf.insert(buf.end(), {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                               static_cast<float>(p.intensity)});
      }
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  }
  if (!out) throw IoError(fmt::format("failed writing point cloud '{}'", path.string()));
}

PointCloud box_filter(const PointCloud& cloud, const PreprocessConfig& cfg) {
  PointCloud out;
  out.scan_index = cloud.scan_index;
  out.timestamp = cloud.timestamp;
  out.points.reserve(cloud.size());
  const double h = cfg.box_half_width;
  for (const auto& p : cloud.points) {
    if (std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z)}) > h) out.points.push_back(p);
  }
  return out;
}

PointCloud voxel_grid_filter(const PointCloud& cloud, const PreprocessConfig& cfg) {
  cfg.validate();
  using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
  const double r = cfg.voxel_resolution;
  std::vector<std::pair<Key, std::size_t>> keyed;
  keyed.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    keyed.emplace_back(Key{static_cast<std::int64_t>(std::floor(p.x / r)),
                           static_cast<std::int64_t>(std::floor(p.y / r)),
                           static_cast<std::int64_t>(std::floor(p.z / r))},
                       i);
  }
  std::sort(keyed.begin(), keyed.end());

  PointCloud out;
  out.scan_index = cloud.scan_index;
  out.timestamp = cloud.timestamp;
  for (std::size_t begin = 0; begin < keyed.size();) {
    std::size_t end = begin;
    double sx = 0, sy = 0, sz = 0, si = 0;
    while (end < keyed.size() && keyed[end].first == keyed[begin].first) {
      const auto& p = cloud.points[keyed[end].second];
      sx += p.x;
      sy += p.y;
      sz += p.z;
      si += p.intensity;
      ++end;
    }
    const double n = static_cast<double>(end - begin);
    out.points.push_back({sx / n, sy / n, sz / n, si / n});
    begin = end;
  }
  return out;
}

}  // namespace ttogm
