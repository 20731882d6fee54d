#include "ttogm/cleaner.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ttogm/error.hpp"

#ifndef TTOGM_ONNX_BRIDGE_DEFAULT
#define TTOGM_ONNX_BRIDGE_DEFAULT "tools/onnx_model_server.py"
#endif

namespace ttogm {

static_assert(std::endian::native == std::endian::little, "tile protocol I/O assumes a little-endian host");

void CleanOptions::validate() const {
  if (tile_size <= 0) throw ConfigError(fmt::format("tile_size must be > 0, got {}", tile_size));
  if (overlap < 0 || overlap >= tile_size) {
    throw ConfigError(fmt::format("overlap must satisfy 0 <= overlap < tile_size, got {}", overlap));
  }
  if (workers < 1) throw ConfigError(fmt::format("workers must be >= 1, got {}", workers));
  if (!(timeout_seconds > 0.0)) throw ConfigError("model timeout must be > 0");
}

// ---------------------------------------------------------------- tiling

namespace {

int tiles_along(int extent, int tile, int stride) {
  if (extent <= tile) return 1;
  return (extent - tile + stride - 1) / stride + 1;
}

}  // namespace

std::vector<TilePatch> tile_map(const DiscreteMap& map, int tile_size, int overlap) {
  CleanOptions{tile_size, overlap}.validate();
  const int stride = tile_size - overlap;
  const int rows = tiles_along(map.height(), tile_size, stride);
  const int cols = tiles_along(map.width(), tile_size, stride);
  std::vector<TilePatch> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  std::uint32_t id = 0;
  for (int tr = 0; tr < rows; ++tr) {
    for (int tc = 0; tc < cols; ++tc) {
      TilePatch p;
      p.tile_size = tile_size;
      p.row = tr * stride;
      p.col = tc * stride;
      p.valid_rows = std::min(tile_size, map.height() - p.row);
      p.valid_cols = std::min(tile_size, map.width() - p.col);
      p.patch_id = id++;
      p.pixels.assign(static_cast<std::size_t>(tile_size) * tile_size, 1.0f);
      for (int r = 0; r < p.valid_rows; ++r) {
        for (int c = 0; c < p.valid_cols; ++c) {
          p.at(r, c) = static_cast<float>(map.at(p.row + r, p.col + c)) / 255.0f;
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

LikelihoodMap stitch_map(const std::vector<TilePatch>& patches, const MapGeometry& geometry) {
  const std::size_t n = geometry.cell_count();
  std::vector<double> sum(n, 0.0);
  std::vector<std::uint32_t> count(n, 0);
  for (const auto& p : patches) {
    if (p.pixels.size() != static_cast<std::size_t>(p.tile_size) * p.tile_size) {
      throw ShapeMismatchError(fmt::format("patch {} holds {} pixels, expected {}", p.patch_id, p.pixels.size(),
                                           static_cast<std::size_t>(p.tile_size) * p.tile_size));
    }
    for (int r = 0; r < p.valid_rows; ++r) {
      const int mr = p.row + r;
      if (mr < 0 || mr >= geometry.height) continue;
      for (int c = 0; c < p.valid_cols; ++c) {
        const int mc = p.col + c;
        if (mc < 0 || mc >= geometry.width) continue;
        const std::size_t i = static_cast<std::size_t>(mr) * geometry.width + mc;
        sum[i] += p.at(r, c);
        ++count[i];
      }
    }
  }
  LikelihoodMap out(geometry, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] == 0) {
      throw PreconditionError(fmt::format("stitch_map: cell (row {}, col {}) is not covered by any patch",
                                          i / geometry.width, i % geometry.width));
    }
    out.cells[i] = static_cast<float>(sum[i] / count[i]);
  }
  return out;
}

// ---------------------------------------------------------------- morphology

namespace {

enum class Label : std::uint8_t { Free, Occupied, Unknown };

Label label_of(float v) {
  constexpr float kFreeOcc = 50.0f / 255.0f;
  constexpr float kOccUnknown = (100.0f / 255.0f + 1.0f) / 2.0f;
  if (v < kFreeOcc) return Label::Free;
  if (v < kOccUnknown) return Label::Occupied;
  return Label::Unknown;
}

float value_of(Label l) {
  switch (l) {
    case Label::Free: return 0.0f;
    case Label::Occupied: return 100.0f / 255.0f;
    default: return 1.0f;
  }
}

std::vector<std::uint8_t> closing(const std::vector<std::uint8_t>& mask, int n) {
  auto in = [n](int r, int c) { return r >= 0 && c >= 0 && r < n && c < n; };
  std::vector<std::uint8_t> dilated(mask.size(), 0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      bool any = false;
      for (int dr = -1; dr <= 1 && !any; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (in(r + dr, c + dc) && mask[static_cast<std::size_t>(r + dr) * n + c + dc]) {
            any = true;
            break;
          }
        }
      }
      dilated[static_cast<std::size_t>(r) * n + c] = any;
    }
  }
  std::vector<std::uint8_t> closed(mask.size(), 0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      bool all = true;
      for (int dr = -1; dr <= 1 && all; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (in(r + dr, c + dc) && !dilated[static_cast<std::size_t>(r + dr) * n + c + dc]) {
            all = false;
            break;
          }
        }
      }
      closed[static_cast<std::size_t>(r) * n + c] = all;
    }
  }
  return closed;
}

}  // namespace

TilePatch MorphologicalCleaner::clean(const TilePatch& patch) {
  const int n = patch.tile_size;
  std::vector<Label> labels(patch.pixels.size());
  std::transform(patch.pixels.begin(), patch.pixels.end(), labels.begin(), label_of);

  // Occupied closing bridges small breaks in walls, whatever fills them.
  // Free closing only claims unknown cells so thin walls between two free
  // areas survive.
  for (const Label target : {Label::Occupied, Label::Free}) {
    std::vector<std::uint8_t> mask(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) mask[i] = labels[i] == target;
    const auto closed = closing(mask, n);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!closed[i]) continue;
      if (target == Label::Occupied || labels[i] == Label::Unknown) labels[i] = target;
    }
  }

  TilePatch out = patch;
  std::transform(labels.begin(), labels.end(), out.pixels.begin(), value_of);
  return out;
}

// ---------------------------------------------------------------- external model

namespace {

using Clock = std::chrono::steady_clock;

struct Header {
  char magic[4];
  std::uint32_t tile_size;
  std::uint32_t patch_id;
};
static_assert(sizeof(Header) == 12);

constexpr char kMagic[4] = {'T', 'T', 'O', 'G'};

}  // namespace

ExternalModel::ExternalModel(std::vector<std::string> command, int tile_size, double timeout_seconds)
    : command_(std::move(command)), tile_size_(tile_size), timeout_seconds_(timeout_seconds) {
  if (command_.empty()) throw ModelError("external model command is empty");
  if (tile_size_ <= 0) throw ConfigError("tile size must be > 0");
  ::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw ModelError(fmt::format("cannot create pipes for model: {}", std::strerror(errno)));
  }
  std::vector<char*> argv;
  for (auto& a : command_) argv.push_back(a.data());
  argv.push_back(nullptr);

  pid_ = ::fork();
  if (pid_ < 0) throw ModelError(fmt::format("cannot fork model process: {}", std::strerror(errno)));
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::dup2(err_pipe[1], STDERR_FILENO);
    ::execvp(argv[0], argv.data());
    const auto msg = fmt::format("cannot execute '{}': {}\n", argv[0], std::strerror(errno));
    [[maybe_unused]] auto w = ::write(STDERR_FILENO, msg.data(), msg.size());
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  child_err_ = err_pipe[0];
  ::fcntl(child_err_, F_SETFL, ::fcntl(child_err_, F_GETFL) | O_NONBLOCK);

  Header hs{};
  std::memcpy(hs.magic, kMagic, 4);
  hs.tile_size = static_cast<std::uint32_t>(tile_size_);
  hs.patch_id = kHandshakeId;
  write_all(&hs, sizeof hs);
  Header reply{};
  read_all(&reply, sizeof reply);
  if (std::memcmp(reply.magic, kMagic, 4) != 0 || reply.patch_id != kHandshakeId) {
    fail("malformed handshake reply");
  }
  if (reply.tile_size != hs.tile_size) {
    throw ShapeMismatchError(fmt::format("model accepts {}x{} tiles but the cleaner is configured for {}x{}",
                                         reply.tile_size, reply.tile_size, tile_size_, tile_size_));
  }
}

ExternalModel::~ExternalModel() {
  if (to_child_ >= 0) ::close(to_child_);
  if (pid_ > 0) {
    int status = 0;
    const auto deadline = Clock::now() + std::chrono::seconds(2);
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (Clock::now() > deadline) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
  if (from_child_ >= 0) ::close(from_child_);
  if (child_err_ >= 0) ::close(child_err_);
}

std::string ExternalModel::drain_stderr() {
  std::string text;
  char buf[4096];
  while (true) {
    const auto n = ::read(child_err_, buf, sizeof buf);
    if (n <= 0) break;
    text.append(buf, static_cast<std::size_t>(n));
    if (text.size() > 16384) text.erase(0, text.size() - 16384);
  }
  return text;
}

void ExternalModel::fail(const std::string& what) {
  // Give a dying process a moment to flush its diagnostics.
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  auto diag = drain_stderr();
  while (!diag.empty() && (diag.back() == '\n' || diag.back() == '\r')) diag.pop_back();
  if (diag.empty()) throw ModelError(fmt::format("model '{}': {}", command_.front(), what));
  throw ModelError(fmt::format("model '{}': {}\n{}", command_.front(), what, diag));
}

void ExternalModel::write_all(const void* data, std::size_t n) {
  const char* p = static_cast<const char*>(data);
  while (n > 0) {
    const auto w = ::write(to_child_, p, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      fail(fmt::format("write failed: {}", std::strerror(errno)));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

void ExternalModel::read_all(void* data, std::size_t n) {
  char* p = static_cast<char*>(data);
  const auto deadline = Clock::now() + std::chrono::duration<double>(timeout_seconds_);
  while (n > 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) fail(fmt::format("no response within {} s", timeout_seconds_));
    pollfd fds{from_child_, POLLIN, 0};
    const int rc = ::poll(&fds, 1, static_cast<int>(left));
    if (rc < 0) {
      if (errno == EINTR) continue;
      fail(fmt::format("poll failed: {}", std::strerror(errno)));
    }
    if (rc == 0) continue;
    const auto r = ::read(from_child_, p, n);
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(fmt::format("read failed: {}", std::strerror(errno)));
    }
    if (r == 0) fail("model process closed its output");
    p += r;
    n -= static_cast<std::size_t>(r);
  }
}

TilePatch ExternalModel::run(const TilePatch& patch) {
  std::lock_guard lock(mutex_);
  if (patch.tile_size != tile_size_) {
    throw ShapeMismatchError(fmt::format("patch is {}x{} but the model takes {}x{}", patch.tile_size,
                                         patch.tile_size, tile_size_, tile_size_));
  }
  const std::size_t n = static_cast<std::size_t>(tile_size_) * tile_size_;
  Header req{};
  std::memcpy(req.magic, kMagic, 4);
  req.tile_size = static_cast<std::uint32_t>(tile_size_);
  req.patch_id = patch.patch_id;
  write_all(&req, sizeof req);
  write_all(patch.pixels.data(), n * sizeof(float));

  Header resp{};
  read_all(&resp, sizeof resp);
  if (std::memcmp(resp.magic, kMagic, 4) != 0) fail("malformed response header");
  if (resp.patch_id != patch.patch_id) {
    fail(fmt::format("response for patch {} while waiting for {}", resp.patch_id, patch.patch_id));
  }
  if (resp.tile_size != req.tile_size) {
    throw ShapeMismatchError(fmt::format("model returned a {}x{} tensor for a {}x{} patch", resp.tile_size,
                                         resp.tile_size, tile_size_, tile_size_));
  }
  TilePatch out = patch;
  read_all(out.pixels.data(), n * sizeof(float));
  std::size_t clamped = 0;
  for (auto& v : out.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      v = std::isnan(v) ? 1.0f : std::clamp(v, 0.0f, 1.0f);
      ++clamped;
    }
  }
  if (clamped > 0) {
    clamped_ += clamped;
    spdlog::warn("model output for patch {} had {} values outside [0,1]; clamped", patch.patch_id, clamped);
  }
  return out;
}

TilePatch run_external_model(const TilePatch& patch, ExternalModel& model) { return model.run(patch); }

ExternalModelCleaner::ExternalModelCleaner(std::vector<std::string> command, const CleanOptions& options)
    : model_(std::move(command), options.tile_size, options.timeout_seconds) {}

// ---------------------------------------------------------------- factory

CleanerKind CleanerKind::parse(std::string_view text) {
  CleanerKind kind;
  if (text == "identity") return kind;
  if (text == "morph" || text == "morphological") {
    kind.type = Type::Morphological;
    return kind;
  }
  if (text.starts_with("model:")) {
    kind.type = Type::ExternalModel;
    std::istringstream in{std::string(text.substr(6))};
    std::string tok;
    while (in >> tok) kind.model.push_back(tok);
    if (kind.model.empty()) throw ConfigError("cleaner 'model:' needs a path");
    return kind;
  }
  throw ConfigError(fmt::format("unknown cleaner '{}' (expected identity, morph or model:<path>)", text));
}

std::string CleanerKind::to_string() const {
  switch (type) {
    case Type::Identity: return "identity";
    case Type::Morphological: return "morph";
    default: {
      std::string s = "model:";
      for (std::size_t i = 0; i < model.size(); ++i) s += (i ? " " : "") + model[i];
      return s;
    }
  }
}

std::filesystem::path onnx_bridge_script() {
  if (const char* env = std::getenv("TTOGM_ONNX_BRIDGE")) return env;
  return TTOGM_ONNX_BRIDGE_DEFAULT;
}

std::unique_ptr<PatchCleaner> make_cleaner(const CleanerKind& kind, const CleanOptions& options) {
  options.validate();
  switch (kind.type) {
    case CleanerKind::Type::Identity: return std::make_unique<IdentityCleaner>();
    case CleanerKind::Type::Morphological: return std::make_unique<MorphologicalCleaner>();
    case CleanerKind::Type::ExternalModel: break;
  }
  const std::filesystem::path model = kind.model.at(0);
  if (!std::filesystem::exists(model)) throw ModelError(fmt::format("model file '{}' does not exist", model.string()));
  std::vector<std::string> command;
  if (model.extension() == ".onnx") {
    const auto bridge = onnx_bridge_script();
    if (!std::filesystem::exists(bridge)) {
      throw ModelError(fmt::format("onnx bridge script '{}' not found", bridge.string()));
    }
    command = {"python3", bridge.string(), model.string()};
    command.insert(command.end(), kind.model.begin() + 1, kind.model.end());
  } else {
    command = kind.model;
  }
  return std::make_unique<ExternalModelCleaner>(std::move(command), options);
}

// ---------------------------------------------------------------- pipeline

DiscreteMap clean_map(const DiscreteMap& map, PatchCleaner& cleaner, const FiltrationConfig& cfg,
                      const CleanOptions& options) {
  options.validate();
  if (map.geometry.cell_count() == 0) throw PreconditionError("clean_map: map is empty");
  auto patches = tile_map(map, options.tile_size, options.overlap);
  std::vector<TilePatch> cleaned(patches.size());

  const int workers = cleaner.concurrent() ? std::min<int>(options.workers, static_cast<int>(patches.size())) : 1;
  auto check = [&](const TilePatch& in, const TilePatch& out) {
    if (out.tile_size != in.tile_size ||
        out.pixels.size() != static_cast<std::size_t>(in.tile_size) * in.tile_size) {
      throw ShapeMismatchError(fmt::format("cleaner '{}' changed the shape of patch {}", cleaner.name(), in.patch_id));
    }
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < patches.size(); ++i) {
      cleaned[i] = cleaner.clean(patches[i]);
      check(patches[i], cleaned[i]);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < patches.size(); i = next++) {
            cleaned[i] = cleaner.clean(patches[i]);
            check(patches[i], cleaned[i]);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return output_filter(stitch_map(cleaned, map.geometry), cfg);
}

}  // namespace ttogm
