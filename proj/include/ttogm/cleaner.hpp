#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "ttogm/gridmap.hpp"

namespace ttogm {

/// Square window of a map in cleaner value space ([0, 1], code / 255).
/// Cells beyond the valid extent are padding and hold 1.0 (unknown).
struct TilePatch {
  int tile_size = 0;
  int row = 0;  // offset of the tile's top-left pixel in the map, image order
  int col = 0;
  int valid_rows = 0;
  int valid_cols = 0;
  std::uint32_t patch_id = 0;
  std::vector<float> pixels;  // tile_size * tile_size, row-major

  float at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * tile_size + c]; }
  float& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * tile_size + c]; }
};

struct CleanOptions {
  int tile_size = 256;
  int overlap = 32;
  int workers = 1;
  double timeout_seconds = 10.0;  // per patch, external models only

  void validate() const;
};

/// Per-patch map cleaner.
class PatchCleaner {
 public:
  virtual ~PatchCleaner() = default;
  virtual std::string name() const = 0;
  virtual TilePatch clean(const TilePatch& patch) = 0;
  /// Whether clean() may run concurrently on distinct patches.
  virtual bool concurrent() const { return true; }
};

class IdentityCleaner final : public PatchCleaner {
 public:
  std::string name() const override { return "identity"; }
  TilePatch clean(const TilePatch& patch) override { return patch; }
};

/// 3x3 closing of the occupied class, then of the free class. The occupied
/// closing may overwrite any cell; the free closing only fills unknown cells.
/// Cells outside the patch never count as members when dilating and always
/// count when eroding, so the patch border alone never changes a cell.
class MorphologicalCleaner final : public PatchCleaner {
 public:
  std::string name() const override { return "morph"; }
  TilePatch clean(const TilePatch& patch) override;
};

/// Client for a long-lived model process speaking the tile protocol over its
/// standard input and output. All integers and floats are little-endian.
///
///   request  = "TTOG" | u32 tile_size | u32 patch_id | tile_size^2 x f32
///   response = same layout, echoing tile_size and patch_id
///
/// The handshake is a header-only exchange with patch_id 0xFFFFFFFF; the
/// model answers with the tile size it accepts. Calls are serialized.
class ExternalModel {
 public:
  static constexpr std::uint32_t kHandshakeId = 0xFFFFFFFFu;

  /// `command[0]` is the executable. Launches it and performs the handshake.
  ExternalModel(std::vector<std::string> command, int tile_size, double timeout_seconds);
  ~ExternalModel();
  ExternalModel(const ExternalModel&) = delete;
  ExternalModel& operator=(const ExternalModel&) = delete;

  int tile_size() const { return tile_size_; }
  std::size_t clamped_values() const { return clamped_; }

  /// Sends one patch and returns the model's answer, with values clamped into
  /// [0, 1].
  TilePatch run(const TilePatch& patch);

 private:
  void write_all(const void* data, std::size_t n);
  void read_all(void* data, std::size_t n);
  std::string drain_stderr();
  [[noreturn]] void fail(const std::string& what);

  std::vector<std::string> command_;
  int tile_size_;
  double timeout_seconds_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  int child_err_ = -1;
  std::size_t clamped_ = 0;
  std::mutex mutex_;
};

TilePatch run_external_model(const TilePatch& patch, ExternalModel& model);

class ExternalModelCleaner final : public PatchCleaner {
 public:
  ExternalModelCleaner(std::vector<std::string> command, const CleanOptions& options);
  std::string name() const override { return "model"; }
  TilePatch clean(const TilePatch& patch) override { return model_.run(patch); }
  bool concurrent() const override { return false; }
  ExternalModel& model() { return model_; }

 private:
  ExternalModel model_;
};

struct CleanerKind {
  enum class Type { Identity, Morphological, ExternalModel };
  Type type = Type::Identity;
  /// Model file (.onnx) or executable, followed by optional arguments.
  std::vector<std::string> model;

  /// Parses `identity`, `morph` or `model:<path> [args...]`.
  static CleanerKind parse(std::string_view text);
  std::string to_string() const;
};

/// Builds the cleaner. External models must exist on disk; `.onnx` files are
/// served by the bundled onnxruntime bridge script.
std::unique_ptr<PatchCleaner> make_cleaner(const CleanerKind& kind, const CleanOptions& options);

/// Tiles on a lattice with stride tile_size - overlap; edge tiles padded with
/// unknown.
std::vector<TilePatch> tile_map(const DiscreteMap& map, int tile_size, int overlap);

/// Averages overlapping pixels and drops padding. Every map cell must be
/// covered by some patch.
LikelihoodMap stitch_map(const std::vector<TilePatch>& patches, const MapGeometry& geometry);

/// tile_map -> per-patch cleaner -> stitch_map -> output_filter.
DiscreteMap clean_map(const DiscreteMap& map, PatchCleaner& cleaner, const FiltrationConfig& cfg,
                      const CleanOptions& options);

/// Path of the onnxruntime bridge script (env TTOGM_ONNX_BRIDGE overrides).
std::filesystem::path onnx_bridge_script();

}  // namespace ttogm
