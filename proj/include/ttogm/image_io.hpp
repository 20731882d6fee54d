#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ttogm {

/// 8-bit single-channel image, row 0 at the top.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

/// Reads PGM (P2/P5, maxval <= 255) or single-channel PNG.
GrayImage read_gray_image(const std::filesystem::path& path);

/// Writes a binary (P5) PGM with maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

}  // namespace ttogm
