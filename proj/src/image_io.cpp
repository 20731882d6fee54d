#include "ttogm/image_io.hpp"

#include <cctype>
#include <cstring>
#include <fstream>
#include <string>

#include <fmt/format.h>
#include <png.h>

#include "ttogm/error.hpp"

namespace ttogm {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int c = 0;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw FormatError(fmt::format("{}: truncated PGM header", path.string()));
  return tok;
}

int pgm_int(std::istream& in, const std::filesystem::path& path, const char* what) {
  const auto tok = pgm_token(in, path);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError(fmt::format("{}: bad PGM {} '{}'", path.string(), what, tok));
  }
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open image '{}'", path.string()));
  const auto magic = pgm_token(in, path);
  if (magic != "P5" && magic != "P2") {
    throw FormatError(fmt::format("{}: not a single-channel PGM (magic '{}')", path.string(), magic));
  }
  GrayImage img;
  img.width = pgm_int(in, path, "width");
  img.height = pgm_int(in, path, "height");
  const int maxval = pgm_int(in, path, "maxval");
  if (img.width <= 0 || img.height <= 0) throw FormatError(fmt::format("{}: empty PGM", path.string()));
  if (maxval <= 0 || maxval > 255) throw FormatError(fmt::format("{}: unsupported PGM maxval {}", path.string(), maxval));
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(n);
  if (magic == "P5") {
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw FormatError(fmt::format("{}: PGM body has {} bytes, expected {}", path.string(), in.gcount(), n));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const int v = pgm_int(in, path, "pixel");
      if (v > maxval) throw FormatError(fmt::format("{}: pixel {} exceeds maxval", path.string(), v));
      img.pixels[i] = static_cast<std::uint8_t>(v);
    }
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  }
  return img;
}

GrayImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw FormatError(fmt::format("{}: cannot decode PNG: {}", path.string(), image.message));
  }
  if (image.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&image);
    throw FormatError(fmt::format("{}: PNG is not single-channel", path.string()));
  }
  image.format = PNG_FORMAT_GRAY;
  GrayImage img;
  img.width = static_cast<int>(image.width);
  img.height = static_cast<int>(image.height);
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw FormatError(fmt::format("{}: cannot decode PNG: {}", path.string(), image.message));
  }
  return img;
}

}  // namespace

GrayImage read_gray_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError(fmt::format("image '{}' does not exist", path.string()));
  if (path.extension() == ".png") return read_png(path);
  return read_pgm(path);
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace ttogm
