#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace rahand {

// 8-bit raster, interleaved channels, row-major, origin top-left.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

// PNG codec. Channels 1 (gray) and 3 (RGB) are supported.
Image ReadPng(const std::filesystem::path& path);
void WritePng(const std::filesystem::path& path, const Image& image);
// Reads only the header.
ImageSize PngSize(const std::filesystem::path& path);

}  // namespace rahand
