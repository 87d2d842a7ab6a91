#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace relvid {

/// 8-bit RGB image, row-major, interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  bool empty() const noexcept { return height <= 0 || width <= 0; }
  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Single-channel float image used by the descriptor code.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// ITU-R BT.601 luma, scaled to [0, 1].
GrayImage to_gray(const Image& img);

/// Bilinear resize (pixel-center aligned). Returns a copy when the size already matches.
Image resize_bilinear(const Image& img, int height, int width);

Image crop(const Image& img, int y0, int x0, int height, int width);

/// Rotates a square image counter-clockwise by a multiple of 90 degrees.
Image rotate_square(const Image& img, int degrees);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace relvid
