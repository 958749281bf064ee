#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace bioanon {

/// 8-bit RGB raster, rows top to bottom, channels interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  static constexpr int kChannels = 3;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * kChannels, fill) {}

  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
  }
  std::uint8_t& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[index(x, y, c)]; }

  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

using FaceImage = Image;

constexpr int kCanonicalFaceSize = 224;

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

inline std::uint8_t clamp_to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

}  // namespace bioanon
