#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vlu {

/// Row-major interleaved 8-bit RGB.
struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RasterImage() = default;
  RasterImage(int w, int h, std::uint8_t fill = 0);

  static constexpr int channels = 3;

  bool valid() const {
    return width >= 1 && height >= 1 && pixels.size() == static_cast<std::size_t>(width) * height * channels;
  }
  std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * channels; }
  std::uint8_t& at(int x, int y, int c) { return pixels[offset(x, y) + c]; }
  std::uint8_t at(int x, int y, int c) const { return pixels[offset(x, y) + c]; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Decodes PNG or JPEG to RGB; alpha is composited over white and grayscale replicated.
RasterImage decode_image(std::string_view bytes);
RasterImage load_image(const std::filesystem::path& path);
std::string encode_png(const RasterImage& img);
void save_png(const RasterImage& img, const std::filesystem::path& path);

}  // namespace vlu
