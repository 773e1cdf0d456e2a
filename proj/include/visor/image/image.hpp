#pragma once

#include <cstdint>
#include <vector>

namespace visor::image {

// 8-bit interleaved raster, row-major, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint8_t channels = 1;
  std::vector<std::uint8_t> pixels;

  static Image filled(std::uint32_t width, std::uint32_t height, std::uint8_t channels, std::uint8_t value = 0);

  std::size_t row_bytes() const { return static_cast<std::size_t>(width) * channels; }
  std::size_t byte_size() const { return row_bytes() * height; }

  std::uint8_t& at(std::uint32_t x, std::uint32_t y, std::uint8_t c = 0) {
    return pixels[static_cast<std::size_t>(y) * row_bytes() + static_cast<std::size_t>(x) * channels + c];
  }
  std::uint8_t at(std::uint32_t x, std::uint32_t y, std::uint8_t c = 0) const {
    return pixels[static_cast<std::size_t>(y) * row_bytes() + static_cast<std::size_t>(x) * channels + c];
  }

  bool operator==(const Image&) const = default;
};

// Throws Errc::dimension_mismatch unless width, height >= 1, channels is 1
// or 3, and the buffer holds exactly width*height*channels bytes.
void validate(const Image& img);

}  // namespace visor::image
