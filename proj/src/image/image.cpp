#include "visor/image/image.hpp"

#include <string>

#include "visor/common/error.hpp"

namespace visor::image {

Image Image::filled(std::uint32_t width, std::uint32_t height, std::uint8_t channels, std::uint8_t value) {
  Image img;
  img.width = width;
  img.height = height;
  img.channels = channels;
  img.pixels.assign(img.byte_size(), value);
  return img;
}

void validate(const Image& img) {
  if (img.width < 1 || img.height < 1)
    throw Error(Errc::dimension_mismatch, "image dimensions must be at least 1x1");
  if (img.channels != 1 && img.channels != 3)
    throw Error(Errc::dimension_mismatch, "unsupported channel count " + std::to_string(img.channels));
  if (img.pixels.size() != img.byte_size())
    throw Error(Errc::dimension_mismatch, "pixel buffer holds " + std::to_string(img.pixels.size()) +
                                              " bytes, expected " + std::to_string(img.byte_size()));
}

}  // namespace visor::image
