#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "visor/common/bytes.hpp"
#include "visor/image/image.hpp"

namespace visor::image {

enum class ImageFormat { png, jpeg, tiled };

inline constexpr std::uint16_t kDefaultTileSize = 64;
inline constexpr int kJpegQuality = 90;

std::optional<ImageFormat> parse_format(std::string_view name) noexcept;
std::string_view format_name(ImageFormat f) noexcept;
// Identifies a blob by its magic bytes.
std::optional<ImageFormat> sniff_format(ByteView data) noexcept;

Bytes encode_png(const Image& img);
Image decode_png(ByteView data);
Bytes encode_jpeg(const Image& img, int quality = kJpegQuality);
Image decode_jpeg(ByteView data);

Bytes encode(const Image& img, ImageFormat format, std::uint16_t tile_size = kDefaultTileSize);
// Decodes any supported format; throws Errc::decode_error.
Image decode(ByteView data);

}  // namespace visor::image
