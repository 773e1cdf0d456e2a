#pragma once

// VDTI: array-style lossless image container.
//
//   offset  size  field
//   0       4     magic "VDTI"
//   4       2     version (1)
//   6       4     width
//   10      4     height
//   14      1     channels (1 or 3)
//   15      1     bit depth (8)
//   16      2     tile size (power of two)
//   18      13*N  tile directory, row-major: offset u64, length u32, compressed u8
//   ...           tile payloads
//
// All integers little-endian; offsets are absolute. A tile payload holds the
// in-bounds pixels of that tile row-major (edge tiles are narrower/shorter),
// deflated when the compressed flag is 1.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>

#include "visor/common/bytes.hpp"
#include "visor/image/image.hpp"

namespace visor::image {

inline constexpr std::uint16_t kTiledVersion = 1;
inline constexpr std::size_t kTiledHeaderSize = 18;
inline constexpr std::size_t kTileEntrySize = 13;

struct TiledHeader {
  std::uint16_t version = kTiledVersion;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint8_t channels = 1;
  std::uint8_t bit_depth = 8;
  std::uint16_t tile_size = 0;

  std::uint32_t tiles_x() const { return (width + tile_size - 1) / tile_size; }
  std::uint32_t tiles_y() const { return (height + tile_size - 1) / tile_size; }
  std::size_t tile_count() const { return static_cast<std::size_t>(tiles_x()) * tiles_y(); }
};

struct TileEntry {
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
  bool compressed = false;
};

bool is_valid_tile_size(std::uint32_t tile_size) noexcept;

Bytes encode_tiled(const Image& img, std::uint16_t tile_size);

// Random-access reader. Counts every tile payload it fetches so callers can
// verify that region reads stay local.
class TiledReader {
 public:
  static TiledReader from_bytes(ByteView data);
  static TiledReader open(const std::filesystem::path& path);

  TiledReader(TiledReader&&) noexcept;
  TiledReader& operator=(TiledReader&&) noexcept;
  ~TiledReader();

  const TiledHeader& header() const noexcept { return header_; }
  const std::vector<TileEntry>& directory() const noexcept { return directory_; }

  Image read_all();
  // Throws Errc::out_of_bounds if the rectangle leaves the image.
  Image read_region(std::uint32_t x, std::uint32_t y, std::uint32_t width, std::uint32_t height);

  std::uint64_t tiles_read() const noexcept { return tiles_read_; }

  class Source;

 private:
  TiledReader(std::unique_ptr<Source> source);
  void read_tile(std::uint32_t tx, std::uint32_t ty, Image& out, std::uint32_t ox, std::uint32_t oy,
                 std::uint32_t rx, std::uint32_t ry, std::uint32_t rw, std::uint32_t rh);

  std::unique_ptr<Source> source_;
  TiledHeader header_;
  std::vector<TileEntry> directory_;
  std::uint64_t tiles_read_ = 0;
};

Image decode_tiled(ByteView data);

}  // namespace visor::image
