#include "visor/image/tiled.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <string>

#include "visor/common/error.hpp"

namespace visor::image {

bool is_valid_tile_size(std::uint32_t tile_size) noexcept {
  return tile_size >= 1 && tile_size <= 32768 && (tile_size & (tile_size - 1)) == 0;
}

namespace {

constexpr int kTileDeflateLevel = Z_BEST_SPEED;
constexpr std::size_t kMaxPixelBytes = std::size_t{1} << 31;

struct TileRect {
  std::uint32_t x, y, w, h;
};

TileRect tile_rect(const TiledHeader& h, std::uint32_t tx, std::uint32_t ty) {
  std::uint32_t x = tx * h.tile_size, y = ty * h.tile_size;
  return {x, y, std::min<std::uint32_t>(h.tile_size, h.width - x), std::min<std::uint32_t>(h.tile_size, h.height - y)};
}

[[noreturn]] void corrupt(const std::string& what) { throw Error(Errc::corrupt_data, "VDTI: " + what); }

}  // namespace

Bytes encode_tiled(const Image& img, std::uint16_t tile_size) {
  validate(img);
  if (!is_valid_tile_size(tile_size))
    throw Error(Errc::invalid_op_params, "tile size must be a power of two, got " + std::to_string(tile_size));
  TiledHeader h;
  h.width = img.width;
  h.height = img.height;
  h.channels = img.channels;
  h.tile_size = tile_size;

  ByteWriter w;
  w.raw(std::string_view("VDTI"));
  w.u16(h.version);
  w.u32(h.width);
  w.u32(h.height);
  w.u8(h.channels);
  w.u8(h.bit_depth);
  w.u16(h.tile_size);
  const std::size_t dir_pos = w.size();
  std::vector<TileEntry> dir(h.tile_count());
  for (std::size_t i = 0; i < dir.size(); ++i) {
    w.u64(0);
    w.u32(0);
    w.u8(0);
  }

  Bytes raw, packed;
  for (std::uint32_t ty = 0; ty < h.tiles_y(); ++ty) {
    for (std::uint32_t tx = 0; tx < h.tiles_x(); ++tx) {
      auto r = tile_rect(h, tx, ty);
      const std::size_t row = static_cast<std::size_t>(r.w) * h.channels;
      raw.resize(row * r.h);
      for (std::uint32_t y = 0; y < r.h; ++y)
        std::memcpy(raw.data() + y * row,
                    img.pixels.data() + static_cast<std::size_t>(r.y + y) * img.row_bytes() +
                        static_cast<std::size_t>(r.x) * h.channels,
                    row);
      uLongf bound = compressBound(static_cast<uLong>(raw.size()));
      packed.resize(bound);
      int rc = compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), kTileDeflateLevel);
      auto& entry = dir[static_cast<std::size_t>(ty) * h.tiles_x() + tx];
      entry.offset = w.size();
      if (rc == Z_OK && bound < raw.size()) {
        entry.length = static_cast<std::uint32_t>(bound);
        entry.compressed = true;
        w.raw(ByteView(packed.data(), bound));
      } else {
        entry.length = static_cast<std::uint32_t>(raw.size());
        entry.compressed = false;
        w.raw(raw);
      }
    }
  }

  Bytes out = w.take();
  ByteWriter patch;
  for (const auto& e : dir) {
    patch.u64(e.offset);
    patch.u32(e.length);
    patch.u8(e.compressed ? 1 : 0);
  }
  std::memcpy(out.data() + dir_pos, patch.bytes().data(), patch.size());
  return out;
}

// ---------------------------------------------------------------------------

class TiledReader::Source {
 public:
  virtual ~Source() = default;
  virtual std::uint64_t size() const = 0;
  virtual Bytes read(std::uint64_t offset, std::size_t length) const = 0;
};

namespace {

class MemorySource final : public TiledReader::Source {
 public:
  explicit MemorySource(ByteView data) : data_(data) {}
  std::uint64_t size() const override { return data_.size(); }
  Bytes read(std::uint64_t offset, std::size_t length) const override {
    auto v = data_.subspan(offset, length);
    return Bytes(v.begin(), v.end());
  }

 private:
  ByteView data_;
};

class FileSource final : public TiledReader::Source {
 public:
  explicit FileSource(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) throw Error(Errc::io_error, "cannot open " + path.string() + ": " + std::strerror(errno));
    off_t end = ::lseek(fd_, 0, SEEK_END);
    if (end < 0) {
      ::close(fd_);
      throw Error(Errc::io_error, "cannot stat " + path.string());
    }
    size_ = static_cast<std::uint64_t>(end);
  }
  ~FileSource() override { ::close(fd_); }

  std::uint64_t size() const override { return size_; }
  Bytes read(std::uint64_t offset, std::size_t length) const override {
    Bytes out(length);
    std::size_t done = 0;
    while (done < length) {
      ssize_t n = ::pread(fd_, out.data() + done, length - done, static_cast<off_t>(offset + done));
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(Errc::io_error, "short read from tiled blob");
      done += static_cast<std::size_t>(n);
    }
    return out;
  }

 private:
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

}  // namespace

TiledReader::TiledReader(std::unique_ptr<Source> source) : source_(std::move(source)) {
  const std::uint64_t total = source_->size();
  if (total < kTiledHeaderSize) corrupt("truncated header");
  Bytes head = source_->read(0, kTiledHeaderSize);
  if (std::memcmp(head.data(), "VDTI", 4) != 0) corrupt("bad magic");
  ByteReader r(head);
  r.raw(4);
  header_.version = r.u16();
  header_.width = r.u32();
  header_.height = r.u32();
  header_.channels = r.u8();
  header_.bit_depth = r.u8();
  header_.tile_size = r.u16();
  if (header_.version != kTiledVersion) corrupt("unsupported version " + std::to_string(header_.version));
  if (header_.width < 1 || header_.height < 1) corrupt("empty image");
  if (header_.channels != 1 && header_.channels != 3) corrupt("bad channel count");
  if (header_.bit_depth != 8) corrupt("unsupported bit depth");
  if (!is_valid_tile_size(header_.tile_size)) corrupt("bad tile size");
  if (static_cast<std::uint64_t>(header_.width) * header_.height * header_.channels > kMaxPixelBytes)
    corrupt("image too large");

  const std::size_t n = header_.tile_count();
  const std::uint64_t dir_bytes = static_cast<std::uint64_t>(n) * kTileEntrySize;
  if (total - kTiledHeaderSize < dir_bytes) corrupt("truncated tile directory");
  Bytes dir = source_->read(kTiledHeaderSize, static_cast<std::size_t>(dir_bytes));
  ByteReader d(dir);
  directory_.resize(n);
  for (auto& e : directory_) {
    e.offset = d.u64();
    e.length = d.u32();
    auto flag = d.u8();
    if (flag > 1) corrupt("bad compression flag");
    e.compressed = flag == 1;
    if (e.offset < kTiledHeaderSize + dir_bytes || e.offset > total || total - e.offset < e.length)
      corrupt("tile payload outside file");
  }
}

TiledReader::TiledReader(TiledReader&&) noexcept = default;
TiledReader& TiledReader::operator=(TiledReader&&) noexcept = default;
TiledReader::~TiledReader() = default;

TiledReader TiledReader::from_bytes(ByteView data) { return TiledReader(std::make_unique<MemorySource>(data)); }

TiledReader TiledReader::open(const std::filesystem::path& path) {
  return TiledReader(std::make_unique<FileSource>(path));
}

void TiledReader::read_tile(std::uint32_t tx, std::uint32_t ty, Image& out, std::uint32_t ox, std::uint32_t oy,
                            std::uint32_t rx, std::uint32_t ry, std::uint32_t rw, std::uint32_t rh) {
  const auto& e = directory_[static_cast<std::size_t>(ty) * header_.tiles_x() + tx];
  auto rect = tile_rect(header_, tx, ty);
  const std::size_t row = static_cast<std::size_t>(rect.w) * header_.channels;
  const std::size_t expect = row * rect.h;
  Bytes payload = source_->read(e.offset, e.length);
  ++tiles_read_;
  Bytes raw;
  if (e.compressed) {
    raw.resize(expect);
    uLongf got = static_cast<uLongf>(expect);
    if (uncompress(raw.data(), &got, payload.data(), static_cast<uLong>(payload.size())) != Z_OK || got != expect)
      corrupt("tile inflate failed");
  } else {
    if (payload.size() != expect) corrupt("raw tile has wrong length");
    raw = std::move(payload);
  }
  // Copy rows [ry, ry+rh) x [rx, rx+rw) of the tile (tile-local) to (ox, oy).
  const std::size_t span = static_cast<std::size_t>(rw) * header_.channels;
  for (std::uint32_t y = 0; y < rh; ++y)
    std::memcpy(out.pixels.data() + static_cast<std::size_t>(oy + y) * out.row_bytes() +
                    static_cast<std::size_t>(ox) * header_.channels,
                raw.data() + static_cast<std::size_t>(ry + y) * row + static_cast<std::size_t>(rx) * header_.channels,
                span);
}

Image TiledReader::read_region(std::uint32_t x, std::uint32_t y, std::uint32_t width, std::uint32_t height) {
  if (width < 1 || height < 1 || x >= header_.width || y >= header_.height || width > header_.width - x ||
      height > header_.height - y)
    throw Error(Errc::out_of_bounds, "region outside " + std::to_string(header_.width) + "x" +
                                         std::to_string(header_.height) + " image");
  Image out = Image::filled(width, height, header_.channels);
  const std::uint32_t ts = header_.tile_size;
  for (std::uint32_t ty = y / ts; ty <= (y + height - 1) / ts; ++ty) {
    for (std::uint32_t tx = x / ts; tx <= (x + width - 1) / ts; ++tx) {
      auto rect = tile_rect(header_, tx, ty);
      std::uint32_t x0 = std::max(x, rect.x), x1 = std::min(x + width, rect.x + rect.w);
      std::uint32_t y0 = std::max(y, rect.y), y1 = std::min(y + height, rect.y + rect.h);
      read_tile(tx, ty, out, x0 - x, y0 - y, x0 - rect.x, y0 - rect.y, x1 - x0, y1 - y0);
    }
  }
  return out;
}

Image TiledReader::read_all() { return read_region(0, 0, header_.width, header_.height); }

Image decode_tiled(ByteView data) { return TiledReader::from_bytes(data).read_all(); }

}  // namespace visor::image
