#include "visor/image/visual_store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include "visor/common/error.hpp"
#include "visor/common/file.hpp"
#include "visor/image/tiled.hpp"

namespace visor::image {
namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kDigestChars = 32;

// "<32 hex>-<decimal sequence>"; returns the sequence number.
std::optional<std::uint64_t> parse_locator(std::string_view loc) {
  if (loc.size() < kDigestChars + 2 || loc[kDigestChars] != '-') return std::nullopt;
  for (std::size_t i = 0; i < kDigestChars; ++i) {
    char c = loc[i];
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return std::nullopt;
  }
  std::uint64_t seq = 0;
  auto tail = loc.substr(kDigestChars + 1);
  auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), seq);
  if (ec != std::errc{} || ptr != tail.data() + tail.size()) return std::nullopt;
  return seq;
}

std::optional<ImageFormat> sniff_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint8_t head[8] = {};
  in.read(reinterpret_cast<char*>(head), sizeof head);
  return sniff_format(ByteView(head, static_cast<std::size_t>(in.gcount())));
}

}  // namespace

VisualStore::VisualStore(std::filesystem::path root, VisualStoreOptions options)
    : root_(std::move(root)), options_(options) {
  std::filesystem::create_directories(root_);
  std::uint64_t next = 0;
  for (const auto& entry : std::filesystem::directory_iterator(root_))
    if (auto seq = parse_locator(entry.path().filename().string())) next = std::max(next, *seq + 1);
  sequence_ = next;
}

std::filesystem::path VisualStore::path_for(std::string_view locator) const {
  if (!parse_locator(locator)) throw Error(Errc::unknown_locator, "malformed blob locator '" + std::string(locator) + "'");
  return root_ / std::string(locator);
}

bool VisualStore::contains(std::string_view locator) const {
  return parse_locator(locator) && std::filesystem::exists(root_ / std::string(locator));
}

ImageRecord VisualStore::store_image(const Image& img, ImageFormat format, std::optional<std::uint16_t> tile_size) {
  validate(img);
  Bytes encoded = encode(img, format, tile_size.value_or(kDefaultTileSize));
  std::string digest = sha256_hex(encoded).substr(0, kDigestChars);
  std::string locator;
  do {
    locator = digest + "-" + std::to_string(sequence_.fetch_add(1));
  } while (std::filesystem::exists(root_ / locator));
  write_file_atomic(root_ / locator, encoded, options_.sync);
  return {locator, format, img.width, img.height, img.channels, 8};
}

Image VisualStore::load(std::string_view locator) const {
  auto path = path_for(locator);
  if (!std::filesystem::exists(path)) throw Error(Errc::unknown_locator, "no blob '" + std::string(locator) + "'");
  return decode(read_file(path));
}

ImageRecord VisualStore::describe(std::string_view locator) const {
  auto path = path_for(locator);
  auto fmt = std::filesystem::exists(path) ? sniff_file(path) : std::nullopt;
  if (!fmt) throw Error(Errc::unknown_locator, "no blob '" + std::string(locator) + "'");
  if (*fmt == ImageFormat::tiled) {
    auto h = TiledReader::open(path).header();
    return {std::string(locator), *fmt, h.width, h.height, h.channels, h.bit_depth};
  }
  Image img = decode(read_file(path));
  return {std::string(locator), *fmt, img.width, img.height, img.channels, 8};
}

void VisualStore::remove(std::string_view locator) {
  std::error_code ec;
  std::filesystem::remove(path_for(locator), ec);
}

Bytes VisualStore::retrieve_image(std::string_view locator, std::span<const TransformOp> ops, ImageFormat output,
                                  RetrievalTiming* timing) const {
  auto t0 = Clock::now();
  auto path = path_for(locator);
  auto stored = std::filesystem::exists(path) ? sniff_file(path) : std::nullopt;
  if (!stored) throw Error(Errc::unknown_locator, "no blob '" + std::string(locator) + "'");

  if (ops.empty() && output == *stored) {
    Bytes raw = read_file(path);
    if (timing) timing->retrieval += Clock::now() - t0;
    return raw;
  }

  Image img;
  std::span<const TransformOp> rest = ops;
  if (*stored == ImageFormat::tiled && !ops.empty() && std::holds_alternative<Crop>(ops.front())) {
    auto reader = TiledReader::open(path);
    std::uint32_t w = reader.header().width, h = reader.header().height;
    for (const auto& op : ops) std::tie(w, h) = check_op(op, w, h);
    const auto& c = std::get<Crop>(ops.front());
    img = reader.read_region(static_cast<std::uint32_t>(c.x), static_cast<std::uint32_t>(c.y),
                             static_cast<std::uint32_t>(c.width), static_cast<std::uint32_t>(c.height));
    tile_reads_ += reader.tiles_read();
    rest = ops.subspan(1);
  } else {
    Bytes raw = read_file(path);
    if (*stored == ImageFormat::tiled) {
      auto reader = TiledReader::from_bytes(raw);
      img = reader.read_all();
      tile_reads_ += reader.tiles_read();
    } else {
      img = decode(raw);
    }
  }
  auto t1 = Clock::now();
  img = apply_ops(std::move(img), rest);
  auto t2 = Clock::now();
  Bytes out = encode(img, output);
  auto t3 = Clock::now();
  if (timing) {
    timing->retrieval += (t1 - t0) + (t3 - t2);
    timing->preprocess += t2 - t1;
  }
  return out;
}

}  // namespace visor::image
