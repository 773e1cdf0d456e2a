#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "visor/common/bytes.hpp"
#include "visor/image/codec.hpp"
#include "visor/image/image.hpp"
#include "visor/image/ops.hpp"

namespace visor::image {

struct ImageRecord {
  std::string locator;
  ImageFormat format = ImageFormat::tiled;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint8_t channels = 1;
  std::uint8_t bit_depth = 8;
};

// Where retrieve_image spent its time: reading/decoding/encoding versus
// applying transforms.
struct RetrievalTiming {
  std::chrono::nanoseconds retrieval{0};
  std::chrono::nanoseconds preprocess{0};
};

struct VisualStoreOptions {
  bool sync = true;  // fsync each blob before store_image returns
};

// Immutable blob store: one file per image under `root`, named by locator
// "<32 hex digest chars>-<sequence>". Safe for concurrent use.
class VisualStore {
 public:
  explicit VisualStore(std::filesystem::path root, VisualStoreOptions options = {});

  ImageRecord store_image(const Image& img, ImageFormat format, std::optional<std::uint16_t> tile_size = {});

  // Applies `ops` in order to the stored image and encodes the result.
  // With no ops and `output` equal to the stored format the stored bytes are
  // returned unchanged. A leading crop on a tiled blob reads only the tiles
  // it intersects.
  Bytes retrieve_image(std::string_view locator, std::span<const TransformOp> ops, ImageFormat output,
                       RetrievalTiming* timing = nullptr) const;

  Image load(std::string_view locator) const;
  ImageRecord describe(std::string_view locator) const;
  bool contains(std::string_view locator) const;
  // Deletes a blob; only used to roll back blobs written by a failed request.
  void remove(std::string_view locator);

  // Tile payloads fetched by retrieve_image since construction.
  std::uint64_t tile_reads() const noexcept { return tile_reads_.load(); }
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path path_for(std::string_view locator) const;

  std::filesystem::path root_;
  VisualStoreOptions options_;
  std::atomic<std::uint64_t> sequence_{0};
  mutable std::atomic<std::uint64_t> tile_reads_{0};
};

}  // namespace visor::image
