#pragma once

// VDMS wire frame (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "VDMS"
//   4       1     version (1)
//   5       1     flags (bit 0: request per-phase timing)
//   6       4     json_length
//   10      4     blob_count
//   14      ...   json payload (json_length bytes, UTF-8)
//   ...           blob_count x (length u32, bytes)

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "visor/common/bytes.hpp"

namespace visor::net {

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 14;
inline constexpr std::uint8_t kFlagTiming = 0x01;
inline constexpr std::uint64_t kDefaultMaxMessage = 256ull << 20;

struct Message {
  std::uint8_t flags = 0;
  std::string json;
  std::vector<Bytes> blobs;
  bool operator==(const Message&) const = default;
};

std::uint64_t encoded_size(const Message& m);
Bytes encode(const Message& m);
// Decodes exactly one complete frame; throws Errc::protocol_error.
Message decode(ByteView frame);

enum class ReadStatus {
  ok,
  eof,        // clean end of stream before a frame started
  oversize,   // frame exceeded the limit; its bytes were consumed and dropped
  bad_frame,  // bad magic or version, or the stream ended mid-frame
};

struct ReadResult {
  ReadStatus status = ReadStatus::eof;
  Message message;
  std::uint64_t bytes = 0;  // frame bytes consumed from the stream
  std::string error;
};

// Pulls frames off a byte stream. `read` returns the number of bytes placed
// in the buffer, 0 at end of stream.
class FrameReader {
 public:
  using ReadFn = std::function<std::size_t(std::uint8_t*, std::size_t)>;

  FrameReader(ReadFn read, std::uint64_t max_message = kDefaultMaxMessage);
  ReadResult next();

 private:
  bool fill(std::uint8_t* dst, std::size_t n, std::uint64_t& counted);
  bool skip(std::uint64_t n, std::uint64_t& counted);

  ReadFn read_;
  std::uint64_t max_;
};

}  // namespace visor::net
