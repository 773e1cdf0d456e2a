#include "visor/net/wire.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

#include "visor/common/error.hpp"

namespace visor::net {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(Errc::protocol_error, msg); }

std::uint32_t le32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

// Returns an error string for a header that cannot start a frame.
std::string header_error(const std::uint8_t* h) {
  if (std::memcmp(h, "VDMS", 4) != 0) return "bad magic";
  if (h[4] != kWireVersion)
    return "unsupported protocol version " + std::to_string(h[4]) + " (server speaks version " +
           std::to_string(kWireVersion) + ")";
  return {};
}

}  // namespace

std::uint64_t encoded_size(const Message& m) {
  std::uint64_t n = kHeaderSize + m.json.size();
  for (const auto& b : m.blobs) n += 4 + b.size();
  return n;
}

Bytes encode(const Message& m) {
  constexpr auto u32max = std::numeric_limits<std::uint32_t>::max();
  if (m.json.size() > u32max || m.blobs.size() > u32max) bad("message too large to frame");
  ByteWriter w;
  w.reserve(static_cast<std::size_t>(encoded_size(m)));
  w.raw(std::string_view("VDMS"));
  w.u8(kWireVersion);
  w.u8(m.flags);
  w.u32(static_cast<std::uint32_t>(m.json.size()));
  w.u32(static_cast<std::uint32_t>(m.blobs.size()));
  w.raw(m.json);
  for (const auto& b : m.blobs) {
    if (b.size() > u32max) bad("blob too large to frame");
    w.u32(static_cast<std::uint32_t>(b.size()));
    w.raw(b);
  }
  return w.take();
}

Message decode(ByteView frame) {
  if (frame.size() < kHeaderSize) bad("truncated header");
  if (auto e = header_error(frame.data()); !e.empty()) bad(e);
  Message m;
  m.flags = frame[5];
  const std::uint32_t json_length = le32(frame.data() + 6), blob_count = le32(frame.data() + 10);
  std::size_t pos = kHeaderSize;
  if (frame.size() - pos < json_length) bad("truncated json payload");
  m.json.assign(reinterpret_cast<const char*>(frame.data() + pos), json_length);
  pos += json_length;
  for (std::uint32_t i = 0; i < blob_count; ++i) {
    if (frame.size() - pos < 4) bad("truncated blob length");
    std::uint32_t len = le32(frame.data() + pos);
    pos += 4;
    if (frame.size() - pos < len) bad("truncated blob");
    m.blobs.emplace_back(frame.begin() + static_cast<std::ptrdiff_t>(pos),
                         frame.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  if (pos != frame.size()) bad("trailing bytes after frame");
  return m;
}

FrameReader::FrameReader(ReadFn read, std::uint64_t max_message) : read_(std::move(read)), max_(max_message) {}

bool FrameReader::fill(std::uint8_t* dst, std::size_t n, std::uint64_t& counted) {
  while (n > 0) {
    std::size_t got = read_(dst, n);
    if (got == 0) return false;
    dst += got;
    n -= got;
    counted += got;
  }
  return true;
}

bool FrameReader::skip(std::uint64_t n, std::uint64_t& counted) {
  std::uint8_t sink[16384];
  while (n > 0) {
    auto chunk = static_cast<std::size_t>(std::min<std::uint64_t>(n, sizeof sink));
    if (!fill(sink, chunk, counted)) return false;
    n -= chunk;
  }
  return true;
}

ReadResult FrameReader::next() {
  ReadResult r;
  std::uint8_t h[kHeaderSize];
  std::size_t got = read_(h, kHeaderSize);
  if (got == 0) return r;
  r.bytes = got;
  auto truncated = [&] {
    r.status = ReadStatus::bad_frame;
    r.error = "stream ended inside a frame";
    r.message = {};
    return r;
  };
  if (!fill(h + got, kHeaderSize - got, r.bytes)) return truncated();
  if (auto e = header_error(h); !e.empty()) {
    r.status = ReadStatus::bad_frame;
    r.error = e;
    return r;
  }
  r.message.flags = h[5];
  const std::uint32_t json_length = le32(h + 6), blob_count = le32(h + 10);
  std::uint64_t total = kHeaderSize + std::uint64_t{json_length} + 4ull * blob_count;
  bool oversize = total > max_;

  if (oversize) {
    if (!skip(json_length, r.bytes)) return truncated();
  } else {
    r.message.json.resize(json_length);
    if (!fill(reinterpret_cast<std::uint8_t*>(r.message.json.data()), json_length, r.bytes)) return truncated();
    r.message.blobs.reserve(blob_count);
  }
  for (std::uint32_t i = 0; i < blob_count; ++i) {
    std::uint8_t lb[4];
    if (!fill(lb, 4, r.bytes)) return truncated();
    const std::uint32_t len = le32(lb);
    total += len;
    if (!oversize && total > max_) {
      oversize = true;
      r.message = {};
    }
    if (oversize) {
      if (!skip(len, r.bytes)) return truncated();
      continue;
    }
    Bytes blob(len);
    if (!fill(blob.data(), len, r.bytes)) return truncated();
    r.message.blobs.push_back(std::move(blob));
  }
  if (oversize) {
    r.status = ReadStatus::oversize;
    r.message = {};
    r.error = "message of " + std::to_string(total) + " bytes exceeds the " + std::to_string(max_) + " byte limit";
    return r;
  }
  r.status = ReadStatus::ok;
  return r;
}

}  // namespace visor::net
