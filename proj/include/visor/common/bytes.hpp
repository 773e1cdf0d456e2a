#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visor/common/error.hpp"

namespace visor {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) noexcept {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string_view as_chars(ByteView b) noexcept {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

// Little-endian serializer. Every on-disk and on-wire integer in the project
// goes through this pair.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(Bytes& sink) : out_(&sink) {}

  void u8(std::uint8_t v) { out().push_back(v); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i64(std::int64_t v) { put_le(static_cast<std::uint64_t>(v)); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

  void raw(ByteView b) { out().insert(out().end(), b.begin(), b.end()); }
  void raw(std::string_view s) { raw(as_bytes(s)); }

  // u32 length prefix followed by the bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  // Overwrites four bytes at `pos` (used to back-patch length fields).
  void patch_u32(std::size_t pos, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out()[pos + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }

  void reserve(std::size_t n) { out().reserve(n); }
  std::size_t size() const { return out_ ? out_->size() : own_.size(); }
  Bytes take() { return std::move(out()); }
  const Bytes& bytes() const { return out_ ? *out_ : own_; }

 private:
  Bytes& out() { return out_ ? *out_ : own_; }

  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out().push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  Bytes own_;
  Bytes* out_ = nullptr;
};

// Bounds-checked little-endian reader; throws Errc::corrupt_data on underrun.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8() { return get_le<std::uint8_t>(); }
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::int64_t i64() { return static_cast<std::int64_t>(get_le<std::uint64_t>()); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  ByteView raw(std::size_t n) {
    need(n);
    ByteView v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
  }

  std::string str() {
    std::uint32_t n = u32();
    auto v = raw(n);
    return std::string(as_chars(v));
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(Errc::corrupt_data, "truncated record");
  }

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  ByteView data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(ByteView data) noexcept;

// Lowercase hex SHA-256 of the input.
std::string sha256_hex(ByteView data);

}  // namespace visor
