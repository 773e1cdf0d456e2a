#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <variant>

#include "visor/image/image.hpp"

namespace visor::image {

// Zeroes every sample strictly below `value`.
struct Threshold {
  std::int64_t value = 0;
};

struct Resize {
  std::int64_t width = 0;
  std::int64_t height = 0;
};

struct Crop {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
};

using TransformOp = std::variant<Threshold, Resize, Crop>;

Image threshold(const Image& img, std::uint8_t t);

// Box average when both axes shrink by an integer factor, bilinear with
// pixel-center alignment otherwise. Results round half to even.
Image resize(const Image& img, std::uint32_t width, std::uint32_t height);

Image crop(const Image& img, std::uint32_t x, std::uint32_t y, std::uint32_t width, std::uint32_t height);

// Checks `op` against the dimensions it will be applied to and returns the
// dimensions it produces. Throws invalid_op_params (threshold outside
// 0..255), invalid_target (resize below 1x1, a side over 2^20 or more
// than 2^26 pixels) or out_of_bounds (crop).
std::pair<std::uint32_t, std::uint32_t> check_op(const TransformOp& op, std::uint32_t width, std::uint32_t height);

// Validates the whole list against the starting size, then applies in order.
Image apply_ops(Image img, std::span<const TransformOp> ops);

}  // namespace visor::image
