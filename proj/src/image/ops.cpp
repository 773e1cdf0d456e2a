#include "visor/image/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "visor/common/error.hpp"

namespace visor::image {

Image threshold(const Image& img, std::uint8_t t) {
  Image out = img;
  for (auto& p : out.pixels)
    if (p < t) p = 0;
  return out;
}

namespace {

std::uint8_t round_half_even(std::uint64_t sum, std::uint64_t n) {
  std::uint64_t q = sum / n, r = sum % n;
  if (2 * r > n || (2 * r == n && (q & 1))) ++q;
  return static_cast<std::uint8_t>(std::min<std::uint64_t>(q, 255));
}

Image box_average(const Image& img, std::uint32_t width, std::uint32_t height) {
  const std::uint32_t fx = img.width / width, fy = img.height / height;
  const std::uint64_t n = static_cast<std::uint64_t>(fx) * fy;
  const std::uint8_t ch = img.channels;
  Image out = Image::filled(width, height, ch);
  std::vector<std::uint64_t> acc(static_cast<std::size_t>(width) * ch);
  for (std::uint32_t oy = 0; oy < height; ++oy) {
    std::fill(acc.begin(), acc.end(), 0);
    for (std::uint32_t sy = oy * fy; sy < (oy + 1) * fy; ++sy) {
      const std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(sy) * img.row_bytes();
      for (std::uint32_t sx = 0; sx < img.width; ++sx)
        for (std::uint8_t c = 0; c < ch; ++c) acc[static_cast<std::size_t>(sx / fx) * ch + c] += row[sx * ch + c];
    }
    std::uint8_t* dst = out.pixels.data() + static_cast<std::size_t>(oy) * out.row_bytes();
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = round_half_even(acc[i], n);
  }
  return out;
}

struct Tap {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;
  double w = 0.0;  // weight of `hi`
};

std::vector<Tap> taps(std::uint32_t src, std::uint32_t dst) {
  std::vector<Tap> out(dst);
  const double scale = static_cast<double>(src) / dst;
  for (std::uint32_t i = 0; i < dst; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    auto lo = static_cast<std::uint32_t>(std::floor(s));
    out[i] = {lo, std::min(lo + 1, src - 1), s - lo};
  }
  return out;
}

Image bilinear(const Image& img, std::uint32_t width, std::uint32_t height) {
  const auto tx = taps(img.width, width);
  const auto ty = taps(img.height, height);
  const std::uint8_t ch = img.channels;
  Image out = Image::filled(width, height, ch);
  for (std::uint32_t y = 0; y < height; ++y) {
    const std::uint8_t* r0 = img.pixels.data() + static_cast<std::size_t>(ty[y].lo) * img.row_bytes();
    const std::uint8_t* r1 = img.pixels.data() + static_cast<std::size_t>(ty[y].hi) * img.row_bytes();
    const double wy = ty[y].w;
    std::uint8_t* dst = out.pixels.data() + static_cast<std::size_t>(y) * out.row_bytes();
    for (std::uint32_t x = 0; x < width; ++x) {
      const auto& t = tx[x];
      for (std::uint8_t c = 0; c < ch; ++c) {
        double top = (1.0 - t.w) * r0[t.lo * ch + c] + t.w * r0[t.hi * ch + c];
        double bottom = (1.0 - t.w) * r1[t.lo * ch + c] + t.w * r1[t.hi * ch + c];
        double v = std::nearbyint((1.0 - wy) * top + wy * bottom);
        dst[static_cast<std::size_t>(x) * ch + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace

Image resize(const Image& img, std::uint32_t width, std::uint32_t height) {
  if (width < 1 || height < 1) throw Error(Errc::invalid_target, "resize target must be at least 1x1");
  if (width == img.width && height == img.height) return img;
  if (width <= img.width && height <= img.height && img.width % width == 0 && img.height % height == 0)
    return box_average(img, width, height);
  return bilinear(img, width, height);
}

Image crop(const Image& img, std::uint32_t x, std::uint32_t y, std::uint32_t width, std::uint32_t height) {
  check_op(Crop{x, y, width, height}, img.width, img.height);
  Image out = Image::filled(width, height, img.channels);
  for (std::uint32_t row = 0; row < height; ++row) {
    const std::uint8_t* src =
        img.pixels.data() + static_cast<std::size_t>(y + row) * img.row_bytes() + static_cast<std::size_t>(x) * img.channels;
    std::copy_n(src, out.row_bytes(), out.pixels.data() + static_cast<std::size_t>(row) * out.row_bytes());
  }
  return out;
}

std::pair<std::uint32_t, std::uint32_t> check_op(const TransformOp& op, std::uint32_t width, std::uint32_t height) {
  constexpr std::int64_t kMaxSide = 1 << 20;
  constexpr std::int64_t kMaxPixels = 1 << 26;
  return std::visit(
      [&](const auto& o) -> std::pair<std::uint32_t, std::uint32_t> {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Threshold>) {
          if (o.value < 0 || o.value > 255)
            throw Error(Errc::invalid_op_params, "threshold must be in 0..255, got " + std::to_string(o.value));
          return {width, height};
        } else if constexpr (std::is_same_v<T, Resize>) {
          if (o.width < 1 || o.height < 1 || o.width > kMaxSide || o.height > kMaxSide ||
              o.width * o.height > kMaxPixels)
            throw Error(Errc::invalid_target, "resize target " + std::to_string(o.width) + "x" +
                                                  std::to_string(o.height) + " is out of range");
          return {static_cast<std::uint32_t>(o.width), static_cast<std::uint32_t>(o.height)};
        } else {
          if (o.x < 0 || o.y < 0 || o.width < 1 || o.height < 1 || o.x + o.width > width || o.y + o.height > height)
            throw Error(Errc::out_of_bounds, "crop " + std::to_string(o.width) + "x" + std::to_string(o.height) +
                                                 "+" + std::to_string(o.x) + "+" + std::to_string(o.y) +
                                                 " exceeds " + std::to_string(width) + "x" + std::to_string(height));
          return {static_cast<std::uint32_t>(o.width), static_cast<std::uint32_t>(o.height)};
        }
      },
      op);
}

Image apply_ops(Image img, std::span<const TransformOp> ops) {
  std::uint32_t w = img.width, h = img.height;
  for (const auto& op : ops) std::tie(w, h) = check_op(op, w, h);
  for (const auto& op : ops) {
    img = std::visit(
        [&](const auto& o) -> Image {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, Threshold>) return threshold(img, static_cast<std::uint8_t>(o.value));
          else if constexpr (std::is_same_v<T, Resize>)
            return resize(img, static_cast<std::uint32_t>(o.width), static_cast<std::uint32_t>(o.height));
          else
            return crop(img, static_cast<std::uint32_t>(o.x), static_cast<std::uint32_t>(o.y),
                        static_cast<std::uint32_t>(o.width), static_cast<std::uint32_t>(o.height));
        },
        op);
  }
  return img;
}

}  // namespace visor::image
