#include "visor/bench/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace visor::bench {

std::vector<float> slice_features(const image::Image& img) {
  constexpr int kCells = 4, kBins = 4;
  std::vector<double> hist(kFeatureDims, 0.0);
  const auto w = static_cast<std::int64_t>(img.width), h = static_cast<std::int64_t>(img.height);
  auto px = [&](std::int64_t x, std::int64_t y) {
    x = std::clamp<std::int64_t>(x, 0, w - 1);
    y = std::clamp<std::int64_t>(y, 0, h - 1);
    return static_cast<double>(img.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)));
  };
  for (std::int64_t y = 0; y < h; ++y) {
    const auto cy = std::min<std::int64_t>(kCells - 1, y * kCells / h);
    for (std::int64_t x = 0; x < w; ++x) {
      const double gx = px(x + 1, y) - px(x - 1, y);
      const double gy = px(x, y + 1) - px(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx);
      if (angle < 0) angle += std::numbers::pi;
      const auto bin = std::min<int>(kBins - 1, static_cast<int>(angle / std::numbers::pi * kBins));
      const auto cx = std::min<std::int64_t>(kCells - 1, x * kCells / w);
      hist[static_cast<std::size_t>((cy * kCells + cx) * kBins + bin)] += mag;
    }
  }
  double norm = 0;
  for (double v : hist) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<float> out(kFeatureDims, 0.0f);
  if (norm > 0)
    for (std::size_t i = 0; i < kFeatureDims; ++i) out[i] = static_cast<float>(hist[i] / norm);
  return out;
}

}  // namespace visor::bench
