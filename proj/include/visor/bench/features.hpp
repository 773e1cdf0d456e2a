#pragma once

#include <vector>

#include "visor/image/image.hpp"

namespace visor::bench {

inline constexpr std::size_t kFeatureDims = 64;

// Gradient-orientation histogram: 4x4 cells, 4 unsigned orientation bins
// each, magnitude weighted, L2 normalized. Uses channel 0.
std::vector<float> slice_features(const image::Image& img);

}  // namespace visor::bench
