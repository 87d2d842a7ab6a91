#pragma once

#include <span>
#include <vector>

#include "relvid/image.hpp"

namespace relvid {

/// Histogram-of-oriented-gradients settings. Unsigned orientations, bin
/// centres at 0, 180/bins, ... degrees, blocks stepped one cell at a time
/// and normalised with clipped L2 (L2-Hys).
struct HogParams {
  int cell_size = 16;
  int orientation_bins = 9;
  int block_cells = 2;
  float clip = 0.2f;

  friend bool operator==(const HogParams&, const HogParams&) = default;
};

/// Descriptor length for a frame of the given size. Pixels beyond the last
/// whole cell are ignored.
std::size_t hog_length(int height, int width, const HogParams& params);

/// Throws InputError unless the frame is at the canonical 128x171 size.
std::vector<float> hog_descriptor(const GrayImage& frame, const HogParams& params = {});

/// Same computation without the canonical-size check.
std::vector<float> hog_descriptor_any_size(const GrayImage& frame, const HogParams& params = {});

/// Mean absolute elementwise difference.
double frame_difference(std::span<const float> a, std::span<const float> b);

}  // namespace relvid
