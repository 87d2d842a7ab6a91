#include "relvid/hog.hpp"

#include <cmath>
#include <numbers>

#include "relvid/error.hpp"
#include "relvid/video_ingest.hpp"

namespace relvid {

std::size_t hog_length(int height, int width, const HogParams& p) {
  const int cells_y = height / p.cell_size;
  const int cells_x = width / p.cell_size;
  const int blocks_y = cells_y - p.block_cells + 1;
  const int blocks_x = cells_x - p.block_cells + 1;
  if (blocks_y <= 0 || blocks_x <= 0) return 0;
  return static_cast<std::size_t>(blocks_y) * blocks_x * p.block_cells * p.block_cells * p.orientation_bins;
}

std::vector<float> hog_descriptor_any_size(const GrayImage& img, const HogParams& p) {
  if (p.cell_size <= 0 || p.orientation_bins <= 0 || p.block_cells <= 0)
    throw InputError("hog: non-positive parameter");
  const int h = img.height, w = img.width;
  const int cells_y = h / p.cell_size;
  const int cells_x = w / p.cell_size;
  const int nbins = p.orientation_bins;
  std::vector<float> cells(static_cast<std::size_t>(cells_y) * cells_x * nbins, 0.0f);
  const float bin_width = 180.0f / static_cast<float>(nbins);

  for (int y = 0; y < cells_y * p.cell_size; ++y) {
    const int ym = y > 0 ? y - 1 : y;
    const int yp = y + 1 < h ? y + 1 : y;
    for (int x = 0; x < cells_x * p.cell_size; ++x) {
      const int xm = x > 0 ? x - 1 : x;
      const int xp = x + 1 < w ? x + 1 : x;
      const float gx = img.at(y, xp) - img.at(y, xm);
      const float gy = img.at(yp, x) - img.at(ym, x);
      const float mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0f) continue;
      float angle = std::atan2(gy, gx) * static_cast<float>(180.0 / std::numbers::pi);
      if (angle < 0.0f) angle += 180.0f;
      if (angle >= 180.0f) angle -= 180.0f;
      // Linear vote between the two nearest bin centres (wrapping at 180).
      const float pos = angle / bin_width;
      int b0 = static_cast<int>(std::floor(pos));
      const float frac = pos - static_cast<float>(b0);
      b0 %= nbins;
      const int b1 = (b0 + 1) % nbins;
      float* hist = &cells[(static_cast<std::size_t>(y / p.cell_size) * cells_x + x / p.cell_size) * nbins];
      hist[b0] += mag * (1.0f - frac);
      hist[b1] += mag * frac;
    }
  }

  const int blocks_y = cells_y - p.block_cells + 1;
  const int blocks_x = cells_x - p.block_cells + 1;
  std::vector<float> out;
  if (blocks_y <= 0 || blocks_x <= 0) return out;
  const std::size_t block_len = static_cast<std::size_t>(p.block_cells) * p.block_cells * nbins;
  out.reserve(static_cast<std::size_t>(blocks_y) * blocks_x * block_len);
  constexpr float eps = 1e-3f;
  std::vector<float> block(block_len);
  for (int by = 0; by < blocks_y; ++by) {
    for (int bx = 0; bx < blocks_x; ++bx) {
      std::size_t k = 0;
      for (int cy = 0; cy < p.block_cells; ++cy)
        for (int cx = 0; cx < p.block_cells; ++cx) {
          const float* hist = &cells[(static_cast<std::size_t>(by + cy) * cells_x + bx + cx) * nbins];
          for (int b = 0; b < nbins; ++b) block[k++] = hist[b];
        }
      auto normalise = [&] {
        double ss = 0.0;
        for (float v : block) ss += static_cast<double>(v) * v;
        const float scale = static_cast<float>(1.0 / std::sqrt(ss + eps * eps));
        for (float& v : block) v *= scale;
      };
      normalise();
      for (float& v : block) v = std::min(v, p.clip);
      normalise();
      out.insert(out.end(), block.begin(), block.end());
    }
  }
  return out;
}

std::vector<float> hog_descriptor(const GrayImage& frame, const HogParams& params) {
  if (frame.height != kFrameHeight || frame.width != kFrameWidth)
    throw InputError("hog_descriptor: expected a 128x171 frame, got " + std::to_string(frame.height) + "x" +
                     std::to_string(frame.width));
  return hog_descriptor_any_size(frame, params);
}

double frame_difference(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw InputError("frame_difference: descriptor lengths differ (" + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()) + ")");
  if (a.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a[i]) - b[i]);
  return sum / static_cast<double>(a.size());
}

}  // namespace relvid
