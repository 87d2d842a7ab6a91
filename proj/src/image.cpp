#include "relvid/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "relvid/error.hpp"

namespace relvid {

GrayImage to_gray(const Image& img) {
  GrayImage g;
  g.height = img.height;
  g.width = img.width;
  g.values.resize(static_cast<std::size_t>(img.height) * img.width);
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const std::uint8_t* p = &img.pixels[i * 3];
    g.values[i] = (0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2]) / 255.0f;
  }
  return g;
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (img.empty()) throw InputError("resize: empty frame");
  if (height <= 0 || width <= 0) throw InputError("resize: non-positive target size");
  if (img.height == height && img.width == width) return img;
  Image out(height, width);
  cv::Mat src(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.pixels.data()));
  cv::Mat dst(height, width, CV_8UC3, out.pixels.data());
  cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
  return out;
}

Image crop(const Image& img, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || y0 + height > img.height || x0 + width > img.width)
    throw InputError("crop: window outside frame");
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    const auto* src = &img.pixels[(static_cast<std::size_t>(y0 + y) * img.width + x0) * 3];
    std::copy(src, src + static_cast<std::size_t>(width) * 3,
              &out.pixels[static_cast<std::size_t>(y) * width * 3]);
  }
  return out;
}

// Counter-clockwise: a pixel at (r, c) moves to (n-1-c, r) for 90 degrees.
Image rotate_square(const Image& img, int degrees) {
  if (img.height != img.width) throw InputError("rotate: frame is not square");
  const int turns = ((degrees % 360) + 360) % 360 / 90;
  if (degrees % 90 != 0) throw InputError("rotate: angle must be a multiple of 90");
  const int n = img.height;
  Image out(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      int rr = r, cc = c;
      switch (turns) {
        case 0: break;
        case 1: rr = n - 1 - c; cc = r; break;
        case 2: rr = n - 1 - r; cc = n - 1 - c; break;
        case 3: rr = c; cc = n - 1 - r; break;
      }
      for (int ch = 0; ch < 3; ++ch) out.at(rr, cc, ch) = img.at(r, c, ch);
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr, {cv::IMWRITE_PNG_COMPRESSION, 1});
  } catch (const cv::Exception& e) {
    throw IoError(path.string(), e.what());
  }
  if (!ok) throw IoError(path.string(), "cannot write image");
}

Image read_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError(path.string(), "cannot decode image");
  Image img(bgr.rows, bgr.cols);
  cv::Mat rgb(img.height, img.width, CV_8UC3, img.pixels.data());
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return img;
}

}  // namespace relvid
