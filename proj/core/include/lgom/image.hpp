#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lgom {

/// Row-major H x W x C image of doubles, linear-light values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c)
      : height(h), width(w), channels(c), data(size_t(h) * w * c, 0.0) {}

  double& at(int y, int x, int c) {
    return data[(size_t(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(size_t(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
};

double srgb_encode(double linear);
double srgb_decode(double srgb);

/// 8-bit PNG I/O. RGB images are sRGB-encoded on write and decoded on read;
/// single-channel images (masks) are written as linear gray.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

/// Exact float sidecar via the tensor container (array name "pixels").
void write_image_container(const std::string& path, const Image& img);
Image read_image_container(const std::string& path);

}  // namespace lgom
