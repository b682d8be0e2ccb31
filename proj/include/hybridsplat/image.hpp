#pragma once

#include "hybridsplat/core.hpp"

#include <cstddef>
#include <vector>

namespace hybridsplat {

/// Interleaved float image, row-major, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  Vec3 rgb(std::size_t pixel) const {
    const double* p = &data[pixel * channels];
    return Vec3(p[0], p[1], p[2]);
  }
  void set_rgb(std::size_t pixel, const Vec3& v) {
    double* p = &data[pixel * channels];
    p[0] = v.x();
    p[1] = v.y();
    p[2] = v.z();
  }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// Per-pixel boolean mask; empty `flags` means "every pixel".
struct PixelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> flags;

  bool empty() const { return flags.empty(); }
  bool selected(std::size_t pixel) const { return flags.empty() || flags[pixel] != 0; }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw Error(ErrorKind::Dimension, std::string(what) + ": image dimensions differ");
}

}  // namespace hybridsplat
