#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "epitraj/errors.hpp"

namespace epitraj {

/// Dense row-major single-channel raster.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width), height_(height) {
    if (width < 0 || height < 0) throw ArgError("negative raster dimensions");
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }
  bool same_shape(int w, int h) const { return w == width_ && h == height_; }
  template <typename U>
  bool same_shape(const Raster<U>& other) const {
    return other.width() == width_ && other.height() == height_;
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Raster&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using FloatRaster = Raster<float>;
/// Binary mask, values in {0,1}.
using Mask = Raster<std::uint8_t>;

/// Dense displacement field between two frames, in pixels.
struct FlowField {
  FloatRaster u;
  FloatRaster v;

  FlowField() = default;
  FlowField(int width, int height) : u(width, height), v(width, height) {}

  int width() const { return u.width(); }
  int height() const { return u.height(); }
  bool operator==(const FlowField&) const = default;
};

/// Per-frame network input: flow channels plus normalized epipolar distance.
struct MotionImage {
  FloatRaster u;
  FloatRaster v;
  FloatRaster ed;

  int width() const { return u.width(); }
  int height() const { return u.height(); }
  bool operator==(const MotionImage&) const = default;
};

/// 8-bit RGB image, interleaved.
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Bilinear sample with coordinates clamped to the raster domain.
inline double sample_bilinear(const FloatRaster& r, double x, double y) {
  const int w = r.width();
  const int h = r.height();
  if (x < 0) x = 0;
  if (y < 0) y = 0;
  if (x > w - 1) x = w - 1;
  if (y > h - 1) y = h - 1;
  int x0 = static_cast<int>(x);
  int y0 = static_cast<int>(y);
  if (x0 > w - 2) x0 = w > 1 ? w - 2 : 0;
  if (y0 > h - 2) y0 = h > 1 ? h - 2 : 0;
  const int x1 = w > 1 ? x0 + 1 : x0;
  const int y1 = h > 1 ? y0 + 1 : y0;
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1 - fx) * r(x0, y0) + fx * r(x1, y0);
  const double bot = (1 - fx) * r(x0, y1) + fx * r(x1, y1);
  return (1 - fy) * top + fy * bot;
}

}  // namespace epitraj
