#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace panoslam {

struct Color3u8 {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Color3u8&) const = default;
};

template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill) {
    if (width < 0 || height < 0)
      throw std::invalid_argument("Image: negative size");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y) { return data_[static_cast<size_t>(y) * width_ + x]; }
  const T& at(int x, int y) const {
    return data_[static_cast<size_t>(y) * width_ + x];
  }

  /// Access with cyclic x (longitude seam) and clamped y (poles).
  const T& at_wrapped(int x, int y) const {
    x %= width_;
    if (x < 0) x += width_;
    if (y < 0) y = 0;
    if (y >= height_) y = height_ - 1;
    return at(x, y);
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ImageU8 = Image<uint8_t>;
using ImageRgb = Image<Color3u8>;
using ImageF64 = Image<double>;

/// Per-pixel range in meters plus validity. Invalid pixels carry value 0.
struct DepthMap {
  ImageF64 values;
  Image<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int width, int height)
      : values(width, height, 0.0), valid(width, height, 0) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }

  void set(int x, int y, double range) {
    values.at(x, y) = range;
    valid.at(x, y) = 1;
  }

  size_t valid_count() const {
    size_t n = 0;
    for (size_t i = 0; i < valid.size(); ++i) n += valid.data()[i] != 0;
    return n;
  }
};

/// Per-pixel confidence in [0, 1].
using ConfidenceMap = ImageF64;

inline uint8_t rgb_to_gray(const Color3u8& c) {
  const double y = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
  return static_cast<uint8_t>(y + 0.5);
}

inline ImageU8 to_grayscale(const ImageRgb& rgb) {
  ImageU8 g(rgb.width(), rgb.height());
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x) g.at(x, y) = rgb_to_gray(rgb.at(x, y));
  return g;
}

}  // namespace panoslam
