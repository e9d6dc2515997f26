#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace moslam {

// Row-major 2D grid. Pixel (x, y) with x in [0, width), y in [0, height).
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, const T& fill = T{})
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  bool inside(int x, int y) const { return x >= 0 && x < width_ && y >= 0 && y < height_; }

  T& at(int x, int y) {
    assert(inside(x, y));
    return data_[static_cast<size_t>(y) * width_ + x];
  }
  const T& at(int x, int y) const {
    assert(inside(x, y));
    return data_[static_cast<size_t>(y) * width_ + x];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && data_ == o.data_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

using ColorMap = Image<Rgb>;
using LabelImage = Image<uint8_t>;

}  // namespace moslam
