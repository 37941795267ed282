#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fmwiss {

// Planar dense tensor: channels x height x width, row-major inside a plane.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& at(int c, int i, int j) {
    return values_[static_cast<std::size_t>(c) * plane_size() +
                   static_cast<std::size_t>(i) * width_ + j];
  }
  double at(int c, int i, int j) const {
    return values_[static_cast<std::size_t>(c) * plane_size() +
                   static_cast<std::size_t>(i) * width_ + j];
  }

  std::span<double> plane(int c) {
    return {values_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::span<const double> plane(int c) const {
    return {values_.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::span<double> data() noexcept { return values_; }
  std::span<const double> data() const noexcept { return values_; }

  bool same_shape(const Tensor& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }
  bool same_grid(const Tensor& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  // Copies channels [first, first + count).
  Tensor slice_channels(int first, int count) const;
  void set_channels(int first, const Tensor& src);

  bool operator==(const Tensor& other) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

// Binary plane; every byte is 0 or 1.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), bits(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int i, int j) { return bits[static_cast<std::size_t>(i) * width + j]; }
  std::uint8_t at(int i, int j) const { return bits[static_cast<std::size_t>(i) * width + j]; }
  std::size_t popcount() const;
  bool same_shape(const Mask& o) const noexcept { return height == o.height && width == o.width; }
  bool operator==(const Mask&) const = default;
};

Mask upsample_nearest(const Mask& mask, int height, int width);
// Samples the source pixel under each destination cell's center.
Mask downsample_nearest(const Mask& mask, int height, int width);

double sigmoid(double x);
Tensor sigmoid(const Tensor& logits);

}  // namespace fmwiss
