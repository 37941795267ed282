#include "fmwiss/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "fmwiss/error.hpp"

namespace fmwiss {

Tensor::Tensor(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    fail(ErrorCode::kInvalidArgument, "negative tensor extent");
  }
  values_.assign(static_cast<std::size_t>(channels) * plane_size(), fill);
}

Tensor Tensor::slice_channels(int first, int count) const {
  if (first < 0 || count < 0 || first + count > channels_) {
    fail(ErrorCode::kShapeMismatch, "channel slice out of range");
  }
  Tensor out(count, height_, width_);
  std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(first * plane_size()),
              count * plane_size(), out.values_.begin());
  return out;
}

void Tensor::set_channels(int first, const Tensor& src) {
  if (!same_grid(src) || first < 0 || first + src.channels() > channels_) {
    fail(ErrorCode::kShapeMismatch, "channel write out of range");
  }
  std::copy(src.values_.begin(), src.values_.end(),
            values_.begin() + static_cast<std::ptrdiff_t>(first * plane_size()));
}

std::size_t Mask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask upsample_nearest(const Mask& mask, int height, int width) {
  Mask out(height, width);
  for (int i = 0; i < height; ++i) {
    const int si = std::min(mask.height - 1,
                            static_cast<int>(static_cast<long long>(i) * mask.height / height));
    for (int j = 0; j < width; ++j) {
      const int sj = std::min(mask.width - 1,
                              static_cast<int>(static_cast<long long>(j) * mask.width / width));
      out.at(i, j) = mask.at(si, sj);
    }
  }
  return out;
}

Mask downsample_nearest(const Mask& mask, int height, int width) {
  Mask out(height, width);
  for (int i = 0; i < height; ++i) {
    const int si = std::min(
        mask.height - 1,
        static_cast<int>((2LL * i + 1) * mask.height / (2LL * height)));
    for (int j = 0; j < width; ++j) {
      const int sj = std::min(
          mask.width - 1, static_cast<int>((2LL * j + 1) * mask.width / (2LL * width)));
      out.at(i, j) = mask.at(si, sj);
    }
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& logits) {
  Tensor out = logits;
  for (double& v : out.data()) v = sigmoid(v);
  return out;
}

}  // namespace fmwiss
