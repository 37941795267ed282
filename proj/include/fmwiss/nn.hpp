#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "fmwiss/image.hpp"
#include "fmwiss/rng.hpp"
#include "fmwiss/tensor.hpp"

namespace fmwiss {

struct Param {
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> velocity;

  explicit Param(std::size_t n = 0) : value(n, 0.0), grad(n, 0.0), velocity(n, 0.0) {}
  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Same-padded 2-D convolution with optional dilation.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int dilation, Rng& init);

  Tensor forward(const Tensor& x) const;
  // Accumulates weight/bias gradients; returns dL/dx when `want_dx`.
  Tensor backward(const Tensor& x, const Tensor& dy, bool want_dx);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }

  // Appends `rows` output channels initialised from `init`.
  void add_outputs(int rows, Rng& init, double scale);

  Param weight;  // [out][in][k][k]
  Param bias;    // [out]

 private:
  int in_ = 0;
  int out_ = 0;
  int kernel_ = 1;
  int dilation_ = 1;
};

void relu_inplace(Tensor& x);
// Zeroes `dy` where the pre-activation was <= 0.
void relu_backward_inplace(const Tensor& pre, Tensor& dy);

struct SgdConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// v <- m*v + (g + wd*w);  w <- w - lr*v
void sgd_step(std::span<Param* const> params, const SgdConfig& cfg);

std::size_t parameter_count(std::span<Param* const> params);
std::vector<float> export_parameters(std::span<Param* const> params);
void import_parameters(std::span<Param* const> params, std::span<const float> values);

// Average-pools RGB by `stride` and centres it around 0.
Tensor image_to_input(const Image& image, int stride);
Tensor upsample_bilinear(const Tensor& x, int height, int width);

}  // namespace fmwiss
