#include "fmwiss/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fmwiss/error.hpp"

namespace fmwiss {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int dilation, Rng& init)
    : weight(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias(static_cast<std::size_t>(out_channels)),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      dilation_(dilation) {
  if (kernel % 2 != 1 || dilation < 1) fail(ErrorCode::kInvalidArgument, "conv kernel must be odd");
  const double scale = std::sqrt(2.0 / (in_channels * kernel * kernel));
  for (double& v : weight.value) v = scale * standard_normal(init);
}

void Conv2d::add_outputs(int rows, Rng& init, double scale) {
  const std::size_t per_row = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  for (int r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < per_row; ++k) {
      weight.value.push_back(scale * standard_normal(init));
      weight.grad.push_back(0.0);
      weight.velocity.push_back(0.0);
    }
    bias.value.push_back(0.0);
    bias.grad.push_back(0.0);
    bias.velocity.push_back(0.0);
  }
  out_ += rows;
}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.channels() != in_) {
    fail(ErrorCode::kShapeMismatch, "conv expects " + std::to_string(in_) + " channels, got " +
                                        std::to_string(x.channels()));
  }
  const int h = x.height();
  const int wd = x.width();
  const int half = kernel_ / 2;
  Tensor y(out_, h, wd);
  for (int o = 0; o < out_; ++o) {
    auto yo = y.plane(o);
    std::fill(yo.begin(), yo.end(), bias.value[static_cast<std::size_t>(o)]);
    for (int ci = 0; ci < in_; ++ci) {
      const auto xc = x.plane(ci);
      for (int ky = 0; ky < kernel_; ++ky) {
        const int oy = (ky - half) * dilation_;
        const int i0 = std::max(0, -oy);
        const int i1 = std::min(h, h - oy);
        for (int kx = 0; kx < kernel_; ++kx) {
          const int ox = (kx - half) * dilation_;
          const int j0 = std::max(0, -ox);
          const int j1 = std::min(wd, wd - ox);
          const double wv = weight.value[((static_cast<std::size_t>(o) * in_ + ci) * kernel_ + ky) * kernel_ + kx];
          for (int i = i0; i < i1; ++i) {
            double* yr = yo.data() + static_cast<std::size_t>(i) * wd;
            const double* xr = xc.data() + static_cast<std::size_t>(i + oy) * wd + ox;
            for (int j = j0; j < j1; ++j) yr[j] += wv * xr[j];
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool want_dx) {
  const int h = x.height();
  const int wd = x.width();
  const int half = kernel_ / 2;
  Tensor dx;
  if (want_dx) dx = Tensor(in_, h, wd);
  for (int o = 0; o < out_; ++o) {
    const auto go = dy.plane(o);
    double bsum = 0.0;
    for (double g : go) bsum += g;
    bias.grad[static_cast<std::size_t>(o)] += bsum;
    for (int ci = 0; ci < in_; ++ci) {
      const auto xc = x.plane(ci);
      for (int ky = 0; ky < kernel_; ++ky) {
        const int oy = (ky - half) * dilation_;
        const int i0 = std::max(0, -oy);
        const int i1 = std::min(h, h - oy);
        for (int kx = 0; kx < kernel_; ++kx) {
          const int ox = (kx - half) * dilation_;
          const int j0 = std::max(0, -ox);
          const int j1 = std::min(wd, wd - ox);
          const std::size_t widx = ((static_cast<std::size_t>(o) * in_ + ci) * kernel_ + ky) * kernel_ + kx;
          const double wv = weight.value[widx];
          double acc = 0.0;
          for (int i = i0; i < i1; ++i) {
            const double* gr = go.data() + static_cast<std::size_t>(i) * wd;
            const double* xr = xc.data() + static_cast<std::size_t>(i + oy) * wd + ox;
            for (int j = j0; j < j1; ++j) acc += gr[j] * xr[j];
            if (want_dx) {
              double* dr = dx.plane(ci).data() + static_cast<std::size_t>(i + oy) * wd + ox;
              for (int j = j0; j < j1; ++j) dr[j] += wv * gr[j];
            }
          }
          weight.grad[widx] += acc;
        }
      }
    }
  }
  return dx;
}

void relu_inplace(Tensor& x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& pre, Tensor& dy) {
  const auto p = pre.data();
  auto g = dy.data();
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (p[k] <= 0.0) g[k] = 0.0;
  }
}

void sgd_step(std::span<Param* const> params, const SgdConfig& cfg) {
  for (Param* p : params) {
    for (std::size_t k = 0; k < p->size(); ++k) {
      const double g = p->grad[k] + cfg.weight_decay * p->value[k];
      p->velocity[k] = cfg.momentum * p->velocity[k] + g;
      p->value[k] -= cfg.lr * p->velocity[k];
    }
  }
}

std::size_t parameter_count(std::span<Param* const> params) {
  std::size_t n = 0;
  for (const Param* p : params) n += p->size();
  return n;
}

std::vector<float> export_parameters(std::span<Param* const> params) {
  std::vector<float> out;
  out.reserve(parameter_count(params));
  for (const Param* p : params) {
    for (double v : p->value) out.push_back(static_cast<float>(v));
  }
  return out;
}

void import_parameters(std::span<Param* const> params, std::span<const float> values) {
  if (values.size() != parameter_count(params)) {
    fail(ErrorCode::kFormatError, "parameter count " + std::to_string(values.size()) + " does not match model (" +
                                      std::to_string(parameter_count(params)) + ")");
  }
  std::size_t k = 0;
  for (Param* p : params) {
    for (double& v : p->value) v = values[k++];
    std::fill(p->velocity.begin(), p->velocity.end(), 0.0);
    p->zero_grad();
  }
}

Tensor image_to_input(const Image& image, int stride) {
  const int h = std::max(1, image.height / stride);
  const int w = std::max(1, image.width / stride);
  Tensor out(3, h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc[3] = {0, 0, 0};
      int count = 0;
      for (int y = i * stride; y < std::min(image.height, (i + 1) * stride); ++y) {
        for (int x = j * stride; x < std::min(image.width, (j + 1) * stride); ++x) {
          const auto* px = image.pixel(y, x);
          for (int c = 0; c < 3; ++c) acc[c] += px[c];
          ++count;
        }
      }
      for (int c = 0; c < 3; ++c) out.at(c, i, j) = acc[c] / (255.0 * count) - 0.5;
    }
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& x, int height, int width) {
  Tensor out(x.channels(), height, width);
  const double sy = static_cast<double>(x.height()) / height;
  const double sx = static_cast<double>(x.width()) / width;
  for (int i = 0; i < height; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, x.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, x.height() - 1);
    const double ay = fy - y0;
    for (int j = 0; j < width; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, x.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, x.width() - 1);
      const double ax = fx - x0;
      for (int c = 0; c < x.channels(); ++c) {
        const double top = x.at(c, y0, x0) * (1 - ax) + x.at(c, y0, x1) * ax;
        const double bot = x.at(c, y1, x0) * (1 - ax) + x.at(c, y1, x1) * ax;
        out.at(c, i, j) = top * (1 - ay) + bot * ay;
      }
    }
  }
  return out;
}

}  // namespace fmwiss
