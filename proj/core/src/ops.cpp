#include "follipipe/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace follipipe {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::string dim_error(const char* op, const char* what, std::size_t got, std::size_t expected) {
  return std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
         std::to_string(expected);
}

struct ConvGeometry {
  std::size_t batch, channels, in_h, in_w, out_h, out_w;
};

ConvGeometry check_conv(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  spec.validate();
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  if (input.dim(1) != spec.in_channels)
    throw std::invalid_argument(dim_error("conv2d", "input channels", input.dim(1), spec.in_channels));
  const Shape ws = spec.weight_shape();
  const char* names[] = {"weight out_channels", "weight in_channels", "weight kernel_h",
                         "weight kernel_w"};
  for (std::size_t i = 0; i < 4; ++i)
    if (weights.dim(i) != ws[i]) throw std::invalid_argument(dim_error("conv2d", names[i], weights.dim(i), ws[i]));
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.channels = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_h = spec.output_extent(g.in_h, spec.kernel_h);
  g.out_w = spec.output_extent(g.in_w, spec.kernel_w);
  return g;
}

bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.padding == 0;
}

// Unfolds one sample [C,H,W] into a (C*kh*kw) x (oh*ow) row-major matrix.
void im2col(const double* src, const ConvGeometry& g, const ConvSpec& spec, double* col) {
  const long pad = static_cast<long>(spec.padding);
  const long in_h = static_cast<long>(g.in_h);
  const long in_w = static_cast<long>(g.in_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = src + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj, ++row) {
        double* out = col + row * g.out_h * g.out_w;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * spec.stride + ki * spec.dilation) - pad;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox * spec.stride + kj * spec.dilation) - pad;
            *out++ = (y >= 0 && y < in_h && x >= 0 && x < in_w) ? plane[y * in_w + x] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, const ConvSpec& spec, double* dst) {
  const long pad = static_cast<long>(spec.padding);
  const long in_h = static_cast<long>(g.in_h);
  const long in_w = static_cast<long>(g.in_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = dst + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj, ++row) {
        const double* in = col + row * g.out_h * g.out_w;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * spec.stride + ki * spec.dilation) - pad;
          for (std::size_t ox = 0; ox < g.out_w; ++ox, ++in) {
            const long x = static_cast<long>(ox * spec.stride + kj * spec.dilation) - pad;
            if (y >= 0 && y < in_h && x >= 0 && x < in_w) plane[y * in_w + x] += *in;
          }
        }
      }
    }
  }
}

void require_nchw(const Tensor& t, const char* what) { require_rank(t, 4, what); }

}  // namespace

std::size_t ConvSpec::output_extent(std::size_t input, std::size_t kernel) const {
  const long span = static_cast<long>(dilation * (kernel - 1) + 1);
  const long padded = static_cast<long>(input + 2 * padding);
  if (padded < span)
    throw std::invalid_argument("conv2d: input extent " + std::to_string(input) + " with padding " +
                                std::to_string(padding) + " is smaller than dilated kernel span " +
                                std::to_string(span));
  return static_cast<std::size_t>((padded - span) / static_cast<long>(stride)) + 1;
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 ||
      dilation == 0)
    throw std::invalid_argument("conv spec: channels, kernel, stride and dilation must be positive");
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weights, spec);
  require_shape(bias, {spec.out_channels}, "conv2d bias");

  const std::size_t k = spec.fan_in();
  const std::size_t hw = g.out_h * g.out_w;
  Tensor out({g.batch, spec.out_channels, g.out_h, g.out_w});
  ConstMatrixMap w(weights.data(), static_cast<long>(spec.out_channels), static_cast<long>(k));
  const bool pointwise = is_pointwise(spec);
  AlignedBuffer col(pointwise ? 0 : k * hw);

  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* src = input.data() + n * g.channels * g.in_h * g.in_w;
    if (!pointwise) im2col(src, g, spec, col.data());
    ConstMatrixMap cols(pointwise ? src : col.data(), static_cast<long>(k), static_cast<long>(hw));
    MatrixMap dst(out.data() + n * spec.out_channels * hw, static_cast<long>(spec.out_channels),
                  static_cast<long>(hw));
    dst.noalias() = w * cols;
    for (std::size_t o = 0; o < spec.out_channels; ++o) dst.row(static_cast<long>(o)).array() += bias[o];
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights,
                          const ConvSpec& spec) {
  const ConvGeometry g = check_conv(input, weights, spec);
  require_shape(grad_out, {g.batch, spec.out_channels, g.out_h, g.out_w}, "conv2d_backward grad_out");

  const std::size_t k = spec.fan_in();
  const std::size_t hw = g.out_h * g.out_w;
  ConvGrads grads{Tensor::zeros_like(input), Tensor::zeros_like(weights), Tensor({spec.out_channels})};
  ConstMatrixMap w(weights.data(), static_cast<long>(spec.out_channels), static_cast<long>(k));
  MatrixMap gw(grads.weights.data(), static_cast<long>(spec.out_channels), static_cast<long>(k));
  const bool pointwise = is_pointwise(spec);
  AlignedBuffer col(pointwise ? 0 : k * hw);
  AlignedBuffer grad_col(pointwise ? 0 : k * hw);

  for (std::size_t n = 0; n < g.batch; ++n) {
    const std::size_t in_offset = n * g.channels * g.in_h * g.in_w;
    const double* src = input.data() + in_offset;
    if (!pointwise) im2col(src, g, spec, col.data());
    ConstMatrixMap cols(pointwise ? src : col.data(), static_cast<long>(k), static_cast<long>(hw));
    ConstMatrixMap go(grad_out.data() + n * spec.out_channels * hw, static_cast<long>(spec.out_channels),
                      static_cast<long>(hw));
    gw.noalias() += go * cols.transpose();
    for (std::size_t o = 0; o < spec.out_channels; ++o) grads.bias[o] += go.row(static_cast<long>(o)).sum();
    if (pointwise) {
      MatrixMap gi(grads.input.data() + in_offset, static_cast<long>(k), static_cast<long>(hw));
      gi.noalias() = w.transpose() * go;
    } else {
      MatrixMap gc(grad_col.data(), static_cast<long>(k), static_cast<long>(hw));
      gc.noalias() = w.transpose() * go;
      col2im(grad_col.data(), g, spec, grads.input.data() + in_offset);
    }
  }
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
  require_shape(grad_out, input.shape(), "relu_backward grad_out");
  Tensor grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  return grad;
}

namespace {

struct PoolGeometry {
  std::size_t n, c, h, w, oh, ow;
};

PoolGeometry check_pool(const Tensor& input, std::size_t window, std::size_t stride) {
  require_nchw(input, "maxpool2d input");
  if (window == 0 || stride == 0) throw std::invalid_argument("maxpool2d: window and stride must be positive");
  PoolGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), 0, 0};
  if (g.h < window || g.w < window)
    throw std::invalid_argument("maxpool2d: window " + std::to_string(window) + " exceeds input " +
                                shape_string(input.shape()));
  g.oh = (g.h - window) / stride + 1;
  g.ow = (g.w - window) / stride + 1;
  return g;
}

// Flat index of the first maximum within the window in row-major scan order.
std::size_t window_argmax(const double* plane, const PoolGeometry& g, std::size_t oy, std::size_t ox,
                          std::size_t window, std::size_t stride) {
  std::size_t best = (oy * stride) * g.w + ox * stride;
  for (std::size_t i = 0; i < window; ++i) {
    for (std::size_t j = 0; j < window; ++j) {
      const std::size_t idx = (oy * stride + i) * g.w + ox * stride + j;
      if (plane[idx] > plane[best]) best = idx;
    }
  }
  return best;
}

}  // namespace

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  const PoolGeometry g = check_pool(input, window, stride);
  Tensor out({g.n, g.c, g.oh, g.ow});
  double* dst = out.data();
  for (std::size_t p = 0; p < g.n * g.c; ++p) {
    const double* plane = input.data() + p * g.h * g.w;
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) *dst++ = plane[window_argmax(plane, g, oy, ox, window, stride)];
  }
  return out;
}

Tensor maxpool2d_backward(const Tensor& grad_out, const Tensor& input, std::size_t window,
                          std::size_t stride) {
  const PoolGeometry g = check_pool(input, window, stride);
  require_shape(grad_out, {g.n, g.c, g.oh, g.ow}, "maxpool2d_backward grad_out");
  Tensor grad = Tensor::zeros_like(input);
  const double* go = grad_out.data();
  for (std::size_t p = 0; p < g.n * g.c; ++p) {
    const double* plane = input.data() + p * g.h * g.w;
    double* gplane = grad.data() + p * g.h * g.w;
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) gplane[window_argmax(plane, g, oy, ox, window, stride)] += *go++;
  }
  return grad;
}

Tensor global_avg_pool(const Tensor& input) {
  require_nchw(input, "global_avg_pool input");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  Tensor out({input.dim(0), input.dim(1), 1, 1});
  for (std::size_t p = 0; p < planes; ++p) {
    double sum = 0.0;
    const double* plane = input.data() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) sum += plane[i];
    out[p] = sum / static_cast<double>(hw);
  }
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape) {
  if (input_shape.size() != 4) throw std::invalid_argument("global_avg_pool_backward: input must be NCHW");
  require_shape(grad_out, {input_shape[0], input_shape[1], 1, 1}, "global_avg_pool_backward grad_out");
  Tensor grad(input_shape);
  const std::size_t hw = input_shape[2] * input_shape[3];
  const double scale = 1.0 / static_cast<double>(hw);
  for (std::size_t p = 0; p < grad_out.size(); ++p) {
    double* plane = grad.data() + p * hw;
    std::fill(plane, plane + hw, grad_out[p] * scale);
  }
  return grad;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weights, 2, "linear weights");
  if (input.dim(1) != weights.dim(0))
    throw std::invalid_argument(dim_error("linear", "input features", input.dim(1), weights.dim(0)));
  require_shape(bias, {weights.dim(1)}, "linear bias");
  const long n = static_cast<long>(input.dim(0));
  const long f = static_cast<long>(weights.dim(0));
  const long g = static_cast<long>(weights.dim(1));
  Tensor out({input.dim(0), weights.dim(1)});
  MatrixMap y(out.data(), n, g);
  y.noalias() = ConstMatrixMap(input.data(), n, f) * ConstMatrixMap(weights.data(), f, g);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < g; ++j) y(i, j) += bias[static_cast<std::size_t>(j)];
  return out;
}

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights) {
  require_rank(input, 2, "linear_backward input");
  require_rank(weights, 2, "linear_backward weights");
  require_shape(grad_out, {input.dim(0), weights.dim(1)}, "linear_backward grad_out");
  const long n = static_cast<long>(input.dim(0));
  const long f = static_cast<long>(weights.dim(0));
  const long g = static_cast<long>(weights.dim(1));
  LinearGrads grads{Tensor::zeros_like(input), Tensor::zeros_like(weights), Tensor({weights.dim(1)})};
  ConstMatrixMap go(grad_out.data(), n, g);
  MatrixMap(grads.input.data(), n, f).noalias() = go * ConstMatrixMap(weights.data(), f, g).transpose();
  MatrixMap(grads.weights.data(), f, g).noalias() = ConstMatrixMap(input.data(), n, f).transpose() * go;
  for (long j = 0; j < g; ++j) grads.bias[static_cast<std::size_t>(j)] = go.col(j).sum();
  return grads;
}

Tensor softmax(const Tensor& input) {
  if (input.rank() == 0) throw std::invalid_argument("softmax: empty tensor");
  const std::size_t k = input.shape().back();
  Tensor out = input;
  for (std::size_t row = 0; row < input.size() / k; ++row) {
    double* v = out.data() + row * k;
    const double m = *std::max_element(v, v + k);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      v[i] = std::exp(v[i] - m);
      sum += v[i];
    }
    for (std::size_t i = 0; i < k; ++i) v[i] /= sum;
  }
  return out;
}

Tensor resize_nearest(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_nchw(input, "resize_nearest input");
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize_nearest: target must be positive");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  Tensor out({input.dim(0), input.dim(1), out_h, out_w});
  double* dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = input.data() + p * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t sy = i * h / out_h;
      for (std::size_t j = 0; j < out_w; ++j) *dst++ = plane[sy * w + j * w / out_w];
    }
  }
  return out;
}

Tensor resize_nearest_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w) {
  require_nchw(grad_out, "resize_nearest_backward grad_out");
  const std::size_t planes = grad_out.dim(0) * grad_out.dim(1);
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  Tensor grad({grad_out.dim(0), grad_out.dim(1), in_h, in_w});
  const double* src = grad_out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    double* plane = grad.data() + p * in_h * in_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t sy = i * in_h / out_h;
      for (std::size_t j = 0; j < out_w; ++j) plane[sy * in_w + j * in_w / out_w] += *src++;
    }
  }
  return grad;
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  require_nchw(input, "upsample_nearest input");
  if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  return resize_nearest(input, input.dim(2) * factor, input.dim(3) * factor);
}

Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor) {
  require_nchw(grad_out, "upsample_nearest_backward grad_out");
  if (factor == 0 || grad_out.dim(2) % factor || grad_out.dim(3) % factor)
    throw std::invalid_argument("upsample_nearest_backward: extent not divisible by factor");
  return resize_nearest_backward(grad_out, grad_out.dim(2) / factor, grad_out.dim(3) / factor);
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Tensor& first = *parts.front();
  require_nchw(first, "concat_channels input");
  std::size_t channels = 0;
  for (const Tensor* t : parts) {
    require_nchw(*t, "concat_channels input");
    if (t->dim(0) != first.dim(0) || t->dim(2) != first.dim(2) || t->dim(3) != first.dim(3))
      throw std::invalid_argument("concat_channels: " + shape_string(t->shape()) + " incompatible with " +
                                  shape_string(first.shape()));
    channels += t->dim(1);
  }
  const std::size_t hw = first.dim(2) * first.dim(3);
  Tensor out({first.dim(0), channels, first.dim(2), first.dim(3)});
  double* dst = out.data();
  for (std::size_t n = 0; n < first.dim(0); ++n) {
    for (const Tensor* t : parts) {
      const std::size_t len = t->dim(1) * hw;
      const double* src = t->data() + n * len;
      dst = std::copy(src, src + len, dst);
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& joined, const std::vector<std::size_t>& channels) {
  require_nchw(joined, "split_channels input");
  std::size_t total = 0;
  for (auto c : channels) total += c;
  if (total != joined.dim(1))
    throw std::invalid_argument(dim_error("split_channels", "channel count", joined.dim(1), total));
  const std::size_t n = joined.dim(0), hw = joined.dim(2) * joined.dim(3);
  std::vector<Tensor> parts;
  for (auto c : channels) parts.emplace_back(Shape{n, c, joined.dim(2), joined.dim(3)});
  const double* src = joined.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::size_t len = channels[i] * hw;
      std::copy(src, src + len, parts[i].data() + b * len);
      src += len;
    }
  }
  return parts;
}

}  // namespace follipipe
