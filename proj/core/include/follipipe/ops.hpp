#pragma once

#include <cstddef>

#include "follipipe/tensor.hpp"

// Stateless forward/backward kernels. Every function is pure: the backward
// variants take whatever forward inputs they need explicitly.
namespace follipipe {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;

  static ConvSpec square(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                         std::size_t padding = 0, std::size_t dilation = 1) {
    return {in, out, kernel, kernel, stride, padding, dilation};
  }

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  std::size_t fan_in() const { return in_channels * kernel_h * kernel_w; }
  /// Output extent along one axis; throws if the result would be < 1.
  std::size_t output_extent(std::size_t input, std::size_t kernel) const;
  void validate() const;
};

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, const ConvSpec& spec);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights,
                          const ConvSpec& spec);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& grad_out, const Tensor& input);

/// Windowed max. Ties resolve to the first element in row-major scan order,
/// and backward routes the gradient there.
Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride);
Tensor maxpool2d_backward(const Tensor& grad_out, const Tensor& input, std::size_t window,
                          std::size_t stride);

Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape);

/// input [N,F] x weights [F,G] + bias [G] -> [N,G].
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct LinearGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& input, const Tensor& weights);

/// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& input);

/// Nearest-neighbour resize of the two spatial axes: out(i,j) = in(i*H/oh, j*W/ow).
Tensor resize_nearest(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor resize_nearest_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w);

Tensor upsample_nearest(const Tensor& input, std::size_t factor);
Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor);

/// Channel-wise concatenation of NCHW tensors with equal N, H, W.
Tensor concat_channels(const std::vector<const Tensor*>& parts);
/// Inverse of concat_channels for gradients: splits [N, sum(C_i), H, W].
std::vector<Tensor> split_channels(const Tensor& joined, const std::vector<std::size_t>& channels);

}  // namespace follipipe
