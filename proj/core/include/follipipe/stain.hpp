#pragma once

#include <array>

#include "follipipe/image.hpp"
#include "follipipe/tensor.hpp"

// Reinhard colour transfer in the decorrelated l-alpha-beta space.
//
// Forward chain per pixel (channels scaled to [0,1], floored at 1/255):
//   LMS = A * RGB,   A = [0.3811 0.5783 0.0402; 0.1967 0.7244 0.0782; 0.0241 0.1288 0.8444]
//   L'  = log10(LMS)
//   lab = diag(1/sqrt3, 1/sqrt6, 1/sqrt2) * [1 1 1; 1 1 -2; 1 -1 0] * L'
// Inverse chain uses the exact inverse of A (the published rounded inverse
//   [4.4679 -3.5873 0.1193; -1.2186 2.3809 -0.1624; 0.0497 -0.2439 1.2045]
// is too coarse for a one-level round trip)
// and [1 1 1; 1 1 -1; 1 -2 0] * diag(sqrt3/3, sqrt6/6, sqrt2/2).
namespace follipipe {

struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};  ///< population standard deviation
};

inline constexpr double kStdFloor = 1e-6;

std::array<double, 3> rgb_to_lab(const Rgb& rgb);
/// Unclamped, unrounded inverse; values are on the 0..255 scale.
std::array<double, 3> lab_to_rgb_linear(const std::array<double, 3>& lab);
Rgb lab_to_rgb(const std::array<double, 3>& lab);

Tensor rgb_to_decorrelated(const RgbImage& image);
RgbImage decorrelated_to_rgb(const Tensor& lab, std::size_t width, std::size_t height);

ChannelStats channel_stats(const Tensor& decorrelated);
ChannelStats image_stats(const RgbImage& image);

/// out_c = (in_c - src.mean_c) * ref.std_c / max(src.std_c, 1e-6) + ref.mean_c
Tensor transfer_decorrelated(const Tensor& lab, const ChannelStats& src, const ChannelStats& ref);

/// Transfers `src` to the reference statistics using its own statistics.
RgbImage reinhard_transfer(const RgbImage& src, const ChannelStats& ref);
/// Same, with source statistics supplied by the caller (e.g. slide-level).
RgbImage reinhard_transfer(const RgbImage& src, const ChannelStats& src_stats, const ChannelStats& ref);

}  // namespace follipipe
