#include "follipipe/stain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace follipipe {
namespace {

constexpr double kRgbToLms[3][3] = {
    {0.3811, 0.5783, 0.0402}, {0.1967, 0.7244, 0.0782}, {0.0241, 0.1288, 0.8444}};

// Exact inverse of kRgbToLms. The published 4-digit inverse is off by up to
// 0.0072 and breaks the one-level round trip on saturated colours.
const Eigen::Matrix3d kLmsToRgb = [] {
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = kRgbToLms[i][j];
  return Eigen::Matrix3d(m.inverse());
}();

const double kInvSqrt3 = 1.0 / std::sqrt(3.0);
const double kInvSqrt6 = 1.0 / std::sqrt(6.0);
const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

}  // namespace

std::array<double, 3> rgb_to_lab(const Rgb& rgb) {
  double c[3];
  for (int i = 0; i < 3; ++i) c[i] = std::max(rgb[i] / 255.0, 1.0 / 255.0);
  double lg[3];
  for (int i = 0; i < 3; ++i)
    lg[i] = std::log10(kRgbToLms[i][0] * c[0] + kRgbToLms[i][1] * c[1] + kRgbToLms[i][2] * c[2]);
  return {kInvSqrt3 * (lg[0] + lg[1] + lg[2]), kInvSqrt6 * (lg[0] + lg[1] - 2.0 * lg[2]),
          kInvSqrt2 * (lg[0] - lg[1])};
}

std::array<double, 3> lab_to_rgb_linear(const std::array<double, 3>& lab) {
  const double a = lab[0] * kInvSqrt3;  // sqrt3/3 == 1/sqrt3
  const double b = lab[1] * kInvSqrt6;
  const double g = lab[2] * kInvSqrt2;
  const double lms[3] = {std::pow(10.0, a + b + g), std::pow(10.0, a + b - g), std::pow(10.0, a - 2.0 * b)};
  std::array<double, 3> rgb{};
  for (int i = 0; i < 3; ++i)
    rgb[i] = 255.0 * (kLmsToRgb(i, 0) * lms[0] + kLmsToRgb(i, 1) * lms[1] + kLmsToRgb(i, 2) * lms[2]);
  return rgb;
}

Rgb lab_to_rgb(const std::array<double, 3>& lab) {
  const auto v = lab_to_rgb_linear(lab);
  return {to_byte(v[0]), to_byte(v[1]), to_byte(v[2])};
}

Tensor rgb_to_decorrelated(const RgbImage& image) {
  const std::size_t n = image.width * image.height;
  if (n == 0 || image.pixels.size() != n) throw std::invalid_argument("rgb_to_decorrelated: empty or inconsistent image");
  Tensor out({3, image.height, image.width});
  for (std::size_t i = 0; i < n; ++i) {
    const auto lab = rgb_to_lab(image.pixels[i]);
    for (std::size_t c = 0; c < 3; ++c) out[c * n + i] = lab[c];
  }
  return out;
}

RgbImage decorrelated_to_rgb(const Tensor& lab, std::size_t width, std::size_t height) {
  require_shape(lab, {3, height, width}, "decorrelated_to_rgb");
  const std::size_t n = width * height;
  RgbImage img(width, height);
  for (std::size_t i = 0; i < n; ++i) img.pixels[i] = lab_to_rgb({lab[i], lab[n + i], lab[2 * n + i]});
  return img;
}

ChannelStats channel_stats(const Tensor& decorrelated) {
  require_rank(decorrelated, 3, "channel_stats");
  if (decorrelated.dim(0) != 3) throw std::invalid_argument("channel_stats: expected 3 channels");
  const std::size_t n = decorrelated.dim(1) * decorrelated.dim(2);
  ChannelStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    const double* v = decorrelated.data() + c * n;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += v[i];
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += (v[i] - mean) * (v[i] - mean);
    s.mean[c] = mean;
    s.std[c] = std::sqrt(sq / static_cast<double>(n));
  }
  return s;
}

ChannelStats image_stats(const RgbImage& image) { return channel_stats(rgb_to_decorrelated(image)); }

Tensor transfer_decorrelated(const Tensor& lab, const ChannelStats& src, const ChannelStats& ref) {
  require_rank(lab, 3, "transfer_decorrelated");
  const std::size_t n = lab.dim(1) * lab.dim(2);
  Tensor out = lab;
  for (std::size_t c = 0; c < 3; ++c) {
    const double scale = ref.std[c] / std::max(src.std[c], kStdFloor);
    double* v = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) v[i] = (v[i] - src.mean[c]) * scale + ref.mean[c];
  }
  return out;
}

RgbImage reinhard_transfer(const RgbImage& src, const ChannelStats& ref) {
  const Tensor lab = rgb_to_decorrelated(src);
  return decorrelated_to_rgb(transfer_decorrelated(lab, channel_stats(lab), ref), src.width, src.height);
}

RgbImage reinhard_transfer(const RgbImage& src, const ChannelStats& src_stats, const ChannelStats& ref) {
  return decorrelated_to_rgb(transfer_decorrelated(rgb_to_decorrelated(src), src_stats, ref), src.width,
                             src.height);
}

}  // namespace follipipe
