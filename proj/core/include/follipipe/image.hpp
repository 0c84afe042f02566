#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace follipipe {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB image, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Rgb> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, Rgb fill = {0, 0, 0}) : width(w), height(h), pixels(w * h, fill) {}

  Rgb& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  const Rgb& at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// 8-bit single-channel image. Masks store 0/1 in memory and are scaled to
/// 0/255 on disk.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

// Binary PPM (P6) / PGM (P5), maxval 255. Readers accept '#' comments.
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Mask I/O: any nonzero gray level reads as 1; 1 is written as 255.
GrayImage read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const GrayImage& mask);

}  // namespace follipipe
