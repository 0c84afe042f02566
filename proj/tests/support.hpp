#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "follipipe/rng.hpp"
#include "follipipe/tensor.hpp"

namespace testing {

inline follipipe::Tensor random_tensor(const follipipe::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                       double hi = 1.0) {
  follipipe::Tensor t(shape);
  for (double& v : t.values()) v = follipipe::uniform(rng, lo, hi);
  return t;
}

inline double dot(const follipipe::Tensor& a, const follipipe::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("follipipe_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
