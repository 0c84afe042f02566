#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "follipipe/model.hpp"

namespace follipipe {

inline constexpr double kGradCheckTolerance = 1e-5;

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::size_t seeds = 0;

  /// Also requires that kink skipping left most coordinates checked.
  bool passed() const { return checked > skipped && max_relative_error < kGradCheckTolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed() const;
  std::string format() const;
};

/// Small topology used for the composed-model check.
ModelConfig gradcheck_model_config();

/// Finite-difference checks of every layer type, the losses, a residual block
/// and the composed hybrid model, each over `seeds` random instances.
GradCheckReport gradcheck_suite(std::size_t seeds = 20);

}  // namespace follipipe
