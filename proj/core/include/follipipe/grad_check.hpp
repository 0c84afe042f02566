#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "follipipe/tensor.hpp"

namespace follipipe {

/// Evaluates a scalar objective at the current values of the checked inputs.
/// When `grads` is non-null it must also be filled with the analytic gradient
/// of the objective, one tensor per input, in input order.
using GradFn = std::function<double(std::vector<Tensor>* grads)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Upper bound on coordinates probed per input (0 = all). Probed
  /// coordinates are a seeded random subset.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
  /// Skip coordinates where the forward and backward one-sided differences
  /// disagree, i.e. the probe straddles a ReLU or max-pool kink. Only
  /// meaningful for piecewise-linear objectives.
  bool skip_kinks = false;
  double kink_tolerance = 1e-7;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Central-difference check. Relative error per coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|); the maximum is
/// returned. Inputs are restored before returning.
GradCheckResult grad_check(const GradFn& fn, const std::vector<Tensor*>& inputs,
                           const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric);

}  // namespace follipipe
