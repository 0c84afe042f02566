#include "follipipe/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace follipipe {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const GradFn& fn, const std::vector<Tensor*>& inputs,
                           const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  const double f0 = fn(&analytic);
  if (analytic.size() != inputs.size())
    throw std::invalid_argument("grad_check: closure returned " + std::to_string(analytic.size()) +
                                " gradients for " + std::to_string(inputs.size()) + " inputs");
  for (std::size_t i = 0; i < inputs.size(); ++i) require_shape(analytic[i], inputs[i]->shape(), "grad_check gradient");

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  const double eps = options.epsilon;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = *inputs[i];
    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input && coords.size() > options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const double saved = x[c];
      x[c] = saved + eps;
      const double f_plus = fn(nullptr);
      x[c] = saved - eps;
      const double f_minus = fn(nullptr);
      x[c] = saved;
      if (options.skip_kinks) {
        const double forward = (f_plus - f0) / eps;
        const double backward = (f0 - f_minus) / eps;
        if (std::abs(forward - backward) >
            options.kink_tolerance * std::max(1.0, std::abs(forward) + std::abs(backward))) {
          ++result.skipped;
          continue;
        }
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic[i][c], numeric));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace follipipe
