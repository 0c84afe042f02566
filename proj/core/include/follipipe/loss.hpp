#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "follipipe/criteria.hpp"
#include "follipipe/tensor.hpp"

namespace follipipe {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kCriterionFloor = 1e-3;

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad;  ///< d loss / d logits
};

/// Mean over all N*P*P pixels of -log softmax(logits)[gt]. `gt` is laid out
/// [N,P,P] with values in {0,1}.
CrossEntropy seg_cross_entropy(const Tensor& seg_logits, std::span<const std::uint8_t> gt);

/// Mean over the batch of -log softmax(logits)[label], labels in [0,3).
CrossEntropy cls_cross_entropy(const Tensor& class_logits, std::span<const std::uint8_t> labels);

/// Per-pixel argmax over the class axis of [N,C,H,W] logits -> [N,H,W].
/// Ties resolve to the lower class index.
std::vector<std::uint8_t> seg_argmax(const Tensor& seg_logits);
/// Per-row argmax of [N,K] logits.
std::vector<std::uint8_t> class_argmax(const Tensor& class_logits);

struct AdaptiveLoss {
  double cross_entropy = 0.0;
  double m = 1.0;      ///< batch criterion value, clamped to [1e-3, 1]
  double value = 0.0;  ///< cross_entropy / m
  Tensor grad;         ///< (1/m) * d cross_entropy / d logits; m is held constant
};

/// Criterion-oriented adaptive loss: the segmentation cross entropy divided by
/// the batch value of `which`, computed on argmax predictions.
AdaptiveLoss adaptive_loss(const Tensor& seg_logits, std::span<const std::uint8_t> gt, Criterion which);

/// w * adaptive + (1 - w) * cls; w must lie in [0,1].
double joint_loss(double adaptive, double cls, double w);

struct LossReport {
  double cross_entropy = 0.0;
  double m = 1.0;
  double adaptive_loss = 0.0;
  double cls_loss = 0.0;
  double joint = 0.0;
};

}  // namespace follipipe
