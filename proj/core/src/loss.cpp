#include "follipipe/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace follipipe {
namespace {

// Softmax cross entropy over `k` classes whose logits sit `stride` apart.
// Writes (softmax - onehot) * scale into grad and returns the floored loss.
double softmax_ce(const double* z, double* grad, std::size_t k, std::size_t stride, std::size_t target, double scale) {
  double m = z[0];
  for (std::size_t c = 1; c < k; ++c) m = std::max(m, z[c * stride]);
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c * stride] - m);
  const double log_q = z[target * stride] - m - std::log(sum);
  const double log_floor = std::log(kProbabilityFloor);
  if (log_q < log_floor) {
    for (std::size_t c = 0; c < k; ++c) grad[c * stride] = 0.0;
    return -log_floor;
  }
  for (std::size_t c = 0; c < k; ++c)
    grad[c * stride] = (std::exp(z[c * stride] - m) / sum - (c == target ? 1.0 : 0.0)) * scale;
  return -log_q;
}

}  // namespace

CrossEntropy seg_cross_entropy(const Tensor& seg_logits, std::span<const std::uint8_t> gt) {
  require_rank(seg_logits, 4, "seg_cross_entropy logits");
  const std::size_t n = seg_logits.dim(0), k = seg_logits.dim(1);
  const std::size_t hw = seg_logits.dim(2) * seg_logits.dim(3);
  if (gt.size() != n * hw)
    throw std::invalid_argument("seg_cross_entropy: " + std::to_string(gt.size()) + " labels for " +
                                std::to_string(n * hw) + " pixels");
  CrossEntropy out{0.0, Tensor::zeros_like(seg_logits)};
  const double scale = 1.0 / static_cast<double>(n * hw);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      const std::uint8_t t = gt[b * hw + i];
      if (t >= k) throw std::invalid_argument("seg_cross_entropy: label " + std::to_string(t) + " out of range");
      const std::size_t off = b * k * hw + i;
      out.loss += softmax_ce(seg_logits.data() + off, out.grad.data() + off, k, hw, t, scale);
    }
  }
  out.loss *= scale;
  return out;
}

CrossEntropy cls_cross_entropy(const Tensor& class_logits, std::span<const std::uint8_t> labels) {
  require_rank(class_logits, 2, "cls_cross_entropy logits");
  const std::size_t n = class_logits.dim(0), k = class_logits.dim(1);
  if (labels.size() != n)
    throw std::invalid_argument("cls_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(n));
  CrossEntropy out{0.0, Tensor::zeros_like(class_logits)};
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    if (labels[b] >= k) throw std::invalid_argument("cls_cross_entropy: label out of range");
    out.loss += softmax_ce(class_logits.data() + b * k, out.grad.data() + b * k, k, 1, labels[b], scale);
  }
  out.loss *= scale;
  return out;
}

std::vector<std::uint8_t> seg_argmax(const Tensor& seg_logits) {
  require_rank(seg_logits, 4, "seg_argmax logits");
  const std::size_t n = seg_logits.dim(0), k = seg_logits.dim(1);
  const std::size_t hw = seg_logits.dim(2) * seg_logits.dim(3);
  std::vector<std::uint8_t> labels(n * hw);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      const double* z = seg_logits.data() + b * k * hw + i;
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (z[c * hw] > z[best * hw]) best = c;
      labels[b * hw + i] = static_cast<std::uint8_t>(best);
    }
  }
  return labels;
}

std::vector<std::uint8_t> class_argmax(const Tensor& class_logits) {
  require_rank(class_logits, 2, "class_argmax logits");
  const std::size_t n = class_logits.dim(0), k = class_logits.dim(1);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = class_logits.data() + b * k;
    labels[b] = static_cast<std::uint8_t>(std::max_element(z, z + k) - z);
  }
  return labels;
}

AdaptiveLoss adaptive_loss(const Tensor& seg_logits, std::span<const std::uint8_t> gt, Criterion which) {
  CrossEntropy ce = seg_cross_entropy(seg_logits, gt);
  const auto pred = seg_argmax(seg_logits);
  const ConfusionMatrix cm = confusion(pred, gt, seg_logits.dim(1));
  AdaptiveLoss out;
  out.cross_entropy = ce.loss;
  out.m = std::clamp(criterion_value(cm, which), kCriterionFloor, 1.0);
  out.value = ce.loss / out.m;
  out.grad = std::move(ce.grad);
  out.grad *= 1.0 / out.m;
  return out;
}

double joint_loss(double adaptive, double cls, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("joint_loss: weight must lie in [0,1]");
  return w * adaptive + (1.0 - w) * cls;
}

}  // namespace follipipe
