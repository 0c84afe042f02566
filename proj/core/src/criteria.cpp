#include "follipipe/criteria.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace follipipe {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < n_cl; ++j) s += at(truth, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < n_cl; ++i) s += at(i, pred);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_cl != n_cl) throw std::invalid_argument("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::PixelAccuracy: return "pAcc";
    case Criterion::MeanAccuracy: return "mAcc";
    case Criterion::MeanIoU: return "mIoU";
    case Criterion::FrequencyWeightedIoU: return "fwIoU";
  }
  return "?";
}

Criterion parse_criterion(std::string_view text) {
  for (auto c : kAllCriteria)
    if (to_string(c) == text) return c;
  throw std::invalid_argument("unknown criterion '" + std::string(text) + "' (expected pAcc, mAcc, mIoU or fwIoU)");
}

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::size_t n_cl) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("confusion: " + std::to_string(pred.size()) + " predictions vs " +
                                std::to_string(truth.size()) + " labels");
  ConfusionMatrix cm(n_cl);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= n_cl || truth[i] >= n_cl)
      throw std::invalid_argument("confusion: label out of range at index " + std::to_string(i));
    ++cm.at(truth[i], pred[i]);
  }
  return cm;
}

double criterion_value(const ConfusionMatrix& cm, Criterion which) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("criterion_value: empty confusion matrix");
  double diag = 0.0, mean_acc = 0.0, mean_iou = 0.0, fw = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < cm.n_cl; ++i) {
    const double nii = static_cast<double>(cm.at(i, i));
    const double ti = static_cast<double>(cm.row_sum(i));
    diag += nii;
    if (ti == 0.0) continue;
    const double iou = nii / (ti + static_cast<double>(cm.col_sum(i)) - nii);
    ++present;
    mean_acc += nii / ti;
    mean_iou += iou;
    fw += ti * iou;
  }
  const double t = static_cast<double>(total);
  switch (which) {
    case Criterion::PixelAccuracy: return diag / t;
    case Criterion::MeanAccuracy: return mean_acc / static_cast<double>(present);
    case Criterion::MeanIoU: return mean_iou / static_cast<double>(present);
    case Criterion::FrequencyWeightedIoU: return fw / t;
  }
  throw std::invalid_argument("criterion_value: unknown criterion");
}

double CriteriaSet::get(Criterion c) const {
  switch (c) {
    case Criterion::PixelAccuracy: return pacc;
    case Criterion::MeanAccuracy: return macc;
    case Criterion::MeanIoU: return miou;
    case Criterion::FrequencyWeightedIoU: return fwiou;
  }
  return 0.0;
}

CriteriaSet all_criteria(const ConfusionMatrix& cm) {
  return {criterion_value(cm, Criterion::PixelAccuracy), criterion_value(cm, Criterion::MeanAccuracy),
          criterion_value(cm, Criterion::MeanIoU), criterion_value(cm, Criterion::FrequencyWeightedIoU)};
}

}  // namespace follipipe
