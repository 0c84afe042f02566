#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace follipipe {

/// counts[i * n_cl + j] = pixels of true class i predicted as class j.
struct ConfusionMatrix {
  std::size_t n_cl = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t classes = 2) : n_cl(classes), counts(classes * classes, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * n_cl + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_cl + pred]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t pred) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

enum class Criterion : std::uint8_t { PixelAccuracy, MeanAccuracy, MeanIoU, FrequencyWeightedIoU };

inline constexpr Criterion kAllCriteria[] = {Criterion::PixelAccuracy, Criterion::MeanAccuracy, Criterion::MeanIoU,
                                             Criterion::FrequencyWeightedIoU};

/// "pAcc", "mAcc", "mIoU", "fwIoU".
std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view text);

/// Throws std::invalid_argument on length mismatch or a label >= n_cl.
ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::size_t n_cl);

/// With t_i = row sums and c_j = column sums:
///   pAcc  = sum n_ii / sum t_i
///   mAcc  = mean_i n_ii / t_i
///   mIoU  = mean_i n_ii / (t_i + c_i - n_ii)
///   fwIoU = sum_i t_i * IoU_i / sum t_i
/// Classes with t_i == 0 are left out of the mAcc and mIoU means. Throws on an
/// all-zero matrix.
double criterion_value(const ConfusionMatrix& cm, Criterion which);

struct CriteriaSet {
  double pacc = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  double fwiou = 0.0;

  double get(Criterion c) const;
};

CriteriaSet all_criteria(const ConfusionMatrix& cm);

}  // namespace follipipe
