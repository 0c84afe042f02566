#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>

#include "follipipe/criteria.hpp"
#include "follipipe/image.hpp"
#include "follipipe/model.hpp"
#include "follipipe/stain.hpp"

namespace follipipe {

struct RoutingCounts {
  std::size_t skipped_noninfo = 0;
  std::size_t skipped_colloid = 0;
  std::size_t segmented = 0;

  std::size_t total() const { return skipped_noninfo + skipped_colloid + segmented; }
  friend bool operator==(const RoutingCounts&, const RoutingCounts&) = default;
};

struct WsiReport {
  std::string slide;
  bool gated = true;
  std::size_t workers = 1;
  std::size_t patch_size = 0;
  std::size_t total_patches = 0;
  RoutingCounts routing;
  std::string stitched_mask;
  std::optional<double> wall_time_gated;
  std::optional<double> wall_time_ungated;
  std::optional<CriteriaSet> criteria;
};

/// JSON object with keys: slide, gated, workers, patch_size, total_patches,
/// routing{skipped_noninfo, skipped_colloid, segmented}, stitched_mask,
/// wall_time_gated_s, wall_time_ungated_s, criteria{pAcc, mAcc, mIoU, fwIoU}.
/// Absent optionals are written as null.
std::string to_json(const WsiReport& report);

struct InferOptions {
  bool gated = true;
  std::size_t workers = 1;
  /// Staining standard; patches are normalised with whole-slide source stats.
  std::optional<ChannelStats> ref;
  /// Also time an ungated pass over the same slide.
  bool compare_ungated = false;
};

struct WsiResult {
  WsiReport report;
  GrayImage mask;  ///< 1 = follicular; uncovered border pixels stay 0
};

/// Tiles the slide, classifies each patch from one stem pass, segments the
/// patches routed to the follicular path (all of them when ungated) and
/// stitches the masks. With `truth`, criteria are computed over the covered
/// region.
WsiResult infer_wsi(const RgbImage& slide, const HybridModel& model, const InferOptions& options,
                    const GrayImage* truth = nullptr);

}  // namespace follipipe
