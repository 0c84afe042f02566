#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "follipipe/image.hpp"

namespace follipipe {

/// Grid cell of a non-overlapping tiling: x == col * size, y == row * size.
struct PatchCoord {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t size = 0;

  static PatchCoord at(std::size_t row, std::size_t col, std::size_t size) {
    return {row, col, col * size, row * size, size};
  }
  friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
};

enum class PatchLabel : std::uint8_t { Follicular = 0, Colloid = 1, NonInfo = 2 };
inline constexpr std::size_t kPatchClasses = 3;

std::string_view to_string(PatchLabel label);
PatchLabel parse_patch_label(std::string_view text);

struct LabeledPatch {
  PatchCoord coord;
  PatchLabel label;
  friend bool operator==(const LabeledPatch&, const LabeledPatch&) = default;
};

struct LabeledSlide {
  RgbImage image;
  GrayImage mask;     ///< 1 = follicular
  GrayImage colloid;  ///< 1 = colloid (generator ground truth; not persisted)
  std::vector<LabeledPatch> patch_labels;
};

/// Full patches only, row-major; partial border strips are dropped.
std::vector<PatchCoord> tile_grid(std::size_t width, std::size_t height, std::size_t patch_size);

RgbImage extract_patch(const RgbImage& slide, const PatchCoord& coord);
GrayImage extract_patch(const GrayImage& slide, const PatchCoord& coord);
void insert_patch(RgbImage& slide, const PatchCoord& coord, const RgbImage& patch);

/// Assembles a slide mask; uncovered pixels stay 0. Throws on overlapping or
/// out-of-bounds coords and on mask/coord size mismatch.
GrayImage stitch(const std::vector<std::pair<PatchCoord, GrayImage>>& masks, std::size_t width,
                 std::size_t height);

/// Fraction of nonzero pixels inside the patch.
double coverage(const GrayImage& map, const PatchCoord& coord);

/// Follicular iff follicle coverage >= follicle_threshold; otherwise Colloid
/// iff colloid coverage (colloid and not follicle) >= colloid_threshold;
/// otherwise NonInfo.
std::vector<LabeledPatch> compute_patch_labels(const GrayImage& mask, const GrayImage& colloid,
                                               std::size_t patch_size, double follicle_threshold,
                                               double colloid_threshold);

struct SynthParams {
  std::size_t width = 512;
  std::size_t height = 512;
  std::size_t patch_size = 64;
  std::size_t n_follicle_clusters = 3;
  std::size_t n_colloid_blobs = 4;
  /// Upper bound on the fraction of Follicular patches.
  double follicular_fraction_target = 0.10;
  double follicle_threshold = 0.05;  ///< T_f
  double colloid_threshold = 0.10;  ///< T_c
  /// Cluster placements that leave a patch with follicle coverage in
  /// (0, label_margin * T_f) are redrawn, and colloid covering a patch by
  /// less than label_margin * T_c is trimmed from it, so labels have a margin.
  double label_margin = 2.0;
  double noise_level = 6.0;   ///< per-pixel Gaussian noise, 8-bit units
  double stain_jitter = 0.2;  ///< per-slide relative stain intensity spread
};

/// Deterministic in (seed, params). Throws std::invalid_argument when the
/// requested geometry cannot be realised.
LabeledSlide synth_slide(std::uint64_t seed, const SynthParams& params);

void write_patch_labels(const std::filesystem::path& path, const std::vector<LabeledPatch>& labels);
std::vector<LabeledPatch> read_patch_labels(const std::filesystem::path& path, std::size_t patch_size);

}  // namespace follipipe
