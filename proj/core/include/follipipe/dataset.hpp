#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "follipipe/slide.hpp"
#include "follipipe/stain.hpp"
#include "follipipe/tensor.hpp"

namespace follipipe {

enum class Split { Train, WsiTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestEntry {
  Split split = Split::Train;
  std::filesystem::path slide;
  std::filesystem::path mask;
  std::filesystem::path labels;
};

/// Line-oriented manifest:
///   # comment
///   patch_size <P>
///   <train|wsi-test> <slide.ppm> <mask.pgm> <labels.csv>
/// Relative paths resolve against the manifest's directory.
struct Manifest {
  std::size_t patch_size = 64;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Split split) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct SynthDatasetOptions {
  std::size_t n_slides = 15;
  std::size_t test_slides = 2;
  SynthParams params;
};

/// Writes slide_XX.ppm / mask_XX.pgm / labels_XX.csv, reference.ppm (a crop of
/// the first training slide used as the staining standard) and manifest.txt.
/// The last `test_slides` slides are marked wsi-test. Returns the manifest path.
std::filesystem::path synth_dataset(std::uint64_t seed, const SynthDatasetOptions& options,
                                    const std::filesystem::path& out_dir);

/// Maps RGB to the network input range [-1, 1].
Tensor image_to_tensor(const RgbImage& image);
/// Writes one patch into sample `index` of a [N,3,P,P] batch tensor.
void write_patch_input(const RgbImage& patch, Tensor& batch, std::size_t index);

struct PatchSample {
  std::vector<double> input;        ///< 3*P*P network input, CHW
  std::vector<std::uint8_t> mask;   ///< P*P ground truth
  PatchLabel label = PatchLabel::NonInfo;
  std::size_t slide = 0;
  PatchCoord coord;
};

struct LoadedSlide {
  RgbImage image;
  GrayImage mask;
  std::vector<LabeledPatch> labels;
};

LoadedSlide load_slide(const ManifestEntry& entry, std::size_t patch_size);

/// Stain-normalises a slide to `ref` using whole-slide source statistics.
RgbImage normalize_slide(const RgbImage& slide, const ChannelStats& ref);

/// Loads and tiles every entry of `split`, normalising each slide when a
/// reference is given.
std::vector<PatchSample> load_patches(const Manifest& manifest, Split split, const std::optional<ChannelStats>& ref);

}  // namespace follipipe
