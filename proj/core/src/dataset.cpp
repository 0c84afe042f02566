#include "follipipe/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace follipipe {

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "wsi-test"; }

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "wsi-test") return Split::WsiTest;
  throw std::invalid_argument("unknown split '" + std::string(text) + "' (expected train or wsi-test)");
}

std::vector<ManifestEntry> Manifest::select(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string head;
    fields >> head;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (head == "patch_size") {
      if (!(fields >> m.patch_size) || m.patch_size == 0) throw std::runtime_error(where + "invalid patch_size");
      continue;
    }
    std::string slide, mask, labels;
    if (!(fields >> slide >> mask >> labels)) throw std::runtime_error(where + "expected '<split> <slide> <mask> <labels>'");
    try {
      m.entries.push_back({parse_split(head), resolve(slide), resolve(mask), resolve(labels)});
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + e.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << "# follipipe dataset manifest\n";
  out << "patch_size " << manifest.patch_size << '\n';
  for (const auto& e : manifest.entries)
    out << to_string(e.split) << ' ' << e.slide.string() << ' ' << e.mask.string() << ' ' << e.labels.string() << '\n';
}

std::filesystem::path synth_dataset(std::uint64_t seed, const SynthDatasetOptions& options,
                                    const std::filesystem::path& out_dir) {
  if (options.n_slides == 0) throw std::invalid_argument("synth_dataset: n_slides must be >= 1");
  if (options.test_slides >= options.n_slides)
    throw std::invalid_argument("synth_dataset: test_slides must leave at least one training slide");
  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  manifest.patch_size = options.params.patch_size;
  for (std::size_t i = 0; i < options.n_slides; ++i) {
    const LabeledSlide slide = synth_slide(seed * 1000003ULL + i, options.params);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%02zu", i);
    ManifestEntry e;
    e.split = i + options.test_slides >= options.n_slides ? Split::WsiTest : Split::Train;
    e.slide = std::string("slide_") + stem + ".ppm";
    e.mask = std::string("mask_") + stem + ".pgm";
    e.labels = std::string("labels_") + stem + ".csv";
    write_ppm(out_dir / e.slide, slide.image);
    write_mask(out_dir / e.mask, slide.mask);
    write_patch_labels(out_dir / e.labels, slide.patch_labels);
    if (i == 0) {
      const std::size_t side = std::min({slide.image.width, slide.image.height, 4 * options.params.patch_size});
      write_ppm(out_dir / "reference.ppm", extract_patch(slide.image, PatchCoord{0, 0, 0, 0, side}));
    }
    manifest.entries.push_back(e);
  }
  const auto path = out_dir / "manifest.txt";
  write_manifest(path, manifest);
  return path;
}

Tensor image_to_tensor(const RgbImage& image) {
  Tensor t({1, 3, image.height, image.width});
  write_patch_input(image, t, 0);
  return t;
}

void write_patch_input(const RgbImage& patch, Tensor& batch, std::size_t index) {
  const std::size_t hw = patch.width * patch.height;
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != patch.height || batch.dim(3) != patch.width)
    throw std::invalid_argument("write_patch_input: batch shape " + shape_string(batch.shape()) +
                                " does not fit a " + std::to_string(patch.width) + "px patch");
  double* dst = batch.data() + index * 3 * hw;
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) dst[c * hw + i] = patch.pixels[i][c] / 127.5 - 1.0;
}

LoadedSlide load_slide(const ManifestEntry& entry, std::size_t patch_size) {
  LoadedSlide s{read_ppm(entry.slide), read_mask(entry.mask), read_patch_labels(entry.labels, patch_size)};
  if (s.mask.width != s.image.width || s.mask.height != s.image.height)
    throw std::runtime_error(entry.mask.string() + ": mask size differs from slide " + entry.slide.string());
  const auto grid = tile_grid(s.image.width, s.image.height, patch_size);
  if (s.labels.size() != grid.size())
    throw std::runtime_error(entry.labels.string() + ": " + std::to_string(s.labels.size()) + " labels for " +
                             std::to_string(grid.size()) + " grid patches");
  return s;
}

RgbImage normalize_slide(const RgbImage& slide, const ChannelStats& ref) {
  return reinhard_transfer(slide, image_stats(slide), ref);
}

std::vector<PatchSample> load_patches(const Manifest& manifest, Split split, const std::optional<ChannelStats>& ref) {
  std::vector<PatchSample> samples;
  const std::size_t p = manifest.patch_size;
  std::size_t slide_index = 0;
  for (const auto& entry : manifest.select(split)) {
    LoadedSlide s = load_slide(entry, p);
    if (ref) s.image = normalize_slide(s.image, *ref);
    for (const auto& lp : s.labels) {
      PatchSample sample;
      const RgbImage patch = extract_patch(s.image, lp.coord);
      const Tensor t = image_to_tensor(patch);
      sample.input.assign(t.values().begin(), t.values().end());
      sample.mask = extract_patch(s.mask, lp.coord).pixels;
      sample.label = lp.label;
      sample.slide = slide_index;
      sample.coord = lp.coord;
      samples.push_back(std::move(sample));
    }
    ++slide_index;
  }
  return samples;
}

}  // namespace follipipe
