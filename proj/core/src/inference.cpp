#include "follipipe/inference.hpp"

#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>
#include <vector>

#include "json.hpp"

#include "follipipe/dataset.hpp"
#include "follipipe/loss.hpp"
#include "follipipe/slide.hpp"

namespace follipipe {

namespace {

struct PassResult {
  std::vector<GrayImage> masks;
  std::vector<PatchLabel> routes;
  double seconds = 0.0;
};

PassResult run_pass(const RgbImage& slide, const std::vector<PatchCoord>& grid, const HybridModel& model,
                    bool gated, std::size_t workers, const std::optional<ChannelStats>& src,
                    const std::optional<ChannelStats>& ref) {
  const std::size_t p = model.config().patch_size;
  PassResult out;
  out.masks.resize(grid.size());
  out.routes.resize(grid.size());
  std::atomic<std::size_t> next{0};

  const auto worker = [&] {
    Tensor input({1, 3, p, p});
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      RgbImage patch = extract_patch(slide, grid[i]);
      if (ref) patch = reinhard_transfer(patch, *src, *ref);
      write_patch_input(patch, input, 0);
      const Tensor shared = model.stem_forward(input);
      const auto label = static_cast<PatchLabel>(class_argmax(model.classify(shared))[0]);
      out.routes[i] = label;
      GrayImage mask(p, p, 0);
      if (!gated || label == PatchLabel::Follicular) {
        const TrunkOutput trunk = model.trunk_forward(shared);
        mask.pixels = seg_argmax(model.segment(trunk.features, trunk.lowscale));
      }
      out.masks[i] = std::move(mask);
    }
  };

  const auto start = std::chrono::steady_clock::now();
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace

WsiResult infer_wsi(const RgbImage& slide, const HybridModel& model, const InferOptions& options,
                    const GrayImage* truth) {
  const std::size_t p = model.config().patch_size;
  const auto grid = tile_grid(slide.width, slide.height, p);
  if (grid.empty())
    throw std::invalid_argument("slide " + std::to_string(slide.width) + "x" + std::to_string(slide.height) +
                                " is smaller than one " + std::to_string(p) + "px patch");
  if (truth && (truth->width != slide.width || truth->height != slide.height))
    throw std::invalid_argument("ground-truth mask size differs from slide");
  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  std::optional<ChannelStats> src;
  if (options.ref) src = image_stats(slide);

  PassResult pass = run_pass(slide, grid, model, options.gated, workers, src, options.ref);

  WsiResult result;
  WsiReport& r = result.report;
  r.gated = options.gated;
  r.workers = workers;
  r.patch_size = p;
  r.total_patches = grid.size();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!options.gated || pass.routes[i] == PatchLabel::Follicular) ++r.routing.segmented;
    else if (pass.routes[i] == PatchLabel::Colloid) ++r.routing.skipped_colloid;
    else ++r.routing.skipped_noninfo;
  }
  (options.gated ? r.wall_time_gated : r.wall_time_ungated) = pass.seconds;
  if (options.compare_ungated && options.gated)
    r.wall_time_ungated = run_pass(slide, grid, model, false, workers, src, options.ref).seconds;

  std::vector<std::pair<PatchCoord, GrayImage>> tiles;
  tiles.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) tiles.emplace_back(grid[i], std::move(pass.masks[i]));
  result.mask = stitch(tiles, slide.width, slide.height);

  if (truth) {
    ConfusionMatrix cm(kSegClasses);
    for (const auto& c : grid)
      cm += confusion(extract_patch(result.mask, c).pixels, extract_patch(*truth, c).pixels, kSegClasses);
    r.criteria = all_criteria(cm);
  }
  return result;
}

std::string to_json(const WsiReport& r) {
  using nlohmann::json;
  const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["slide"] = r.slide;
  j["gated"] = r.gated;
  j["workers"] = r.workers;
  j["patch_size"] = r.patch_size;
  j["total_patches"] = r.total_patches;
  j["routing"] = {{"skipped_noninfo", r.routing.skipped_noninfo},
                  {"skipped_colloid", r.routing.skipped_colloid},
                  {"segmented", r.routing.segmented}};
  j["stitched_mask"] = r.stitched_mask;
  j["wall_time_gated_s"] = opt(r.wall_time_gated);
  j["wall_time_ungated_s"] = opt(r.wall_time_ungated);
  if (r.criteria) {
    j["criteria"] = {{"pAcc", r.criteria->pacc}, {"mAcc", r.criteria->macc}, {"mIoU", r.criteria->miou},
                     {"fwIoU", r.criteria->fwiou}};
  } else {
    j["criteria"] = nullptr;
  }
  return j.dump(2) + "\n";
}

}  // namespace follipipe
