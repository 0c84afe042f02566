#include <fstream>
#include <iterator>

#include "doctest.h"
#include "follipipe/checkpoint.hpp"
#include "follipipe/config.hpp"
#include "follipipe/dataset.hpp"
#include "follipipe/inference.hpp"
#include "follipipe/train.hpp"
#include "support.hpp"

using namespace follipipe;
namespace fs = std::filesystem;

namespace {

SynthDatasetOptions small_dataset() {
  SynthDatasetOptions o;
  o.n_slides = 4;
  o.test_slides = 1;
  o.params.width = 128;
  o.params.height = 128;
  o.params.patch_size = 32;
  o.params.n_follicle_clusters = 1;
  o.params.n_colloid_blobs = 1;
  return o;
}

ModelConfig small_model() {
  ModelConfig c;
  c.patch_size = 32;
  c.stem_width = 4;
  c.stage_widths = {6, 8, 8};
  c.blocks_per_stage = 1;
  c.classifier_conv_width = 4;
  c.classifier_hidden = 6;
  c.aspp_width = 4;
  c.fusion_width = 6;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TrainConfig small_train(const fs::path& dir, const fs::path& manifest) {
  TrainConfig c;
  c.manifest = manifest;
  c.model = small_model();
  c.epochs = 1;
  c.steps_per_epoch = 4;
  c.batch_size = 4;
  c.checkpoint = dir / "model.ckpt";
  c.metrics = dir / "metrics.csv";
  c.ref_patch = manifest.parent_path() / "reference.ppm";
  return c;
}

void set_param(HybridModel& m, const std::string& name, double value) {
  for (Parameter* p : m.parameters())
    if (p->name == name) {
      p->value.fill(value);
      return;
    }
  FAIL("no parameter " << name);
}

// Classifier that always answers `label`.
void force_class(HybridModel& m, PatchLabel label) {
  set_param(m, "classifier.fc2.weight", 0.0);
  set_param(m, "classifier.fc2.bias", 0.0);
  for (Parameter* p : m.parameters())
    if (p->name == "classifier.fc2.bias") p->value[static_cast<std::size_t>(label)] = 10.0;
}

}  // namespace

TEST_CASE("loss mode text") {
  CHECK(parse_loss_mode("plain_ce") == LossMode{});
  CHECK(parse_loss_mode("adaptive:fwIoU") == LossMode{true, Criterion::FrequencyWeightedIoU});
  CHECK(to_string(LossMode{true, Criterion::MeanAccuracy}) == "adaptive:mAcc");
  CHECK_THROWS(parse_loss_mode("adaptive:dice"));
  CHECK_THROWS(parse_loss_mode("focal"));
}

TEST_CASE("train config file") {
  const auto dir = testing::scratch_dir("config");
  std::ofstream(dir / "c.txt") << "# run\nseed = 42\nepochs=3\nlearning_rate = 0.5 # inline\nloss_mode = adaptive:pAcc\n"
                                  "manifest = data/manifest.txt\nstage_widths = 8, 9, 10\naspp_rates = 1,3,5\n"
                                  "patch_size = 32\n";
  const TrainConfig c = read_train_config(dir / "c.txt");
  CHECK(c.seed == 42);
  CHECK(c.epochs == 3);
  CHECK(c.learning_rate == 0.5);
  CHECK(c.loss_mode == LossMode{true, Criterion::PixelAccuracy});
  CHECK(c.manifest == dir / "data/manifest.txt");
  CHECK(c.model.stage_widths == std::array<std::size_t, 3>{8, 9, 10});
  CHECK(c.model.aspp_rates == std::array<std::size_t, 3>{1, 3, 5});
  CHECK(c.patch_size() == 32);
  CHECK(c.joint_weight == 0.5);

  // Every field survives a format/parse round trip once paths are resolved.
  std::ofstream(dir / "round.txt") << format_train_config(c);
  const TrainConfig r = read_train_config(dir / "round.txt");
  std::ofstream(dir / "round2.txt") << format_train_config(r);
  CHECK(format_train_config(read_train_config(dir / "round2.txt")) == format_train_config(r));
  CHECK(r.checkpoint == dir / "model.ckpt");

  std::ofstream(dir / "bad1.txt") << "colour = red\n";
  CHECK_THROWS_WITH(read_train_config(dir / "bad1.txt"), doctest::Contains("colour"));
  std::ofstream(dir / "bad2.txt") << "epochs = many\n";
  CHECK_THROWS_WITH(read_train_config(dir / "bad2.txt"), doctest::Contains(":1:"));
  std::ofstream(dir / "bad3.txt") << "stage_widths = 1,2\n";
  CHECK_THROWS(read_train_config(dir / "bad3.txt"));

  TrainConfig v;
  v.joint_weight = 1.5;
  CHECK_THROWS(v.validate());
  v = TrainConfig{};
  v.learning_rate = 0.0;
  CHECK_THROWS(v.validate());
  v = TrainConfig{};
  v.batch_size = 0;
  CHECK_THROWS(v.validate());
}

TEST_CASE("synthetic dataset and manifest") {
  const auto a = testing::scratch_dir("synth_a");
  const auto b = testing::scratch_dir("synth_b");
  SynthDatasetOptions o;
  o.params.width = o.params.height = 256;
  o.params.n_follicle_clusters = 1;
  const fs::path ma = synth_dataset(3, o, a);
  synth_dataset(3, o, b);
  const Manifest m = read_manifest(ma);
  CHECK(m.entries.size() == 15);
  CHECK(m.select(Split::Train).size() == 13);
  CHECK(m.select(Split::WsiTest).size() == 2);
  CHECK(m.patch_size == 64);
  for (const auto& f : fs::directory_iterator(a)) CHECK(slurp(f.path()) == slurp(b / f.path().filename()));
  for (const auto& e : m.entries) CHECK(fs::exists(e.slide));

  o.test_slides = 15;
  CHECK_THROWS(synth_dataset(3, o, a / "x"));

  std::ofstream(a / "bad.txt") << "patch_size 64\nvalidation s.ppm m.pgm l.csv\n";
  CHECK_THROWS_WITH(read_manifest(a / "bad.txt"), doctest::Contains("bad.txt:2"));
  CHECK_THROWS(read_manifest(a / "none.txt"));
}

TEST_CASE("training") {
  const auto dir = testing::scratch_dir("train");
  const fs::path manifest = synth_dataset(5, small_dataset(), dir / "data");
  TrainConfig c = small_train(dir, manifest);

  SUBCASE("zero epochs writes the initial weights") {
    c.epochs = 0;
    train(c);
    save_checkpoint(dir / "init.ckpt", HybridModel::init_weights(c.seed, c.model));
    CHECK(slurp(c.checkpoint) == slurp(dir / "init.ckpt"));
  }
  SUBCASE("deterministic and logged") {
    const TrainResult r = train(c);
    const std::string first = slurp(c.checkpoint);
    train(c);
    CHECK(slurp(c.checkpoint) == first);
    CHECK(r.log.size() == 4);
    const std::string csv = slurp(c.metrics);
    CHECK(csv.rfind("step,criterion,ce,M,adaptive,cls,joint\n", 0) == 0);
    CHECK(csv.find("4,mIoU,") != std::string::npos);
    for (const auto& s : r.log) {
      CHECK(s.losses.adaptive_loss >= s.losses.cross_entropy);
      CHECK(s.losses.joint == joint_loss(s.losses.adaptive_loss, s.losses.cls_loss, 0.5));
    }
    c.seed = 2;
    train(c);
    CHECK(slurp(c.checkpoint) != first);
  }
  SUBCASE("plain cross entropy logs M = 1") {
    c.loss_mode = LossMode{};
    const TrainResult r = train(c);
    for (const auto& s : r.log) CHECK(s.losses.adaptive_loss == s.losses.cross_entropy);
    CHECK(slurp(c.metrics).find(",none,") != std::string::npos);
  }
  SUBCASE("missing inputs are rejected before training") {
    c.manifest = dir / "nope.txt";
    CHECK_THROWS_WITH(train(c), doctest::Contains("manifest"));
    c = small_train(dir, manifest);
    const fs::path broken = manifest.parent_path() / "broken.txt";
    fs::copy_file(manifest, broken);
    std::ofstream(broken, std::ios::app) << "train missing.ppm missing.pgm missing.csv\n";
    c.manifest = broken;
    CHECK_THROWS_WITH(train(c), doctest::Contains("missing.ppm"));
    CHECK_FALSE(fs::exists(c.checkpoint));
    c = small_train(dir, manifest);
    c.model.patch_size = 64;
    CHECK_THROWS_WITH(train(c), doctest::Contains("patch_size"));
  }
}

TEST_CASE("evaluation") {
  const auto dir = testing::scratch_dir("eval");
  const fs::path manifest_path = synth_dataset(6, small_dataset(), dir / "data");
  const Manifest manifest = read_manifest(manifest_path);
  const auto ref = reference_stats(manifest_path.parent_path() / "reference.ppm");

  SUBCASE("oracle predictor scores 1") {
    const EvalReport r = evaluate(nullptr, manifest, Split::Train, ref);
    for (auto c : kAllCriteria) CHECK(r.criteria.get(c) == 1.0);
    CHECK(r.classifier_accuracy == 1.0);
    CHECK(r.patches == 3 * 16);
  }
  SUBCASE("criteria recomputed from dumped predictions agree exactly") {
    const HybridModel m = HybridModel::init_weights(3, small_model());
    const EvalReport r = evaluate(&m, manifest, Split::Train, ref, dir / "dump");
    ConfusionMatrix cm(2);
    const auto entries = manifest.select(Split::Train);
    for (std::size_t s = 0; s < entries.size(); ++s) {
      char name[32];
      std::snprintf(name, sizeof name, "pred_%02zu.pgm", s);
      const GrayImage pred = read_mask(dir / "dump" / name);
      const GrayImage truth = read_mask(entries[s].mask);
      for (const auto& c : tile_grid(truth.width, truth.height, manifest.patch_size))
        cm += confusion(extract_patch(pred, c).pixels, extract_patch(truth, c).pixels, 2);
    }
    CHECK(cm == r.confusion);
    const CriteriaSet again = all_criteria(cm);
    for (auto c : kAllCriteria) CHECK(again.get(c) == r.criteria.get(c));
  }
  SUBCASE("untrained model sits near the background fraction") {
    const auto samples = load_patches(manifest, Split::Train, ref);
    std::size_t bg = 0, n = 0;
    for (const auto& s : samples)
      for (auto v : s.mask) {
        bg += v == 0;
        ++n;
      }
    const double background = static_cast<double>(bg) / static_cast<double>(n);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const HybridModel m = HybridModel::init_weights(seed, small_model());
      const EvalReport r = evaluate_samples(&m, samples);
      INFO("seed " << seed << " background " << background);
      CHECK(std::abs(r.criteria.pacc - background) <= 0.1);
    }
  }
  SUBCASE("patch size mismatch") {
    const HybridModel m(ModelConfig{});
    CHECK_THROWS(evaluate(&m, manifest, Split::Train, ref));
  }
}

TEST_CASE("whole-slide inference") {
  SynthParams p = small_dataset().params;
  const LabeledSlide slide = synth_slide(11, p);
  HybridModel model = HybridModel::init_weights(4, small_model());
  InferOptions opts;
  opts.ref = image_stats(slide.image);
  const auto grid = tile_grid(slide.image.width, slide.image.height, p.patch_size);

  SUBCASE("gate off equals per-patch segmentation") {
    opts.gated = false;
    const WsiResult r = infer_wsi(slide.image, model, opts, &slide.mask);
    CHECK(r.report.routing.segmented == r.report.total_patches);
    CHECK(r.report.total_patches == grid.size());
    CHECK(r.report.wall_time_ungated.has_value());
    CHECK_FALSE(r.report.wall_time_gated.has_value());
    const ChannelStats src = image_stats(slide.image);
    std::vector<std::pair<PatchCoord, GrayImage>> tiles;
    for (const auto& c : grid) {
      const Tensor x = image_to_tensor(reinhard_transfer(extract_patch(slide.image, c), src, *opts.ref));
      const TrunkOutput t = model.trunk_forward(model.stem_forward(x));
      GrayImage m(p.patch_size, p.patch_size);
      m.pixels = seg_argmax(model.segment(t.features, t.lowscale));
      tiles.emplace_back(c, m);
    }
    CHECK(r.mask == stitch(tiles, slide.image.width, slide.image.height));
    REQUIRE(r.report.criteria.has_value());
    CHECK(r.report.criteria->pacc >= 0.0);
  }
  SUBCASE("routing is conserved and skipped regions are zero") {
    force_class(model, PatchLabel::Colloid);
    opts.compare_ungated = true;
    const WsiResult r = infer_wsi(slide.image, model, opts);
    CHECK(r.report.routing.skipped_colloid == grid.size());
    CHECK(r.report.routing.total() == r.report.total_patches);
    for (auto v : r.mask.pixels) CHECK(v == 0);
    CHECK(r.report.wall_time_gated.has_value());
    CHECK(r.report.wall_time_ungated.has_value());
  }
  SUBCASE("no follicular patches with a perfect classifier skips everything") {
    p.n_follicle_clusters = 0;
    const LabeledSlide blank = synth_slide(12, p);
    force_class(model, PatchLabel::NonInfo);
    opts.compare_ungated = true;
    model.reset_counters();
    const WsiResult r = infer_wsi(blank.image, model, opts, &blank.mask);
    CHECK(r.report.routing.segmented == 0);
    CHECK(r.report.routing.skipped_noninfo == grid.size());
    CHECK(model.stem_evaluations() == 2 * grid.size());
    for (auto v : r.mask.pixels) CHECK(v == 0);
    CHECK(*r.report.wall_time_gated < *r.report.wall_time_ungated);
  }
  SUBCASE("segmented counts patches classified follicular") {
    const WsiResult r = infer_wsi(slide.image, model, opts);
    std::size_t follicular = 0;
    const ChannelStats src = image_stats(slide.image);
    for (const auto& c : grid) {
      const Tensor x = image_to_tensor(reinhard_transfer(extract_patch(slide.image, c), src, *opts.ref));
      follicular += class_argmax(model.classify(model.stem_forward(x)))[0] == 0;
    }
    CHECK(r.report.routing.segmented == follicular);
    CHECK(r.report.routing.total() == grid.size());
  }
  SUBCASE("worker count does not change the result") {
    opts.workers = 1;
    const WsiResult one = infer_wsi(slide.image, model, opts);
    opts.workers = 3;
    const WsiResult three = infer_wsi(slide.image, model, opts);
    CHECK(one.mask == three.mask);
    CHECK(one.report.routing == three.report.routing);
  }
  SUBCASE("report json") {
    WsiResult r = infer_wsi(slide.image, model, opts, &slide.mask);
    r.report.stitched_mask = "mask.pgm";
    const std::string j = to_json(r.report);
    for (const char* key : {"\"total_patches\"", "\"skipped_noninfo\"", "\"skipped_colloid\"", "\"segmented\"",
                            "\"stitched_mask\"", "\"wall_time_gated_s\"", "\"wall_time_ungated_s\": null", "\"mIoU\""})
      CHECK(j.find(key) != std::string::npos);
  }
  SUBCASE("bad inputs") {
    CHECK_THROWS(infer_wsi(RgbImage(16, 16), model, opts));
    const GrayImage tiny(4, 4);
    CHECK_THROWS(infer_wsi(slide.image, model, opts, &tiny));
  }
}
