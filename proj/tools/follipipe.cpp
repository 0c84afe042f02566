#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "follipipe/checkpoint.hpp"
#include "follipipe/config.hpp"
#include "follipipe/dataset.hpp"
#include "follipipe/gradcheck_suite.hpp"
#include "follipipe/inference.hpp"
#include "follipipe/train.hpp"

namespace fs = std::filesystem;
using namespace follipipe;

namespace {

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string ref_patch;
};

TrainConfig load_config(const CommonArgs& a) {
  TrainConfig c = a.config.empty() ? TrainConfig{} : read_train_config(a.config);
  if (a.seed) c.seed = *a.seed;
  if (!a.ref_patch.empty()) c.ref_patch = a.ref_patch;
  return c;
}

void print_criteria(const CriteriaSet& c) {
  std::printf("pAcc  %.6f\nmAcc  %.6f\nmIoU  %.6f\nfwIoU %.6f\n", c.pacc, c.macc, c.miou, c.fwiou);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classification-gated follicle segmentation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic slide dataset");
  std::string synth_out = "data";
  std::uint64_t synth_seed = 1;
  SynthDatasetOptions synth_opts;
  synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Dataset seed")->capture_default_str();
  synth->add_option("--slides", synth_opts.n_slides, "Number of slides")->capture_default_str();
  synth->add_option("--test-slides", synth_opts.test_slides, "Slides marked wsi-test")->capture_default_str();
  synth->add_option("--width", synth_opts.params.width, "Slide width")->capture_default_str();
  synth->add_option("--height", synth_opts.params.height, "Slide height")->capture_default_str();
  synth->add_option("--patch-size", synth_opts.params.patch_size, "Patch size")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Jointly train the hybrid model");
  CommonArgs train_args;
  train_cmd->add_option("--config", train_args.config, "key=value config file")->required();
  train_cmd->add_option("--seed", train_args.seed, "Override the config seed");
  train_cmd->add_option("--ref-patch", train_args.ref_patch, "Staining reference (PPM)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  CommonArgs eval_args;
  std::string eval_ckpt, eval_manifest, eval_split = "wsi-test", eval_dump;
  bool eval_oracle = false;
  eval_cmd->add_option("--config", eval_args.config, "key=value config file");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint (overrides config)");
  eval_cmd->add_option("--manifest", eval_manifest, "Manifest (overrides config)");
  eval_cmd->add_option("--split", eval_split, "train or wsi-test")->capture_default_str();
  eval_cmd->add_option("--ref-patch", eval_args.ref_patch, "Staining reference (PPM)");
  eval_cmd->add_option("--dump", eval_dump, "Write stitched prediction masks here");
  eval_cmd->add_flag("--oracle", eval_oracle, "Use the ground truth as the prediction");

  // infer-wsi
  auto* infer = app.add_subcommand("infer-wsi", "Gated whole-slide inference");
  CommonArgs infer_args;
  std::string infer_slide, infer_ckpt, infer_truth, infer_mask = "mask.pgm", infer_report = "report.json";
  bool gated = true, compare = false;
  std::size_t workers = 1;
  infer->add_option("--config", infer_args.config, "key=value config file");
  infer->add_option("--slide", infer_slide, "Slide image (PPM)")->required();
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint (overrides config)");
  infer->add_option("--truth", infer_truth, "Ground-truth mask (PGM) for criteria");
  infer->add_option("--out-mask", infer_mask, "Stitched mask output (PGM)")->capture_default_str();
  infer->add_option("--report", infer_report, "Report output (JSON)")->capture_default_str();
  infer->add_option("--ref-patch", infer_args.ref_patch, "Staining reference (PPM)");
  infer->add_option("--workers", workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  infer->add_flag("--gated,!--no-gated", gated, "Skip patches not classified Follicular")->capture_default_str();
  infer->add_flag("--compare-ungated", compare, "Also time an ungated pass");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::size_t gc_seeds = 20;
  gc->add_option("--seeds", gc_seeds, "Random instances per check")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const fs::path manifest = synth_dataset(synth_seed, synth_opts, synth_out);
      std::printf("wrote %s\n", manifest.string().c_str());
      return 0;
    }
    if (*train_cmd) {
      const TrainConfig c = load_config(train_args);
      const TrainResult r = train(c);
      if (!r.log.empty()) {
        const LossReport& last = r.log.back().losses;
        std::printf("steps %zu  ce %.5f  M %.4f  adaptive %.5f  cls %.5f  joint %.5f\n", r.log.size(),
                    last.cross_entropy, last.m, last.adaptive_loss, last.cls_loss, last.joint);
      }
      std::printf("checkpoint %s\n", c.checkpoint.string().c_str());
      return 0;
    }
    if (*eval_cmd) {
      const TrainConfig c = load_config(eval_args);
      const fs::path manifest_path = eval_manifest.empty() ? c.manifest : fs::path(eval_manifest);
      if (manifest_path.empty()) throw std::invalid_argument("eval: --manifest or a config manifest is required");
      const Manifest manifest = read_manifest(manifest_path);
      std::optional<HybridModel> model;
      if (!eval_oracle) model = load_checkpoint(eval_ckpt.empty() ? c.checkpoint : fs::path(eval_ckpt));
      const EvalReport r = evaluate(model ? &*model : nullptr, manifest, parse_split(eval_split),
                                    reference_stats(c.ref_patch), eval_dump);
      std::printf("patches %zu\n", r.patches);
      print_criteria(r.criteria);
      std::printf("classifier_accuracy %.6f\n", r.classifier_accuracy);
      std::printf("classifier confusion (rows true F/C/N, cols predicted)\n");
      for (std::size_t t = 0; t < kPatchClasses; ++t)
        std::printf("  %6llu %6llu %6llu\n", static_cast<unsigned long long>(r.classifier_confusion.at(t, 0)),
                    static_cast<unsigned long long>(r.classifier_confusion.at(t, 1)),
                    static_cast<unsigned long long>(r.classifier_confusion.at(t, 2)));
      return 0;
    }
    if (*infer) {
      const TrainConfig c = load_config(infer_args);
      const HybridModel model = load_checkpoint(infer_ckpt.empty() ? c.checkpoint : fs::path(infer_ckpt));
      const RgbImage slide = read_ppm(infer_slide);
      std::optional<GrayImage> truth;
      if (!infer_truth.empty()) truth = read_mask(infer_truth);
      InferOptions opts;
      opts.gated = gated;
      opts.workers = workers;
      opts.ref = reference_stats(c.ref_patch);
      opts.compare_ungated = compare;
      WsiResult r = infer_wsi(slide, model, opts, truth ? &*truth : nullptr);
      r.report.slide = infer_slide;
      r.report.stitched_mask = infer_mask;
      write_mask(infer_mask, r.mask);
      std::ofstream(infer_report) << to_json(r.report);
      std::cout << to_json(r.report);
      return 0;
    }
    if (*gc) {
      const GradCheckReport r = gradcheck_suite(gc_seeds);
      std::fputs(r.format().c_str(), stdout);
      return r.passed() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
