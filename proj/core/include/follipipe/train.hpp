#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "follipipe/config.hpp"
#include "follipipe/criteria.hpp"
#include "follipipe/dataset.hpp"
#include "follipipe/loss.hpp"
#include "follipipe/model.hpp"

namespace follipipe {

struct StepLog {
  std::size_t step = 0;
  LossReport losses;
};

/// Called after each SGD step with the 1-based step count; return false to stop.
using StepObserver = std::function<bool(std::size_t step, const HybridModel& model)>;

struct TrainResult {
  HybridModel model;
  std::vector<StepLog> log;
};

std::size_t steps_per_epoch(const TrainConfig& config, std::size_t n_samples);

/// Runs epochs * steps_per_epoch SGD steps on stratified batches. Single
/// threaded and deterministic in (config, samples).
TrainResult train_model(const TrainConfig& config, const std::vector<PatchSample>& samples,
                        const StepObserver& observer = {});

std::optional<ChannelStats> reference_stats(const std::filesystem::path& ref_patch);

/// Reads the manifest's train split, trains, then writes the checkpoint and
/// metrics CSV named in the config. Missing inputs are rejected up front.
TrainResult train(const TrainConfig& config);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log, const LossMode& mode);

struct EvalReport {
  ConfusionMatrix confusion{kSegClasses};
  CriteriaSet criteria;
  double classifier_accuracy = 0.0;
  ConfusionMatrix classifier_confusion{kPatchClasses};  ///< true label x predicted label
  std::size_t patches = 0;
};

/// Segments every sample (no gating) and pools one confusion matrix over all
/// pixels of all samples. With `predictions`, the per-pixel argmax masks are
/// appended in sample order. Without a model, the ground truth is used as the
/// prediction (oracle mode).
EvalReport evaluate_samples(const HybridModel* model, const std::vector<PatchSample>& samples,
                            std::vector<std::uint8_t>* predictions = nullptr);

/// Evaluates one split of a manifest. With `dump_dir`, writes the stitched
/// prediction mask of each slide as pred_XX.pgm.
EvalReport evaluate(const HybridModel* model, const Manifest& manifest, Split split,
                    const std::optional<ChannelStats>& ref, const std::filesystem::path& dump_dir = {});

/// Trains under `config` and evaluates `which` on `validation` every
/// `eval_every` steps; returns the first step at which it reaches `threshold`,
/// or nothing within the config's step budget.
std::optional<std::size_t> steps_to_threshold(const TrainConfig& config, const std::vector<PatchSample>& train_set,
                                              const std::vector<PatchSample>& validation, Criterion which,
                                              double threshold, std::size_t eval_every);

}  // namespace follipipe
