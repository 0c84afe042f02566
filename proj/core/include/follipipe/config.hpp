#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "follipipe/criteria.hpp"
#include "follipipe/model.hpp"

namespace follipipe {

struct LossMode {
  bool adaptive = false;
  Criterion criterion = Criterion::PixelAccuracy;  ///< used when adaptive

  friend bool operator==(const LossMode&, const LossMode&) = default;
};

/// "plain_ce" or "adaptive:<pAcc|mAcc|mIoU|fwIoU>".
std::string to_string(const LossMode& mode);
LossMode parse_loss_mode(std::string_view text);

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 6;
  std::size_t batch_size = 8;
  /// 0 means ceil(training patches / batch_size).
  std::size_t steps_per_epoch = 0;
  double learning_rate = 0.02;
  LossMode loss_mode{true, Criterion::MeanIoU};
  double joint_weight = 0.5;
  /// Share of each batch drawn from Follicular patches; the rest alternates
  /// between Colloid and NonInfo.
  double follicular_share = 0.5;
  std::filesystem::path manifest;
  std::filesystem::path checkpoint = "model.ckpt";
  std::filesystem::path metrics = "metrics.csv";
  /// Staining standard; empty disables normalisation.
  std::filesystem::path ref_patch;
  ModelConfig model;

  std::size_t patch_size() const { return model.patch_size; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Parses UTF-8 `key = value` lines ('#' starts a comment). Relative paths
/// resolve against the file's directory. Unknown keys are errors.
TrainConfig read_train_config(const std::filesystem::path& path);
/// Applies one key=value pair; throws std::invalid_argument on an unknown key
/// or a malformed value.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value,
                      const std::filesystem::path& base = {});
std::string format_train_config(const TrainConfig& config);

}  // namespace follipipe
