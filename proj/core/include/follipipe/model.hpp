#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "follipipe/layers.hpp"
#include "follipipe/tensor.hpp"

namespace follipipe {

/// Reduced ResNet-style topology. Block 1 (the stem) is shared by the
/// classifier and the segmentation trunk; Block 3's output is the low-scale
/// tap fused into the ASPP head.
struct ModelConfig {
  std::size_t patch_size = 64;  ///< must be divisible by 8
  std::size_t stem_width = 16;
  std::array<std::size_t, 3> stage_widths{32, 64, 64};  ///< Blocks 2, 3, 4
  std::size_t blocks_per_stage = 2;
  std::size_t classifier_conv_width = 16;
  std::size_t classifier_hidden = 32;
  std::size_t aspp_width = 32;
  std::array<std::size_t, 3> aspp_rates{1, 2, 4};
  std::size_t fusion_width = 32;
  /// Variance scale of the uniform init; bound = sqrt(init_gain / fan_in).
  double init_gain = 3.0;

  void validate() const;
  std::size_t stem_stride() const { return 4; }
  std::size_t trunk_stride() const { return 8; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr std::size_t kSegClasses = 2;

struct ModelOutput {
  Tensor class_logits;  ///< [N,3]
  Tensor seg_logits;    ///< [N,2,P,P]
};

/// relu(conv2(relu(conv1(x))) + shortcut(x)); shortcut is a strided 1x1
/// projection when the shape changes, otherwise identity.
class ResidualBlock {
 public:
  struct Cache {
    LayerCache conv1, conv2, projection;
    Tensor hidden_pre;
    Tensor sum_pre;
  };

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t stride);

  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Tensor& grad_out, const Cache& cache);

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;
  void init(double gain, std::mt19937_64& rng);

  Conv2d conv1;
  Conv2d conv2;
  std::optional<Conv2d> projection;
};

struct StemCache {
  LayerCache conv;
  Tensor conv_pre;
  Tensor pool_input;
  std::vector<ResidualBlock::Cache> blocks;
};

struct ClassifierCache {
  LayerCache conv, fc1, fc2;
  Tensor conv_pre;
  Shape pooled_from;
  Tensor fc1_pre;
};

struct TrunkCache {
  std::array<std::vector<ResidualBlock::Cache>, 3> stages;
};

struct TrunkOutput {
  Tensor features;  ///< Block 4 output
  Tensor lowscale;  ///< Block 3 output
};

struct EasppCache {
  std::vector<LayerCache> branches;  ///< 1x1, then one per atrous rate
  std::vector<Tensor> branch_pre;
  LayerCache pool_conv;
  Shape pool_from;
  Tensor pool_pre;
  LayerCache lowscale_conv;
  Tensor lowscale_pre;
  std::array<std::size_t, 2> lowscale_hw{};
  std::vector<Tensor> fused_inputs;
  Tensor fused_pre;
};

struct SegmentCache {
  EasppCache easpp;
  LayerCache projection;
};

struct ForwardCache {
  StemCache stem;
  ClassifierCache classifier;
  TrunkCache trunk;
  SegmentCache segment;
};

class HybridModel {
 public:
  explicit HybridModel(const ModelConfig& config = {});

  /// Deterministic in (seed, config): fan-in scaled uniform weights, zero
  /// biases and a zero segmentation head.
  static HybridModel init_weights(std::uint64_t seed, const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// Shared features [N, stem_width, P/4, P/4]. Increments stem_evaluations().
  Tensor stem_forward(const Tensor& patch, StemCache* cache = nullptr) const;
  Tensor classify(const Tensor& shared, ClassifierCache* cache = nullptr) const;
  TrunkOutput trunk_forward(const Tensor& shared, TrunkCache* cache = nullptr) const;
  /// ASPP branches over `trunk` plus the projected, resized low-scale branch,
  /// concatenated and fused by a 1x1 convolution.
  Tensor easpp_forward(const Tensor& trunk, const Tensor& lowscale, EasppCache* cache = nullptr) const;
  /// The same head without the low-scale branch.
  Tensor aspp_forward(const Tensor& trunk) const;
  Tensor segment(const Tensor& trunk, const Tensor& lowscale, SegmentCache* cache = nullptr) const;
  ModelOutput forward(const Tensor& patch, ForwardCache* cache = nullptr) const;

  /// Accumulates parameter gradients for the given upstream gradients (either
  /// may be null) and returns the gradient w.r.t. the input patch.
  Tensor backward(const ForwardCache& cache, const Tensor* grad_class_logits, const Tensor* grad_seg_logits);

  ParameterList parameters();
  ConstParameterList parameters() const;
  /// Parameters of Block 1 only.
  ParameterList stem_parameters();
  void zero_grad();
  std::size_t parameter_count() const;

  std::size_t stem_evaluations() const { return stem_calls_.value.load(); }
  void reset_counters() { stem_calls_.value.store(0); }

  // Component access for tests and the ablation switch.
  Conv2d& lowscale_projection() { return easpp_lowscale_; }
  ResidualBlock& stem_block(std::size_t i) { return stem_blocks_.at(i); }

 private:
  Tensor stem_backward(const Tensor& grad, const StemCache& cache);
  Tensor classifier_backward(const Tensor& grad, const ClassifierCache& cache);
  Tensor trunk_backward(const Tensor& grad_features, const Tensor& grad_lowscale, const TrunkCache& cache);
  std::pair<Tensor, Tensor> easpp_backward(const Tensor& grad, const EasppCache& cache);
  void aspp_branches(const Tensor& trunk, EasppCache* cache, std::vector<Tensor>& outputs) const;
  Tensor fuse(const std::vector<Tensor>& branches, EasppCache* cache) const;
  Tensor fuse_slice(std::size_t branch) const;

  ModelConfig config_;

  Conv2d stem_conv_;
  std::vector<ResidualBlock> stem_blocks_;

  Conv2d cls_conv_;
  Linear cls_fc1_;
  Linear cls_fc2_;

  std::array<std::vector<ResidualBlock>, 3> stages_;

  std::vector<Conv2d> easpp_branches_;  ///< 1x1 + atrous
  Conv2d easpp_pool_;
  Conv2d easpp_lowscale_;
  Parameter easpp_fuse_weight_;  ///< [fusion_width, branches * aspp_width, 1, 1]
  Parameter easpp_fuse_bias_;

  Conv2d decoder_;

  struct CallCounter {
    std::atomic<std::size_t> value{0};
    CallCounter() = default;
    CallCounter(const CallCounter& o) : value(o.value.load()) {}
    CallCounter& operator=(const CallCounter& o) {
      value.store(o.value.load());
      return *this;
    }
  };
  mutable CallCounter stem_calls_;
};

}  // namespace follipipe
