#include "follipipe/model.hpp"

#include <stdexcept>

#include "follipipe/ops.hpp"

namespace follipipe {

void ModelConfig::validate() const {
  if (patch_size == 0 || patch_size % trunk_stride() != 0)
    throw std::invalid_argument("model config: patch_size must be a positive multiple of " +
                                std::to_string(trunk_stride()));
  const std::size_t widths[] = {stem_width,       stage_widths[0],       stage_widths[1], stage_widths[2],
                                blocks_per_stage, classifier_conv_width, classifier_hidden, aspp_width,
                                fusion_width,     aspp_rates[0],         aspp_rates[1],   aspp_rates[2]};
  for (auto w : widths)
    if (w == 0) throw std::invalid_argument("model config: widths, block counts and rates must be >= 1");
  if (!(init_gain > 0.0)) throw std::invalid_argument("model config: init_gain must be positive");
}

// ---------------------------------------------------------------------------
// ResidualBlock

ResidualBlock::ResidualBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t stride)
    : conv1(name + ".conv1", ConvSpec::square(in, out, 3, stride, 1)),
      conv2(name + ".conv2", ConvSpec::square(out, out, 3, 1, 1)) {
  if (stride != 1 || in != out) projection.emplace(name + ".projection", ConvSpec::square(in, out, 1, stride, 0));
}

Tensor ResidualBlock::forward(const Tensor& x, Cache* cache) const {
  Tensor hidden = conv1.forward(x, cache ? &cache->conv1 : nullptr);
  if (cache) cache->hidden_pre = hidden;
  Tensor sum = conv2.forward(relu(hidden), cache ? &cache->conv2 : nullptr);
  sum += projection ? projection->forward(x, cache ? &cache->projection : nullptr) : x;
  if (cache) cache->sum_pre = sum;
  return relu(sum);
}

Tensor ResidualBlock::backward(const Tensor& grad_out, const Cache& cache) {
  const Tensor grad_sum = relu_backward(grad_out, cache.sum_pre);
  Tensor grad_x = conv1.backward(relu_backward(conv2.backward(grad_sum, cache.conv2), cache.hidden_pre), cache.conv1);
  grad_x += projection ? projection->backward(grad_sum, cache.projection) : grad_sum;
  return grad_x;
}

void ResidualBlock::collect(ParameterList& out) {
  conv1.collect(out);
  conv2.collect(out);
  if (projection) projection->collect(out);
}

void ResidualBlock::collect(ConstParameterList& out) const {
  conv1.collect(out);
  conv2.collect(out);
  if (projection) projection->collect(out);
}

void ResidualBlock::init(double gain, std::mt19937_64& rng) {
  conv1.init(gain, rng);
  conv2.init(gain, rng);
  if (projection) projection->init(gain, rng);
}

// ---------------------------------------------------------------------------
// HybridModel construction

HybridModel::HybridModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto& c = config_;
  stem_conv_ = Conv2d("block1.conv", ConvSpec::square(3, c.stem_width, 3, 2, 1));
  for (std::size_t i = 0; i < c.blocks_per_stage; ++i)
    stem_blocks_.emplace_back("block1." + std::to_string(i), c.stem_width, c.stem_width, 1);

  cls_conv_ = Conv2d("classifier.conv", ConvSpec::square(c.stem_width, c.classifier_conv_width, 3, 1, 1));
  cls_fc1_ = Linear("classifier.fc1", c.classifier_conv_width, c.classifier_hidden);
  cls_fc2_ = Linear("classifier.fc2", c.classifier_hidden, 3);

  std::size_t in = c.stem_width;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string stage = "block" + std::to_string(s + 2);
    for (std::size_t i = 0; i < c.blocks_per_stage; ++i) {
      const std::size_t stride = (s == 0 && i == 0) ? 2 : 1;
      stages_[s].emplace_back(stage + "." + std::to_string(i), in, c.stage_widths[s], stride);
      in = c.stage_widths[s];
    }
  }

  const std::size_t trunk_c = c.stage_widths[2];
  easpp_branches_.emplace_back("easpp.conv1x1", ConvSpec::square(trunk_c, c.aspp_width, 1));
  for (auto rate : c.aspp_rates)
    easpp_branches_.emplace_back("easpp.atrous" + std::to_string(rate),
                                 ConvSpec::square(trunk_c, c.aspp_width, 3, 1, rate, rate));
  easpp_pool_ = Conv2d("easpp.pool", ConvSpec::square(trunk_c, c.aspp_width, 1));
  easpp_lowscale_ = Conv2d("easpp.lowscale", ConvSpec::square(c.stage_widths[1], c.aspp_width, 1));
  const std::size_t n_branches = easpp_branches_.size() + 2;
  easpp_fuse_weight_ = Parameter("easpp.fuse.weight", {c.fusion_width, n_branches * c.aspp_width, 1, 1});
  easpp_fuse_bias_ = Parameter("easpp.fuse.bias", {c.fusion_width});

  decoder_ = Conv2d("decoder.projection", ConvSpec::square(c.fusion_width, kSegClasses, 1));
}

HybridModel HybridModel::init_weights(std::uint64_t seed, const ModelConfig& config) {
  HybridModel model(config);
  std::mt19937_64 rng(seed);
  const double gain = model.config_.init_gain;
  model.stem_conv_.init(gain, rng);
  for (auto& b : model.stem_blocks_) b.init(gain, rng);
  model.cls_conv_.init(gain, rng);
  model.cls_fc1_.init(gain, rng);
  model.cls_fc2_.init(gain, rng);
  for (auto& stage : model.stages_)
    for (auto& b : stage) b.init(gain, rng);
  for (auto& b : model.easpp_branches_) b.init(gain, rng);
  model.easpp_pool_.init(gain, rng);
  model.easpp_lowscale_.init(gain, rng);
  init_uniform(model.easpp_fuse_weight_, model.easpp_fuse_weight_.value.dim(1), gain, rng);
  model.easpp_fuse_bias_.value.fill(0.0);
  // Zero head: an untrained model scores both classes equally and argmax
  // falls back to background.
  model.decoder_.weight.value.fill(0.0);
  model.decoder_.bias.value.fill(0.0);
  return model;
}

ParameterList HybridModel::parameters() {
  ParameterList out;
  stem_conv_.collect(out);
  for (auto& b : stem_blocks_) b.collect(out);
  cls_conv_.collect(out);
  cls_fc1_.collect(out);
  cls_fc2_.collect(out);
  for (auto& stage : stages_)
    for (auto& b : stage) b.collect(out);
  for (auto& b : easpp_branches_) b.collect(out);
  easpp_pool_.collect(out);
  easpp_lowscale_.collect(out);
  out.push_back(&easpp_fuse_weight_);
  out.push_back(&easpp_fuse_bias_);
  decoder_.collect(out);
  return out;
}

ConstParameterList HybridModel::parameters() const {
  const auto list = const_cast<HybridModel*>(this)->parameters();
  return {list.begin(), list.end()};
}

ParameterList HybridModel::stem_parameters() {
  ParameterList out;
  stem_conv_.collect(out);
  for (auto& b : stem_blocks_) b.collect(out);
  return out;
}

void HybridModel::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(0.0);
}

std::size_t HybridModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Forward

Tensor HybridModel::stem_forward(const Tensor& patch, StemCache* cache) const {
  require_rank(patch, 4, "stem_forward patch");
  if (patch.dim(1) != 3 || patch.dim(2) != config_.patch_size || patch.dim(3) != config_.patch_size)
    throw std::invalid_argument("stem_forward: expected [N,3," + std::to_string(config_.patch_size) + "," +
                                std::to_string(config_.patch_size) + "] patch, got " + shape_string(patch.shape()));
  stem_calls_.value.fetch_add(1);
  Tensor x = stem_conv_.forward(patch, cache ? &cache->conv : nullptr);
  if (cache) cache->conv_pre = x;
  x = relu(x);
  if (cache) cache->pool_input = x;
  x = maxpool2d(x, 2, 2);
  if (cache) cache->blocks.resize(stem_blocks_.size());
  for (std::size_t i = 0; i < stem_blocks_.size(); ++i)
    x = stem_blocks_[i].forward(x, cache ? &cache->blocks[i] : nullptr);
  return x;
}

Tensor HybridModel::classify(const Tensor& shared, ClassifierCache* cache) const {
  Tensor x = cls_conv_.forward(shared, cache ? &cache->conv : nullptr);
  if (cache) cache->conv_pre = x;
  x = relu(x);
  if (cache) cache->pooled_from = x.shape();
  x = global_avg_pool(x);
  x = x.reshaped({x.dim(0), x.dim(1)});
  x = cls_fc1_.forward(x, cache ? &cache->fc1 : nullptr);
  if (cache) cache->fc1_pre = x;
  return cls_fc2_.forward(relu(x), cache ? &cache->fc2 : nullptr);
}

TrunkOutput HybridModel::trunk_forward(const Tensor& shared, TrunkCache* cache) const {
  TrunkOutput out;
  Tensor x = shared;
  for (std::size_t s = 0; s < 3; ++s) {
    if (cache) cache->stages[s].resize(stages_[s].size());
    for (std::size_t i = 0; i < stages_[s].size(); ++i)
      x = stages_[s][i].forward(x, cache ? &cache->stages[s][i] : nullptr);
    if (s == 1) out.lowscale = x;
  }
  out.features = std::move(x);
  return out;
}

void HybridModel::aspp_branches(const Tensor& trunk, EasppCache* cache, std::vector<Tensor>& outputs) const {
  require_rank(trunk, 4, "easpp trunk features");
  if (cache) {
    cache->branches.assign(easpp_branches_.size(), {});
    cache->branch_pre.assign(easpp_branches_.size(), {});
  }
  for (std::size_t b = 0; b < easpp_branches_.size(); ++b) {
    Tensor y = easpp_branches_[b].forward(trunk, cache ? &cache->branches[b] : nullptr);
    if (cache) cache->branch_pre[b] = y;
    outputs.push_back(relu(y));
  }
  if (cache) cache->pool_from = trunk.shape();
  Tensor pooled = easpp_pool_.forward(global_avg_pool(trunk), cache ? &cache->pool_conv : nullptr);
  if (cache) cache->pool_pre = pooled;
  outputs.push_back(resize_nearest(relu(pooled), trunk.dim(2), trunk.dim(3)));
}

Tensor HybridModel::fuse_slice(std::size_t branch) const {
  const std::size_t f = config_.fusion_width, a = config_.aspp_width;
  const std::size_t total = easpp_fuse_weight_.value.dim(1);
  Tensor slice({f, a, 1, 1});
  for (std::size_t o = 0; o < f; ++o)
    for (std::size_t j = 0; j < a; ++j) slice[o * a + j] = easpp_fuse_weight_.value[o * total + branch * a + j];
  return slice;
}

// The fusion 1x1 conv over the channel concatenation, evaluated as a sum of
// per-branch contributions in branch order. A branch whose input is all zero
// therefore leaves the running sum bit-for-bit unchanged.
Tensor HybridModel::fuse(const std::vector<Tensor>& branches, EasppCache* cache) const {
  const ConvSpec spec = ConvSpec::square(config_.aspp_width, config_.fusion_width, 1);
  const Tensor zero_bias({config_.fusion_width});
  Tensor acc = conv2d(branches[0], fuse_slice(0), easpp_fuse_bias_.value, spec);
  for (std::size_t b = 1; b < branches.size(); ++b) acc += conv2d(branches[b], fuse_slice(b), zero_bias, spec);
  if (cache) {
    cache->fused_inputs = branches;
    cache->fused_pre = acc;
  }
  return relu(acc);
}

Tensor HybridModel::easpp_forward(const Tensor& trunk, const Tensor& lowscale, EasppCache* cache) const {
  require_rank(lowscale, 4, "easpp low-scale features");
  if (lowscale.dim(0) != trunk.dim(0))
    throw std::invalid_argument("easpp_forward: low-scale batch " + std::to_string(lowscale.dim(0)) +
                                " does not match trunk batch " + std::to_string(trunk.dim(0)));
  std::vector<Tensor> branches;
  aspp_branches(trunk, cache, branches);
  Tensor low = easpp_lowscale_.forward(lowscale, cache ? &cache->lowscale_conv : nullptr);
  if (cache) {
    cache->lowscale_pre = low;
    cache->lowscale_hw = {lowscale.dim(2), lowscale.dim(3)};
  }
  Tensor resized = resize_nearest(relu(low), trunk.dim(2), trunk.dim(3));
  if (resized.dim(2) != trunk.dim(2) || resized.dim(3) != trunk.dim(3))
    throw std::invalid_argument("easpp_forward: low-scale branch does not match ASPP resolution");
  branches.push_back(std::move(resized));
  return fuse(branches, cache);
}

Tensor HybridModel::aspp_forward(const Tensor& trunk) const {
  std::vector<Tensor> branches;
  aspp_branches(trunk, nullptr, branches);
  return fuse(branches, nullptr);
}

Tensor HybridModel::segment(const Tensor& trunk, const Tensor& lowscale, SegmentCache* cache) const {
  Tensor fused = easpp_forward(trunk, lowscale, cache ? &cache->easpp : nullptr);
  Tensor logits = decoder_.forward(fused, cache ? &cache->projection : nullptr);
  return upsample_nearest(logits, config_.patch_size / logits.dim(2));
}

ModelOutput HybridModel::forward(const Tensor& patch, ForwardCache* cache) const {
  const Tensor shared = stem_forward(patch, cache ? &cache->stem : nullptr);
  ModelOutput out;
  out.class_logits = classify(shared, cache ? &cache->classifier : nullptr);
  const TrunkOutput trunk = trunk_forward(shared, cache ? &cache->trunk : nullptr);
  out.seg_logits = segment(trunk.features, trunk.lowscale, cache ? &cache->segment : nullptr);
  return out;
}

// ---------------------------------------------------------------------------
// Backward

Tensor HybridModel::stem_backward(const Tensor& grad, const StemCache& cache) {
  if (cache.blocks.size() != stem_blocks_.size()) throw std::logic_error("stem backward: missing forward cache");
  Tensor g = grad;
  for (std::size_t i = stem_blocks_.size(); i-- > 0;) g = stem_blocks_[i].backward(g, cache.blocks[i]);
  g = maxpool2d_backward(g, cache.pool_input, 2, 2);
  return stem_conv_.backward(relu_backward(g, cache.conv_pre), cache.conv);
}

Tensor HybridModel::classifier_backward(const Tensor& grad, const ClassifierCache& cache) {
  Tensor g = cls_fc2_.backward(grad, cache.fc2);
  g = cls_fc1_.backward(relu_backward(g, cache.fc1_pre), cache.fc1);
  g = global_avg_pool_backward(g.reshaped({g.dim(0), g.dim(1), 1, 1}), cache.pooled_from);
  return cls_conv_.backward(relu_backward(g, cache.conv_pre), cache.conv);
}

Tensor HybridModel::trunk_backward(const Tensor& grad_features, const Tensor& grad_lowscale, const TrunkCache& cache) {
  Tensor g = grad_features;
  for (std::size_t s = 3; s-- > 0;) {
    if (cache.stages[s].size() != stages_[s].size()) throw std::logic_error("trunk backward: missing forward cache");
    if (s == 1) g += grad_lowscale;
    for (std::size_t i = stages_[s].size(); i-- > 0;) g = stages_[s][i].backward(g, cache.stages[s][i]);
  }
  return g;
}

std::pair<Tensor, Tensor> HybridModel::easpp_backward(const Tensor& grad, const EasppCache& cache) {
  const std::size_t n_branches = cache.fused_inputs.size();
  if (n_branches != easpp_branches_.size() + 2) throw std::logic_error("easpp backward: missing forward cache");
  const ConvSpec spec = ConvSpec::square(config_.aspp_width, config_.fusion_width, 1);
  const Tensor g_pre = relu_backward(grad, cache.fused_pre);

  const std::size_t f = config_.fusion_width, a = config_.aspp_width;
  const std::size_t total = easpp_fuse_weight_.value.dim(1);
  std::vector<Tensor> g_branch;
  for (std::size_t b = 0; b < n_branches; ++b) {
    ConvGrads cg = conv2d_backward(g_pre, cache.fused_inputs[b], fuse_slice(b), spec);
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t j = 0; j < a; ++j) easpp_fuse_weight_.grad[o * total + b * a + j] += cg.weights[o * a + j];
    if (b == 0) easpp_fuse_bias_.grad += cg.bias;
    g_branch.push_back(std::move(cg.input));
  }

  const Shape& trunk_shape = cache.pool_from;
  Tensor g_trunk(trunk_shape);
  for (std::size_t b = 0; b < easpp_branches_.size(); ++b)
    g_trunk += easpp_branches_[b].backward(relu_backward(g_branch[b], cache.branch_pre[b]), cache.branches[b]);

  Tensor g_pool = resize_nearest_backward(g_branch[easpp_branches_.size()], 1, 1);
  g_pool = easpp_pool_.backward(relu_backward(g_pool, cache.pool_pre), cache.pool_conv);
  g_trunk += global_avg_pool_backward(g_pool, trunk_shape);

  Tensor g_low = resize_nearest_backward(g_branch.back(), cache.lowscale_hw[0], cache.lowscale_hw[1]);
  g_low = easpp_lowscale_.backward(relu_backward(g_low, cache.lowscale_pre), cache.lowscale_conv);
  return {std::move(g_trunk), std::move(g_low)};
}

Tensor HybridModel::backward(const ForwardCache& cache, const Tensor* grad_class_logits,
                             const Tensor* grad_seg_logits) {
  if (cache.stem.blocks.empty()) throw std::logic_error("model backward: missing forward cache");
  const Shape shared_shape = cache.stem.blocks.back().sum_pre.shape();
  Tensor g_shared(shared_shape);
  if (grad_class_logits) g_shared += classifier_backward(*grad_class_logits, cache.classifier);
  if (grad_seg_logits) {
    const std::size_t factor = config_.trunk_stride();
    Tensor g = upsample_nearest_backward(*grad_seg_logits, factor);
    g = decoder_.backward(g, cache.segment.projection);
    auto [g_trunk, g_low] = easpp_backward(g, cache.segment.easpp);
    g_shared += trunk_backward(g_trunk, g_low, cache.trunk);
  }
  return stem_backward(g_shared, cache.stem);
}

}  // namespace follipipe
