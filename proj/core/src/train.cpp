#include "follipipe/train.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "follipipe/checkpoint.hpp"
#include "follipipe/rng.hpp"

namespace follipipe {

namespace {

// Cycles through a shuffled pool, reshuffling at each wrap.
class PoolSampler {
 public:
  PoolSampler(std::vector<std::size_t> pool, std::mt19937_64& rng) : pool_(std::move(pool)), rng_(&rng) {
    shuffle_in_place(pool_, *rng_);
  }
  bool empty() const { return pool_.empty(); }
  std::size_t next() {
    if (pos_ == pool_.size()) {
      shuffle_in_place(pool_, *rng_);
      pos_ = 0;
    }
    return pool_[pos_++];
  }

 private:
  std::vector<std::size_t> pool_;
  std::mt19937_64* rng_;
  std::size_t pos_ = 0;
};

class BatchSampler {
 public:
  BatchSampler(const std::vector<PatchSample>& samples, const TrainConfig& config, std::mt19937_64& rng)
      : batch_(config.batch_size), share_(config.follicular_share) {
    std::array<std::vector<std::size_t>, kPatchClasses> by_class;
    std::vector<std::size_t> all;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      by_class[static_cast<std::size_t>(samples[i].label)].push_back(i);
      all.push_back(i);
    }
    for (auto& pool : by_class) pools_.emplace_back(std::move(pool), rng);
    pools_.emplace_back(std::move(all), rng);
  }

  std::vector<std::size_t> next() {
    const auto n_follicular = static_cast<std::size_t>(share_ * static_cast<double>(batch_) + 0.5);
    std::vector<std::size_t> out;
    out.reserve(batch_);
    for (std::size_t i = 0; i < batch_; ++i) {
      std::size_t cls;
      if (i < n_follicular) {
        cls = 0;
      } else {
        cls = 1 + alternate_;
        alternate_ ^= 1;
      }
      PoolSampler& pool = pools_[cls].empty() ? pools_.back() : pools_[cls];
      out.push_back(pool.next());
    }
    return out;
  }

 private:
  std::size_t batch_;
  double share_;
  std::vector<PoolSampler> pools_;  // Follicular, Colloid, NonInfo, any
  std::size_t alternate_ = 0;
};

struct Batch {
  Tensor input;
  std::vector<std::uint8_t> masks;
  std::vector<std::uint8_t> labels;
};

Batch assemble(const std::vector<PatchSample>& samples, const std::vector<std::size_t>& indices, std::size_t p) {
  Batch b{Tensor({indices.size(), 3, p, p}), {}, {}};
  const std::size_t stride = 3 * p * p;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const PatchSample& s = samples[indices[k]];
    if (s.input.size() != stride || s.mask.size() != p * p)
      throw std::invalid_argument("training sample does not match patch size " + std::to_string(p));
    std::copy(s.input.begin(), s.input.end(), b.input.data() + k * stride);
    b.masks.insert(b.masks.end(), s.mask.begin(), s.mask.end());
    b.labels.push_back(static_cast<std::uint8_t>(s.label));
  }
  return b;
}

void require_file(const std::filesystem::path& path, const char* what) {
  if (!std::filesystem::is_regular_file(path))
    throw std::runtime_error(std::string(what) + " not found: " + path.string());
}

}  // namespace

std::size_t steps_per_epoch(const TrainConfig& config, std::size_t n_samples) {
  if (config.steps_per_epoch > 0) return config.steps_per_epoch;
  return (n_samples + config.batch_size - 1) / config.batch_size;
}

TrainResult train_model(const TrainConfig& config, const std::vector<PatchSample>& samples,
                        const StepObserver& observer) {
  config.validate();
  TrainResult result{HybridModel::init_weights(config.seed, config.model), {}};
  const std::size_t total = config.epochs * steps_per_epoch(config, samples.size());
  if (total == 0) return result;
  if (samples.empty()) throw std::invalid_argument("train: no training patches");

  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  BatchSampler sampler(samples, config, rng);
  HybridModel& model = result.model;
  ParameterList params = model.parameters();
  const double w = config.joint_weight;

  for (std::size_t step = 1; step <= total; ++step) {
    const Batch batch = assemble(samples, sampler.next(), config.patch_size());
    ForwardCache cache;
    const ModelOutput out = model.forward(batch.input, &cache);

    CrossEntropy cls = cls_cross_entropy(out.class_logits, batch.labels);
    LossReport report;
    Tensor seg_grad;
    if (config.loss_mode.adaptive) {
      AdaptiveLoss seg = adaptive_loss(out.seg_logits, batch.masks, config.loss_mode.criterion);
      report.cross_entropy = seg.cross_entropy;
      report.m = seg.m;
      report.adaptive_loss = seg.value;
      seg_grad = std::move(seg.grad);
    } else {
      CrossEntropy seg = seg_cross_entropy(out.seg_logits, batch.masks);
      report.cross_entropy = seg.loss;
      report.adaptive_loss = seg.loss;
      seg_grad = std::move(seg.grad);
    }
    report.cls_loss = cls.loss;
    report.joint = joint_loss(report.adaptive_loss, cls.loss, w);
    result.log.push_back({step, report});

    seg_grad *= w;
    cls.grad *= 1.0 - w;
    model.zero_grad();
    model.backward(cache, &cls.grad, &seg_grad);
    for (Parameter* p : params) {
      double* v = p->value.data();
      const double* g = p->grad.data();
      for (std::size_t i = 0; i < p->value.size(); ++i) v[i] -= config.learning_rate * g[i];
    }
    if (observer && !observer(step, model)) break;
  }
  return result;
}

std::optional<ChannelStats> reference_stats(const std::filesystem::path& ref_patch) {
  if (ref_patch.empty()) return std::nullopt;
  return image_stats(read_ppm(ref_patch));
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  if (config.manifest.empty()) throw std::invalid_argument("config: manifest is required");
  require_file(config.manifest, "manifest");
  const Manifest manifest = read_manifest(config.manifest);
  if (manifest.patch_size != config.patch_size())
    throw std::invalid_argument("config patch_size " + std::to_string(config.patch_size()) +
                                " differs from manifest patch_size " + std::to_string(manifest.patch_size));
  const auto entries = manifest.select(Split::Train);
  if (entries.empty()) throw std::runtime_error("manifest has no train slides: " + config.manifest.string());
  for (const auto& e : entries) {
    require_file(e.slide, "slide");
    require_file(e.mask, "mask");
    require_file(e.labels, "labels");
  }
  if (!config.ref_patch.empty()) require_file(config.ref_patch, "reference patch");

  const auto samples = load_patches(manifest, Split::Train, reference_stats(config.ref_patch));
  TrainResult result = train_model(config, samples);
  save_checkpoint(config.checkpoint, result.model);
  if (!config.metrics.empty()) write_metrics_csv(config.metrics, result.log, config.loss_mode);
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<StepLog>& log, const LossMode& mode) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics " + path.string());
  const std::string criterion = mode.adaptive ? std::string(to_string(mode.criterion)) : "none";
  out << "step,criterion,ce,M,adaptive,cls,joint\n";
  char line[256];
  for (const auto& s : log) {
    const LossReport& r = s.losses;
    std::snprintf(line, sizeof line, "%zu,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.step, criterion.c_str(), r.cross_entropy,
                  r.m, r.adaptive_loss, r.cls_loss, r.joint);
    out << line;
  }
}

EvalReport evaluate_samples(const HybridModel* model, const std::vector<PatchSample>& samples,
                            std::vector<std::uint8_t>* predictions) {
  EvalReport report;
  if (samples.empty()) throw std::invalid_argument("evaluate: no patches");
  const std::size_t p = model ? model->config().patch_size : 0;
  constexpr std::size_t kChunk = 16;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    std::vector<std::uint8_t> pred_masks, pred_labels, gt_masks, gt_labels;
    for (std::size_t i : idx) {
      gt_masks.insert(gt_masks.end(), samples[i].mask.begin(), samples[i].mask.end());
      gt_labels.push_back(static_cast<std::uint8_t>(samples[i].label));
    }
    if (model) {
      const Batch batch = assemble(samples, idx, p);
      const ModelOutput out = model->forward(batch.input);
      pred_masks = seg_argmax(out.seg_logits);
      pred_labels = class_argmax(out.class_logits);
    } else {
      pred_masks = gt_masks;
      pred_labels = gt_labels;
    }
    report.confusion += confusion(pred_masks, gt_masks, kSegClasses);
    for (std::size_t k = 0; k < pred_labels.size(); ++k) {
      correct += pred_labels[k] == gt_labels[k];
      ++report.classifier_confusion.at(gt_labels[k], pred_labels[k]);
    }
    if (predictions) predictions->insert(predictions->end(), pred_masks.begin(), pred_masks.end());
  }
  report.patches = samples.size();
  report.criteria = all_criteria(report.confusion);
  report.classifier_accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return report;
}

EvalReport evaluate(const HybridModel* model, const Manifest& manifest, Split split,
                    const std::optional<ChannelStats>& ref, const std::filesystem::path& dump_dir) {
  if (model && model->config().patch_size != manifest.patch_size)
    throw std::invalid_argument("model patch_size " + std::to_string(model->config().patch_size) +
                                " differs from manifest patch_size " + std::to_string(manifest.patch_size));
  const auto samples = load_patches(manifest, split, ref);
  if (dump_dir.empty()) return evaluate_samples(model, samples);

  std::vector<std::uint8_t> predictions;
  EvalReport report = evaluate_samples(model, samples, &predictions);
  std::filesystem::create_directories(dump_dir);
  const auto entries = manifest.select(split);
  const std::size_t p = manifest.patch_size;
  std::vector<std::vector<std::pair<PatchCoord, GrayImage>>> per_slide(entries.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    GrayImage m;
    m.width = m.height = p;
    m.pixels.assign(predictions.begin() + i * p * p, predictions.begin() + (i + 1) * p * p);
    per_slide[samples[i].slide].emplace_back(samples[i].coord, std::move(m));
  }
  for (std::size_t s = 0; s < entries.size(); ++s) {
    const RgbImage image = read_ppm(entries[s].slide);
    char name[32];
    std::snprintf(name, sizeof name, "pred_%02zu.pgm", s);
    write_mask(dump_dir / name, stitch(per_slide[s], image.width, image.height));
  }
  return report;
}

std::optional<std::size_t> steps_to_threshold(const TrainConfig& config, const std::vector<PatchSample>& train_set,
                                              const std::vector<PatchSample>& validation, Criterion which,
                                              double threshold, std::size_t eval_every) {
  if (eval_every == 0) throw std::invalid_argument("steps_to_threshold: eval_every must be positive");
  std::optional<std::size_t> reached;
  train_model(config, train_set, [&](std::size_t step, const HybridModel& model) {
    if (step % eval_every != 0) return true;
    if (evaluate_samples(&model, validation).criteria.get(which) >= threshold) reached = step;
    return !reached;
  });
  return reached;
}

}  // namespace follipipe
