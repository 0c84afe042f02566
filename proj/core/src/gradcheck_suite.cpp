#include "follipipe/gradcheck_suite.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <random>

#include "follipipe/grad_check.hpp"
#include "follipipe/loss.hpp"
#include "follipipe/ops.hpp"
#include "follipipe/rng.hpp"

namespace follipipe {

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = uniform(rng, -scale, scale);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

using Case = std::function<GradCheckResult(std::mt19937_64& rng, std::uint64_t seed)>;

GradCheckOptions options_for(std::uint64_t seed, bool piecewise_linear, std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.seed = seed;
  o.skip_kinks = piecewise_linear;
  // Piecewise-linear objectives are exact between kinks, so a wide step only
  // lowers rounding noise; probes that straddle a kink are skipped.
  if (piecewise_linear) o.epsilon = 1e-2;
  o.max_coords_per_input = max_coords;
  return o;
}

Case conv_case(ConvSpec spec, std::size_t h, std::size_t w) {
  return [spec, h, w](std::mt19937_64& rng, std::uint64_t seed) {
    Tensor x = random_tensor({2, spec.in_channels, h, w}, rng);
    Tensor k = random_tensor(spec.weight_shape(), rng);
    Tensor b = random_tensor({spec.out_channels}, rng);
    const Tensor r = random_tensor(conv2d(x, k, b, spec).shape(), rng);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      const double f = dot(r, conv2d(x, k, b, spec));
      if (grads) {
        ConvGrads g = conv2d_backward(r, x, k, spec);
        *grads = {std::move(g.input), std::move(g.weights), std::move(g.bias)};
      }
      return f;
    };
    return grad_check(fn, {&x, &k, &b}, options_for(seed, false));
  };
}

// Unary op with a fixed upstream weighting r.
Case unary_case(Shape shape, std::function<Tensor(const Tensor&)> f,
                std::function<Tensor(const Tensor& grad, const Tensor& x)> df, bool piecewise_linear) {
  return [=](std::mt19937_64& rng, std::uint64_t seed) {
    Tensor x = random_tensor(shape, rng);
    const Tensor r = random_tensor(f(x).shape(), rng);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      const double v = dot(r, f(x));
      if (grads) *grads = {df(r, x)};
      return v;
    };
    return grad_check(fn, {&x}, options_for(seed, piecewise_linear));
  };
}

GradCheckResult linear_case(std::mt19937_64& rng, std::uint64_t seed) {
  Tensor x = random_tensor({3, 5}, rng);
  Tensor w = random_tensor({5, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  const Tensor r = random_tensor({3, 4}, rng);
  const GradFn fn = [&](std::vector<Tensor>* grads) {
    const double v = dot(r, linear(x, w, b));
    if (grads) {
      LinearGrads g = linear_backward(r, x, w);
      *grads = {std::move(g.input), std::move(g.weights), std::move(g.bias)};
    }
    return v;
  };
  return grad_check(fn, {&x, &w, &b}, options_for(seed, false));
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::vector<std::uint8_t> out(n);
  for (auto& v : out) v = static_cast<std::uint8_t>(uniform_index(rng, classes));
  return out;
}

GradCheckResult seg_ce_case(std::mt19937_64& rng, std::uint64_t seed) {
  Tensor logits = random_tensor({2, 2, 4, 4}, rng, 3.0);
  const auto gt = random_labels(2 * 4 * 4, 2, rng);
  const GradFn fn = [&](std::vector<Tensor>* grads) {
    CrossEntropy ce = seg_cross_entropy(logits, gt);
    if (grads) *grads = {std::move(ce.grad)};
    return ce.loss;
  };
  return grad_check(fn, {&logits}, options_for(seed, false));
}

GradCheckResult cls_ce_case(std::mt19937_64& rng, std::uint64_t seed) {
  Tensor logits = random_tensor({4, 3}, rng, 3.0);
  const auto labels = random_labels(4, 3, rng);
  const GradFn fn = [&](std::vector<Tensor>* grads) {
    CrossEntropy ce = cls_cross_entropy(logits, labels);
    if (grads) *grads = {std::move(ce.grad)};
    return ce.loss;
  };
  return grad_check(fn, {&logits}, options_for(seed, false));
}

Case adaptive_case(Criterion which) {
  return [which](std::mt19937_64& rng, std::uint64_t seed) {
    Tensor logits = random_tensor({2, 2, 4, 4}, rng, 3.0);
    const auto gt = random_labels(2 * 4 * 4, 2, rng);
    const GradFn fn = [&](std::vector<Tensor>* grads) {
      AdaptiveLoss a = adaptive_loss(logits, gt, which);
      if (grads) *grads = {std::move(a.grad)};
      return a.value;
    };
    return grad_check(fn, {&logits}, options_for(seed, false));
  };
}

void randomize(ParameterList params, std::mt19937_64& rng) {
  for (Parameter* p : params)
    for (double& v : p->value.values()) v = uniform(rng, -0.5, 0.5);
}

GradCheckResult residual_case(std::mt19937_64& rng, std::uint64_t seed) {
  ResidualBlock block("block", 3, 4, 2);
  ParameterList params;
  block.collect(params);
  randomize(params, rng);
  Tensor x = random_tensor({2, 3, 6, 6}, rng);
  const Tensor r = random_tensor(block.forward(x, nullptr).shape(), rng);
  std::vector<Tensor*> inputs{&x};
  for (Parameter* p : params) inputs.push_back(&p->value);
  const GradFn fn = [&](std::vector<Tensor>* grads) {
    if (!grads) return dot(r, block.forward(x, nullptr));
    for (Parameter* p : params) p->grad.fill(0.0);
    ResidualBlock::Cache cache;
    const double v = dot(r, block.forward(x, &cache));
    grads->clear();
    grads->push_back(block.backward(r, cache));
    for (Parameter* p : params) grads->push_back(p->grad);
    return v;
  };
  return grad_check(fn, inputs, options_for(seed, true));
}

GradCheckResult model_case(std::mt19937_64& rng, std::uint64_t seed) {
  HybridModel model = HybridModel::init_weights(seed, gradcheck_model_config());
  ParameterList params = model.parameters();
  randomize(params, rng);
  const std::size_t p = model.config().patch_size;
  Tensor x = random_tensor({2, 3, p, p}, rng);
  const ModelOutput shape_probe = model.forward(x);
  const Tensor r_cls = random_tensor(shape_probe.class_logits.shape(), rng);
  const Tensor r_seg = random_tensor(shape_probe.seg_logits.shape(), rng);
  std::vector<Tensor*> inputs{&x};
  for (Parameter* q : params) inputs.push_back(&q->value);
  const GradFn fn = [&](std::vector<Tensor>* grads) {
    ForwardCache cache;
    const ModelOutput out = model.forward(x, grads ? &cache : nullptr);
    const double v = dot(r_cls, out.class_logits) + dot(r_seg, out.seg_logits);
    if (grads) {
      model.zero_grad();
      grads->clear();
      grads->push_back(model.backward(cache, &r_cls, &r_seg));
      for (Parameter* q : params) grads->push_back(q->grad);
    }
    return v;
  };
  return grad_check(fn, inputs, options_for(seed, true));
}

}  // namespace

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.patch_size = 16;
  c.stem_width = 3;
  c.stage_widths = {4, 4, 5};
  c.blocks_per_stage = 1;
  c.classifier_conv_width = 3;
  c.classifier_hidden = 4;
  c.aspp_width = 3;
  c.aspp_rates = {1, 2, 3};
  c.fusion_width = 3;
  return c;
}

bool GradCheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

std::string GradCheckReport::format() const {
  std::string out;
  char line[160];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-28s max_rel_err=%.3e checked=%zu skipped=%zu seeds=%zu %s\n",
                  e.name.c_str(), e.max_relative_error, e.checked, e.skipped, e.seeds, e.passed() ? "ok" : "FAIL");
    out += line;
  }
  return out;
}

GradCheckReport gradcheck_suite(std::size_t seeds) {
  const std::vector<std::pair<std::string, Case>> cases = {
      {"conv2d 3x3 pad1", conv_case(ConvSpec::square(3, 4, 3, 1, 1), 5, 6)},
      {"conv2d 3x3 stride2 dil2", conv_case(ConvSpec::square(2, 3, 3, 2, 2, 2), 7, 6)},
      {"conv2d 1x1", conv_case(ConvSpec::square(4, 3, 1, 1, 0), 4, 5)},
      {"relu", unary_case({2, 3, 4, 4}, relu, relu_backward, true)},
      {"maxpool2d", unary_case(
                        {2, 3, 6, 6}, [](const Tensor& x) { return maxpool2d(x, 2, 2); },
                        [](const Tensor& g, const Tensor& x) { return maxpool2d_backward(g, x, 2, 2); }, true)},
      {"global_avg_pool", unary_case({2, 3, 4, 5}, global_avg_pool,
                                     [](const Tensor& g, const Tensor& x) { return global_avg_pool_backward(g, x.shape()); },
                                     false)},
      {"linear", linear_case},
      {"upsample_nearest x8", unary_case(
                                  {2, 2, 3, 3}, [](const Tensor& x) { return upsample_nearest(x, 8); },
                                  [](const Tensor& g, const Tensor&) { return upsample_nearest_backward(g, 8); }, false)},
      {"resize_nearest 5x3->3x7", unary_case(
                                      {2, 2, 5, 3}, [](const Tensor& x) { return resize_nearest(x, 3, 7); },
                                      [](const Tensor& g, const Tensor&) { return resize_nearest_backward(g, 5, 3); },
                                      false)},
      {"seg_cross_entropy", seg_ce_case},
      {"cls_cross_entropy", cls_ce_case},
      {"adaptive_loss pAcc", adaptive_case(Criterion::PixelAccuracy)},
      {"adaptive_loss mIoU", adaptive_case(Criterion::MeanIoU)},
      {"residual block", residual_case},
      {"hybrid model", model_case},
  };
  GradCheckReport report;
  for (const auto& [name, run] : cases) {
    GradCheckEntry e{name, 0.0, 0, 0, seeds};
    for (std::size_t s = 0; s < seeds; ++s) {
      std::mt19937_64 rng(0x9e3779b97f4a7c15ULL * (s + 1));
      const GradCheckResult r = run(rng, s);
      e.max_relative_error = std::max(e.max_relative_error, r.max_relative_error);
      e.checked += r.checked;
      e.skipped += r.skipped;
    }
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace follipipe
