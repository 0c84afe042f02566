#include <benchmark/benchmark.h>

#include <random>

#include "follipipe/loss.hpp"
#include "follipipe/model.hpp"
#include "follipipe/ops.hpp"
#include "follipipe/rng.hpp"

using namespace follipipe;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor t(shape);
  for (double& v : t.values()) v = uniform(rng, -1.0, 1.0);
  return t;
}

// args: channels, spatial extent, dilation
void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  const auto d = static_cast<std::size_t>(state.range(2));
  const ConvSpec spec = ConvSpec::square(c, c, 3, 1, d, d);
  const Tensor x = random_tensor({8, c, hw, hw}, 1);
  const Tensor w = random_tensor(spec.weight_shape(), 2);
  const Tensor b = random_tensor({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, spec));
}
BENCHMARK(BM_Conv2d)->Args({8, 32, 1})->Args({16, 16, 1})->Args({16, 8, 2})->Unit(benchmark::kMicrosecond);

void BM_ModelForward(benchmark::State& state) {
  const HybridModel m = HybridModel::init_weights(1, ModelConfig{});
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 3, 64, 64}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
}
BENCHMARK(BM_ModelForward)->Arg(1)->Arg(8)->Unit(benchmark::kMicrosecond);

// Per-patch cost of a skipped patch (stem + classifier) vs a segmented one.
void BM_PatchGated(benchmark::State& state) {
  const HybridModel m = HybridModel::init_weights(1, ModelConfig{});
  const Tensor x = random_tensor({1, 3, 64, 64}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(m.classify(m.stem_forward(x)));
}
BENCHMARK(BM_PatchGated)->Unit(benchmark::kMicrosecond);

void BM_PatchSegmented(benchmark::State& state) {
  const HybridModel m = HybridModel::init_weights(1, ModelConfig{});
  const Tensor x = random_tensor({1, 3, 64, 64}, 5);
  for (auto _ : state) {
    const Tensor shared = m.stem_forward(x);
    benchmark::DoNotOptimize(m.classify(shared));
    const TrunkOutput t = m.trunk_forward(shared);
    benchmark::DoNotOptimize(m.segment(t.features, t.lowscale));
  }
}
BENCHMARK(BM_PatchSegmented)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  HybridModel m = HybridModel::init_weights(1, ModelConfig{});
  const Tensor x = random_tensor({8, 3, 64, 64}, 6);
  std::vector<std::uint8_t> masks(8 * 64 * 64), labels(8);
  for (std::size_t i = 0; i < masks.size(); ++i) masks[i] = (i / 64 % 64) > 32;
  for (auto _ : state) {
    ForwardCache cache;
    const ModelOutput out = m.forward(x, &cache);
    CrossEntropy cls = cls_cross_entropy(out.class_logits, labels);
    AdaptiveLoss seg = adaptive_loss(out.seg_logits, masks, Criterion::MeanIoU);
    m.zero_grad();
    m.backward(cache, &cls.grad, &seg.grad);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
