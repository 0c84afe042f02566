#include "follipipe/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "follipipe/rng.hpp"

namespace follipipe {
namespace {

const Tensor& cached_input(const LayerCache& cache, const std::string& layer) {
  if (!cache.input) throw std::logic_error(layer + ": backward called without a forward cache");
  return *cache.input;
}

}  // namespace

void init_uniform(Parameter& p, std::size_t fan_in, double gain, std::mt19937_64& rng) {
  const double bound = std::sqrt(gain / static_cast<double>(fan_in));
  for (auto& v : p.value.values()) v = uniform(rng, -bound, bound);
}

Conv2d::Conv2d(const std::string& name, const ConvSpec& spec)
    : weight(name + ".weight", spec.weight_shape()), bias(name + ".bias", {spec.out_channels}), spec_(spec) {
  spec_.validate();
}

Tensor Conv2d::forward(const Tensor& x, LayerCache* cache) const {
  if (cache) cache->input = x;
  return conv2d(x, weight.value, bias.value, spec_);
}

Tensor Conv2d::backward(const Tensor& grad_out, const LayerCache& cache) {
  ConvGrads g = conv2d_backward(grad_out, cached_input(cache, weight.name), weight.value, spec_);
  weight.grad += g.weights;
  bias.grad += g.bias;
  return std::move(g.input);
}

void Conv2d::init(double gain, std::mt19937_64& rng) {
  init_uniform(weight, spec_.fan_in(), gain, rng);
  bias.value.fill(0.0);
}

Linear::Linear(const std::string& name, std::size_t in_features, std::size_t out_features)
    : weight(name + ".weight", {in_features, out_features}), bias(name + ".bias", {out_features}) {}

Tensor Linear::forward(const Tensor& x, LayerCache* cache) const {
  if (cache) cache->input = x;
  return linear(x, weight.value, bias.value);
}

Tensor Linear::backward(const Tensor& grad_out, const LayerCache& cache) {
  LinearGrads g = linear_backward(grad_out, cached_input(cache, weight.name), weight.value);
  weight.grad += g.weights;
  bias.grad += g.bias;
  return std::move(g.input);
}

void Linear::init(double gain, std::mt19937_64& rng) {
  init_uniform(weight, weight.value.dim(0), gain, rng);
  bias.value.fill(0.0);
}

}  // namespace follipipe
