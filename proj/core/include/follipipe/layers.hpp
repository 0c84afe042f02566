#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "follipipe/ops.hpp"
#include "follipipe/tensor.hpp"

namespace follipipe {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

using ParameterList = std::vector<Parameter*>;
using ConstParameterList = std::vector<const Parameter*>;

/// Fan-in scaled uniform init: U(-sqrt(gain / fan_in), +sqrt(gain / fan_in)).
void init_uniform(Parameter& p, std::size_t fan_in, double gain, std::mt19937_64& rng);

/// Forward input recorded for a later backward pass.
struct LayerCache {
  std::optional<Tensor> input;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, const ConvSpec& spec);

  Tensor forward(const Tensor& x, LayerCache* cache = nullptr) const;
  /// Accumulates parameter gradients and returns the input gradient. Throws
  /// std::logic_error if the cache holds no forward input.
  Tensor backward(const Tensor& grad_out, const LayerCache& cache);

  const ConvSpec& spec() const { return spec_; }
  void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }
  void collect(ConstParameterList& out) const { out.push_back(&weight); out.push_back(&bias); }
  void init(double gain, std::mt19937_64& rng);

  Parameter weight;
  Parameter bias;

 private:
  ConvSpec spec_;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in_features, std::size_t out_features);

  Tensor forward(const Tensor& x, LayerCache* cache = nullptr) const;
  Tensor backward(const Tensor& grad_out, const LayerCache& cache);

  void collect(ParameterList& out) { out.push_back(&weight); out.push_back(&bias); }
  void collect(ConstParameterList& out) const { out.push_back(&weight); out.push_back(&bias); }
  void init(double gain, std::mt19937_64& rng);

  Parameter weight;
  Parameter bias;
};

}  // namespace follipipe
