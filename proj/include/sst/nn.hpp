#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "sst/checkpoint.hpp"
#include "sst/ops.hpp"

namespace sst::nn {

/// Seeded source for parameter initialisation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  std::uint64_t next() { return gen_(); }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

Tensor uniform_param(Shape shape, double bound, Rng& rng);
Tensor constant_param(Shape shape, double value);

/// Anything holding trainable tensors. Names are dotted paths, stable across
/// runs, and double as checkpoint record names.
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(const std::string& prefix, NamedTensors& out) const = 0;

  NamedTensors parameters() const {
    NamedTensors out;
    collect("", out);
    return out;
  }
  std::size_t parameter_count() const;
};

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// y = x W + b over the last axis. W is stored [in, out].
class Linear : public Module {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor weight;
  Tensor bias;  // rank-0 placeholder when disabled
  bool has_bias = false;
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width, double eps = 1e-5);

  Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }
  void collect(const std::string& prefix, NamedTensors& out) const override;

  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
};

}  // namespace sst::nn
