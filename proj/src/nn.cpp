#include "sst/nn.hpp"

#include <cmath>

namespace sst::nn {

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor constant_param(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.size();
  return n;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias) : has_bias(bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_param({in, out}, bound, rng);
  if (has_bias) this->bias = uniform_param({out}, bound, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() == 0 || x.dim(x.rank() - 1) != weight.dim(0)) {
    throw DimensionError("linear expects last axis " + std::to_string(weight.dim(0)) + ", got " +
                         shape_str(x.shape()));
  }
  Tensor y = ops::matmul(x.rank() == 1 ? ops::reshape(x, {1, x.dim(0)}) : x, weight);
  if (x.rank() == 1) y = ops::reshape(y, {weight.dim(1)});
  return has_bias ? ops::add(y, bias) : y;
}

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(join(prefix, "weight"), weight);
  if (has_bias) out.emplace_back(join(prefix, "bias"), bias);
}

LayerNorm::LayerNorm(std::size_t width, double eps)
    : gamma(constant_param({width}, 1.0)), beta(constant_param({width}, 0.0)), eps(eps) {}

void LayerNorm::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(join(prefix, "gamma"), gamma);
  out.emplace_back(join(prefix, "beta"), beta);
}

}  // namespace sst::nn
