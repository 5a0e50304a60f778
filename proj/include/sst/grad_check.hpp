#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sst/tensor.hpp"

namespace sst {

/// Central-difference gradient of a scalar function, one coordinate at a time.
/// f must be deterministic; x itself is not modified.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||), or the absolute norm when both are ~0.
double relative_error(std::span<const double> a, std::span<const double> b);

struct GradCheckResult {
  std::string worst_param;
  double max_relative_error = 0.0;
};

/// Compares tape gradients of loss() against finite differences for every
/// tensor in params. loss() must rebuild its graph from the params on each call.
GradCheckResult gradient_check(const std::function<Tensor()>& loss,
                               const std::vector<std::pair<std::string, Tensor>>& params,
                               double h = 1e-5);

}  // namespace sst
