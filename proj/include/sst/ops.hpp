#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sst/tensor.hpp"

// Differentiable primitives. Every function records itself on the active tape
// when an input requires grad. Elementwise binaries follow numpy broadcasting.
namespace sst::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);

/// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor exp(const Tensor& x);
/// log(1 + e^x); identity above 30.
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor tanh(const Tensor& x);

/// Softmax over the last axis with max subtraction. -inf logits get weight 0.
Tensor softmax(const Tensor& x);

/// Normalizes the last axis, then applies gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// x: [B, T, C], weight: [C, k]. Output t sees inputs t-k+1..t (zero left pad).
Tensor causal_depthwise_conv1d(const Tensor& x, const Tensor& weight);

Tensor reshape(const Tensor& x, Shape shape);
/// Collapses axes [start, rank) into one.
Tensor flatten(const Tensor& x, std::size_t start_axis);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose_last2(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Sliding frames over the last axis: [..., L] -> [..., N, size].
Tensor unfold(const Tensor& x, std::size_t size, std::size_t step);

/// Sets entries where fill_where is nonzero to value. fill_where covers the
/// trailing block of x and repeats over the leading dims.
Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& fill_where, double value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums out one axis (removed from the shape).
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Generic attribute record for name-based dispatch.
struct Attrs {
  std::map<std::string, double, std::less<>> num;
  std::map<std::string, std::vector<std::size_t>, std::less<>> ints;
  std::vector<std::uint8_t> mask;

  double get(std::string_view key, double fallback) const;
  const std::vector<std::size_t>& list(std::string_view key) const;
};

/// Name-based entry point over the primitive set. Unknown names raise
/// UnsupportedPrimitiveError.
Tensor apply(std::string_view op_id, std::span<const Tensor> inputs, const Attrs& attrs = {});

/// Counts of primitive invocations on the current thread, for instrumentation.
std::uint64_t invocation_count(std::string_view op_id);
void reset_invocation_counts();

}  // namespace sst::ops
