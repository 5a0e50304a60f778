#pragma once

#include <span>
#include <utility>
#include <vector>

#include "sst/tensor.hpp"

namespace sst::patcher {

struct PatchSpec {
  std::size_t patch = 1;   // P
  std::size_t stride = 1;  // Str
  std::size_t range_len = 1;

  void validate() const;
};

/// N x P patch matrix; row i is source[i*Str, i*Str+P).
struct PatchedSeries {
  Tensor patches;  // [N, P]
  PatchSpec spec;
  std::size_t count = 0;
};

/// floor((L - P) / Str) + 1. Trailing steps past the last patch are dropped.
std::size_t num_patches(std::size_t length, std::size_t patch, std::size_t stride);

/// Relative resolution sqrt(P) / Str.
double r_pts(std::size_t patch, std::size_t stride);
/// Length-dependent form N * sqrt(P).
double r_pts_absolute(std::size_t length, std::size_t patch, std::size_t stride);

PatchedSeries patch(std::span<const double> x, const PatchSpec& spec);

/// Long PTS over the whole lookback, short PTS over its last `short_len` steps.
/// Rejects configurations where the long range is not strictly coarser.
std::pair<PatchedSeries, PatchedSeries> multi_scale_patch(std::span<const double> lookback,
                                                          const PatchSpec& long_spec,
                                                          const PatchSpec& short_spec,
                                                          std::size_t short_len);

/// Configuration-time check shared by models: S < L, P <= range, and
/// r_pts(long) < r_pts(short).
void check_multi_scale(std::size_t lookback, std::size_t short_len, const PatchSpec& long_spec,
                       const PatchSpec& short_spec);

}  // namespace sst::patcher
