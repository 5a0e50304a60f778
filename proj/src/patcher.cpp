#include "sst/patcher.hpp"

#include <cmath>
#include <string>

namespace sst::patcher {

void PatchSpec::validate() const {
  if (patch < 1 || stride < 1) throw ParameterError("patch and stride must be >= 1");
  if (patch > range_len) {
    throw ParameterError("patch length " + std::to_string(patch) + " exceeds range " + std::to_string(range_len));
  }
}

std::size_t num_patches(std::size_t length, std::size_t patch, std::size_t stride) {
  if (patch < 1 || stride < 1) throw ParameterError("patch and stride must be >= 1");
  if (patch > length) {
    throw ParameterError("patch length " + std::to_string(patch) + " exceeds length " + std::to_string(length));
  }
  return (length - patch) / stride + 1;
}

double r_pts(std::size_t patch, std::size_t stride) {
  return std::sqrt(static_cast<double>(patch)) / static_cast<double>(stride);
}

double r_pts_absolute(std::size_t length, std::size_t patch, std::size_t stride) {
  return static_cast<double>(num_patches(length, patch, stride)) * std::sqrt(static_cast<double>(patch));
}

PatchedSeries patch(std::span<const double> x, const PatchSpec& spec) {
  PatchSpec s = spec;
  s.range_len = x.size();
  s.validate();
  const std::size_t n = num_patches(x.size(), s.patch, s.stride);
  Tensor rows({n, s.patch});
  auto out = rows.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < s.patch; ++j) out[i * s.patch + j] = x[i * s.stride + j];
  }
  return {rows, s, n};
}

void check_multi_scale(std::size_t lookback, std::size_t short_len, const PatchSpec& long_spec,
                       const PatchSpec& short_spec) {
  if (short_len == 0 || short_len >= lookback) {
    throw ConfigError("short range " + std::to_string(short_len) + " must satisfy 0 < S < L = " +
                      std::to_string(lookback));
  }
  PatchSpec l = long_spec;
  l.range_len = lookback;
  PatchSpec s = short_spec;
  s.range_len = short_len;
  try {
    l.validate();
    s.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  const double rl = r_pts(l.patch, l.stride);
  const double rs = r_pts(s.patch, s.stride);
  if (!(rl < rs)) {
    throw ConfigError("long-range resolution " + std::to_string(rl) +
                      " must be strictly below short-range resolution " + std::to_string(rs));
  }
}

std::pair<PatchedSeries, PatchedSeries> multi_scale_patch(std::span<const double> lookback,
                                                          const PatchSpec& long_spec,
                                                          const PatchSpec& short_spec,
                                                          std::size_t short_len) {
  check_multi_scale(lookback.size(), short_len, long_spec, short_spec);
  return {patch(lookback, long_spec), patch(lookback.last(short_len), short_spec)};
}

}  // namespace sst::patcher
