#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sst/forecaster.hpp"

namespace sst::bench {

struct ScalingRecord {
  std::string model;
  std::size_t length = 0;
  double forward_backward_ms = 0.0;  // median over trials
  std::size_t peak_bytes = 0;
  std::string status = "ok";  // ok | oom

  std::string to_json_line() const;
};

struct SlopeFit {
  std::string model;
  double slope = 0.0;
  std::size_t points = 0;
  bool sufficient = false;  // at least four ok points
};

struct BenchConfig {
  std::vector<std::string> models{"full_attention_transformer", "patched_transformer", "sst"};
  std::vector<std::size_t> lengths{256, 512, 1024, 2048, 4096, 8192};
  std::size_t trials = 5;
  std::size_t batch = 1;
  std::size_t horizon = 96;
  std::size_t d_model = 16;
  std::size_t heads = 4;
  /// Bytes a single (model, L) measurement may hold on top of what was live
  /// before it started; 0 disables the cap.
  std::size_t cap_bytes = 0;
  std::uint64_t seed = 0;
};

/// Bench models at input length L: a one-block conv-embedded transformer
/// with full attention over raw steps, the same with patch tokens, and SST
/// with S = L/2 and the default patch and window constants.
std::unique_ptr<Forecaster> make_bench_model(const std::string& name, std::size_t length, const BenchConfig& cfg);

/// One warm-up plus `trials` timed forward+backward passes.
ScalingRecord measure(const std::string& model, std::size_t length, const BenchConfig& cfg);

/// Every (model, L) pair, each model's lengths ascending. Once a model hits
/// the cap, it is recorded oom at that length and all larger ones.
std::vector<ScalingRecord> bench_scaling(const BenchConfig& cfg,
                                         const std::function<void(const ScalingRecord&)>& on_record = {});

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

SlopeFit fit_slope(const std::vector<ScalingRecord>& records, const std::string& model);

/// Smallest length at which `model` is oom, or 0 if it never is.
std::size_t first_oom(const std::vector<ScalingRecord>& records, const std::string& model);

}  // namespace sst::bench
