#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sst/tensor.hpp"

namespace sst::data {

/// T x M multivariate series, timestamps ascending.
struct Dataset {
  std::string name;
  Tensor values;  // [T, M]
  std::vector<std::string> variate_names;
  std::vector<std::string> timestamps;
  std::string frequency;

  std::size_t length() const { return values.rank() == 2 ? values.dim(0) : 0; }
  std::size_t variates() const { return values.rank() == 2 ? values.dim(1) : 0; }
  /// Rows [begin, end) as a new dataset.
  Dataset rows(std::size_t begin, std::size_t end) const;
};

Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(std::istream& in, const std::string& name);
void write_csv(const std::filesystem::path& path, const Dataset& ds);

struct SplitScheme {
  enum class Kind { Ratio, EttCalendar };
  Kind kind = Kind::Ratio;
  /// Samples per hour, used by the calendar scheme (1 for ETTh, 4 for ETTm).
  std::size_t steps_per_hour = 1;

  static SplitScheme ratio() { return {}; }
  static SplitScheme ett_calendar(std::size_t steps_per_hour) {
    return {Kind::EttCalendar, steps_per_hour};
  }
  /// Calendar scheme for names starting with "ETT", ratio otherwise.
  static SplitScheme infer(const Dataset& ds);
};

struct SplitRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Each split dataset carries up to `context` rows of the preceding split in
/// front of its own range so the first target can start at the boundary.
struct DatasetSplit {
  Dataset train, val, test;
  SplitRange train_range, val_range, test_range;
  std::size_t val_context = 0, test_context = 0;
};

/// Ratio is 7:1:2 with floor() on train and test; the calendar scheme is
/// 12/4/4 months of 30 days.
DatasetSplit split_dataset(const Dataset& ds, SplitScheme scheme, std::size_t lookback,
                           std::size_t horizon);

struct SeriesWindow {
  Tensor lookback;  // [L, M]
  Tensor target;    // [F, M]
  std::size_t origin = 0;
};

std::vector<std::size_t> window_origins(std::size_t length, std::size_t lookback, std::size_t horizon,
                                        std::size_t stride);
SeriesWindow window_at(const Dataset& ds, std::size_t origin, std::size_t lookback, std::size_t horizon);
std::vector<SeriesWindow> make_windows(const Dataset& ds, std::size_t lookback, std::size_t horizon,
                                       std::size_t stride = 1);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  double epsilon = 1e-5;

  double scale(std::size_t m) const { return std[m] > epsilon ? std[m] : epsilon; }
};

/// Population mean/std per variate over the rows of block [rows, M].
NormStats compute_stats(const Tensor& block, double epsilon = 1e-5);
Tensor apply_norm(const Tensor& block, const NormStats& stats);
Tensor revin_denormalize(const Tensor& block, const NormStats& stats);
/// Normalises the lookback with its own statistics. The target is untouched.
std::pair<SeriesWindow, NormStats> revin_normalize(const SeriesWindow& w, double epsilon = 1e-5);

struct Decomposition {
  std::vector<double> trend;
  std::vector<double> residual;
};

/// Centred moving average with windows truncated at the edges.
Decomposition moving_average_decompose(std::span<const double> x, std::size_t k);

double metric_mse(const Tensor& pred, const Tensor& truth);
double metric_mae(const Tensor& pred, const Tensor& truth);

struct SyntheticSpec {
  std::size_t length = 5000;
  double trend_slope = 0.0;
  double period = 24.0;
  double amplitude = 1.0;
  double spike_rate = 0.0;
  double spike_mag = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::size_t variates = 1;

  /// Parses `key = value` lines; '#' starts a comment. Unknown keys throw ConfigError.
  static SyntheticSpec parse(std::istream& in);
  static SyntheticSpec from_map(const std::map<std::string, std::string>& kv);
};

/// Ground-truth components, each [T, M]; values = ((trend + seasonal) + noise) + spikes.
struct SyntheticSeries {
  Dataset dataset;
  Tensor trend, seasonal, noise, spikes;
};

SyntheticSeries synth_generate(const SyntheticSpec& spec);

}  // namespace sst::data
