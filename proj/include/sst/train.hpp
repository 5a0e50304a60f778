#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sst/data.hpp"
#include "sst/forecaster.hpp"

namespace sst::train {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// First/second moments per parameter plus the step counter.
struct OptimizerState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam update of every parameter from its accumulated grad.
/// A parameter without a grad throws ContractError.
void adam_step(const NamedTensors& params, OptimizerState& state, const TrainConfig& cfg);

/// Stops once `patience` consecutive epochs fail to improve on the best loss.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `loss` is a new best.
  bool update(double loss);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t bad_epochs_ = 0;
  std::size_t seen_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double elapsed_ms = 0.0;
};

std::string to_json_line(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Lookbacks instance-normalised with their own statistics; targets scaled
/// by the same statistics.
struct PreparedWindows {
  std::size_t lookback = 0, horizon = 0, variates = 0;
  std::vector<double> x, y;  // row-major [W, L, M] and [W, F, M]
  std::vector<data::NormStats> stats;
  std::vector<std::pair<Tensor, Tensor>> raw;  // (lookback, target) as given

  std::size_t count() const { return stats.size(); }
};

PreparedWindows prepare(const std::vector<data::SeriesWindow>& windows);

/// Gathers windows `idx` into ([B, L, M], [B, F, M]) normalised tensors.
std::pair<Tensor, Tensor> gather(const PreparedWindows& w, std::span<const std::size_t> idx);

/// Mean normalised-scale MSE over all windows, no tape.
double normalized_loss(const Forecaster& model, const PreparedWindows& w, std::size_t batch_size);

/// Adam on the normalised MSE with seeded shuffling, early stopping on the
/// validation loss, and the best parameters restored at the end.
TrainResult train(Forecaster& model, const PreparedWindows& train_set, const PreparedWindows& val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {});

struct ForecastReport {
  std::string model;
  std::size_t horizon = 0;
  std::size_t windows = 0;
  std::size_t variates = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> router_p_long_mean, router_p_long_std;

  std::string to_json() const;
  /// Throws DataError on malformed input.
  static ForecastReport from_json(const std::string& text);
};

/// Forecast callback: normalised [B, L, M] -> normalised [B, F, M].
using PredictFn = std::function<Tensor(const Tensor&)>;

/// Metrics on denormalised forecasts against the raw targets. An empty
/// window set throws ContractError.
ForecastReport evaluate(const Forecaster& model, const PreparedWindows& windows, std::size_t batch_size = 32);
ForecastReport evaluate_with(const PredictFn& predict, const std::string& name, const PreparedWindows& windows,
                             std::size_t batch_size = 32, const Forecaster* router_source = nullptr);

}  // namespace sst::train
