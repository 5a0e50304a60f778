#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "sst/config.hpp"
#include "sst/train.hpp"

namespace sst {

struct PreparedData {
  data::Dataset dataset;
  train::PreparedWindows train, val, test;
};

/// Loads the CSV (or generates the synthetic series), splits it and cuts
/// normalised windows.
PreparedData prepare_data(const RunConfig& cfg);

train::TrainConfig train_config(const RunConfig& cfg);

struct RunOutcome {
  std::unique_ptr<Forecaster> model;
  train::TrainResult result;
  train::ForecastReport report;  // on the test split
};

/// Builds, trains and evaluates the configured model. `history` receives
/// one JSON line per epoch when non-null.
RunOutcome run_experiment(const RunConfig& cfg, const PreparedData& data, std::ostream* history = nullptr);

/// Entry point behind the command-line tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sst
