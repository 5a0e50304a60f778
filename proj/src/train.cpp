#include "sst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace sst::train {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1 || max_epochs < 1) throw ConfigError("batch_size and max_epochs must be >= 1");
}

void adam_step(const NamedTensors& params, OptimizerState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].second.has_grad()) throw ContractError("parameter '" + params[i].first + "' has no gradient");
    if (state.m[i].size() != params[i].second.size()) {
      throw ContractError("moment shape mismatch for '" + params[i].first + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto w = p.data();
    const auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      w[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.eps);
    }
  }
}

bool EarlyStopping::update(double loss) {
  const std::size_t epoch = ++seen_;
  if (epoch == 1 || loss < best_) {
    best_ = loss;
    best_epoch_ = epoch;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["elapsed_ms"] = r.elapsed_ms;
  return j.dump();
}

PreparedWindows prepare(const std::vector<data::SeriesWindow>& windows) {
  PreparedWindows out;
  if (windows.empty()) return out;
  out.lookback = windows.front().lookback.dim(0);
  out.horizon = windows.front().target.dim(0);
  out.variates = windows.front().lookback.dim(1);
  out.x.reserve(windows.size() * out.lookback * out.variates);
  out.y.reserve(windows.size() * out.horizon * out.variates);
  for (const auto& w : windows) {
    if (w.lookback.dim(0) != out.lookback || w.target.dim(0) != out.horizon || w.lookback.dim(1) != out.variates) {
      throw DimensionError("windows must share lookback, horizon and variate count");
    }
    auto [normed, stats] = data::revin_normalize(w);
    const Tensor y = data::apply_norm(w.target, stats);
    out.x.insert(out.x.end(), normed.lookback.data().begin(), normed.lookback.data().end());
    out.y.insert(out.y.end(), y.data().begin(), y.data().end());
    out.stats.push_back(std::move(stats));
    out.raw.emplace_back(w.lookback, w.target);
  }
  return out;
}

std::pair<Tensor, Tensor> gather(const PreparedWindows& w, std::span<const std::size_t> idx) {
  const std::size_t xs = w.lookback * w.variates, ys = w.horizon * w.variates;
  std::vector<double> x(idx.size() * xs), y(idx.size() * ys);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::copy_n(w.x.begin() + static_cast<std::ptrdiff_t>(idx[b] * xs), xs, x.begin() + static_cast<std::ptrdiff_t>(b * xs));
    std::copy_n(w.y.begin() + static_cast<std::ptrdiff_t>(idx[b] * ys), ys, y.begin() + static_cast<std::ptrdiff_t>(b * ys));
  }
  return {Tensor(Shape{idx.size(), w.lookback, w.variates}, std::move(x)),
          Tensor(Shape{idx.size(), w.horizon, w.variates}, std::move(y))};
}

double normalized_loss(const Forecaster& model, const PreparedWindows& w, std::size_t batch_size) {
  if (w.count() == 0) throw ContractError("empty window set");
  NoGradScope no_grad;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < w.count(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(w.count(), start + batch_size); ++i) idx.push_back(i);
    const auto [x, y] = gather(w, idx);
    const Tensor pred = model.forward(x);
    const auto p = pred.data();
    const auto t = y.data();
    for (std::size_t j = 0; j < p.size(); ++j) total += (p[j] - t[j]) * (p[j] - t[j]);
  }
  return total / static_cast<double>(w.count() * w.horizon * w.variates);
}

TrainResult train(Forecaster& model, const PreparedWindows& train_set, const PreparedWindows& val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (train_set.count() == 0 || val_set.count() == 0) throw ContractError("train and validation sets must be non-empty");
  const NamedTensors params = model.parameters();
  OptimizerState state;
  EarlyStopping stopper(cfg.patience);
  std::vector<std::vector<double>> best_values;
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(train_set.count());
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto [x, y] = gather(train_set, std::span(order).subspan(start, n));
      for (const auto& [name, p] : params) Tensor(p).release_grad();
      Tape tape;
      double batch_loss = 0.0;
      try {
        TapeScope scope(tape);
        const Tensor loss = ops::mse_loss(model.forward(x), y);
        batch_loss = loss.item();
        if (!std::isfinite(batch_loss)) throw NumericDomainError("non-finite loss");
        tape.backward(loss);
      } catch (const NumericDomainError& e) {
        throw NumericDomainError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(start / cfg.batch_size) + ": " + e.what());
      }
      adam_step(params, state, cfg);
      loss_sum += batch_loss * static_cast<double>(n);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_loss = normalized_loss(model, val_set, cfg.batch_size);
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.val_loss)) {
      throw NumericDomainError("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.update(rec.val_loss)) {
      best_values.clear();
      for (const auto& [name, p] : params) best_values.push_back(p.to_vector());
    }
    if (stopper.should_stop()) break;
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    std::copy(best_values[i].begin(), best_values[i].end(), p.data().begin());
    p.release_grad();
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best();
  return result;
}

std::string ForecastReport::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["horizon"] = horizon;
  j["windows"] = windows;
  j["variates"] = variates;
  j["mse"] = mse;
  j["mae"] = mae;
  if (router_p_long_mean) {
    j["router_p_long_mean"] = *router_p_long_mean;
    j["router_p_long_std"] = *router_p_long_std;
  }
  return j.dump(2) + "\n";
}

ForecastReport ForecastReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ForecastReport r;
    r.model = j.at("model").get<std::string>();
    r.horizon = j.at("horizon").get<std::size_t>();
    r.windows = j.at("windows").get<std::size_t>();
    r.variates = j.at("variates").get<std::size_t>();
    r.mse = j.at("mse").get<double>();
    r.mae = j.at("mae").get<double>();
    if (j.contains("router_p_long_mean")) {
      r.router_p_long_mean = j.at("router_p_long_mean").get<double>();
      r.router_p_long_std = j.at("router_p_long_std").get<double>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

ForecastReport evaluate_with(const PredictFn& predict, const std::string& name, const PreparedWindows& windows,
                             std::size_t batch_size, const Forecaster* router_source) {
  if (windows.count() == 0) throw ContractError("cannot evaluate on an empty window set");
  if (batch_size == 0) throw ContractError("batch_size must be >= 1");
  NoGradScope no_grad;
  const std::size_t f = windows.horizon, m = windows.variates;
  double se = 0.0, ae = 0.0, p_sum = 0.0, p_sq = 0.0;
  bool routed = false;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < windows.count(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(windows.count(), start + batch_size); ++i) idx.push_back(i);
    const auto [x, y] = gather(windows, idx);
    const Tensor pred = predict(x);
    if (pred.shape() != y.shape()) {
      throw DimensionError("forecast shape " + shape_str(pred.shape()) + " does not match " + shape_str(y.shape()));
    }
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& stats = windows.stats[idx[b]];
      const auto truth = windows.raw[idx[b]].second.data();
      for (std::size_t t = 0; t < f; ++t) {
        for (std::size_t v = 0; v < m; ++v) {
          const double value = pred.data()[(b * f + t) * m + v] * stats.scale(v) + stats.mean[v];
          const double err = value - truth[t * m + v];
          se += err * err;
          ae += std::abs(err);
        }
      }
    }
    if (router_source) {
      if (const auto p = router_source->router_weights(x)) {
        routed = true;
        for (std::size_t b = 0; b < idx.size(); ++b) {
          const double pl = p->data()[b * 2];
          p_sum += pl;
          p_sq += pl * pl;
        }
      }
    }
  }
  ForecastReport r;
  r.model = name;
  r.horizon = f;
  r.windows = windows.count();
  r.variates = m;
  const double n = static_cast<double>(windows.count() * f * m);
  r.mse = se / n;
  r.mae = ae / n;
  if (routed) {
    const double w = static_cast<double>(windows.count());
    const double mean = p_sum / w;
    r.router_p_long_mean = mean;
    r.router_p_long_std = std::sqrt(std::max(0.0, p_sq / w - mean * mean));
  }
  return r;
}

ForecastReport evaluate(const Forecaster& model, const PreparedWindows& windows, std::size_t batch_size) {
  return evaluate_with([&](const Tensor& x) { return model.forward(x); }, model.name(), windows, batch_size, &model);
}

}  // namespace sst::train
