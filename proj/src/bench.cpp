#include "sst/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "json.hpp"
#include "sst/mambaformer.hpp"
#include "sst/sst_model.hpp"

namespace sst::bench {

std::string ScalingRecord::to_json_line() const {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["L"] = length;
  j["forward_backward_ms"] = forward_backward_ms;
  j["peak_bytes"] = peak_bytes;
  j["status"] = status;
  return j.dump();
}

std::unique_ptr<Forecaster> make_bench_model(const std::string& name, std::size_t length, const BenchConfig& cfg) {
  family::FamilyDims dims;
  dims.lookback = length;
  dims.horizon = cfg.horizon;
  dims.d_model = cfg.d_model;
  dims.heads = cfg.heads;
  dims.patch = {16, 8, length};
  family::VariantSpec spec;
  spec.name = "transformer";
  spec.depth = 1;
  if (name == "full_attention_transformer") {
    spec.embedding = family::Embedding::Conv;
    return std::make_unique<family::VariantModel>(spec, dims, cfg.seed);
  }
  if (name == "patched_transformer") {
    spec.embedding = family::Embedding::Pi;
    return std::make_unique<family::VariantModel>(spec, dims, cfg.seed);
  }
  if (name == "sst") {
    model::SstConfig sc;
    sc.lookback = length;
    sc.short_len = length / 2;
    sc.horizon = cfg.horizon;
    sc.long_patch = {48, 16, length};
    sc.short_patch = {16, 8, length / 2};
    sc.d_model = cfg.d_model;
    sc.heads = cfg.heads;
    return std::make_unique<model::SstModel>(sc, cfg.seed);
  }
  throw ConfigError("unknown bench model '" + name + "'");
}

namespace {
double forward_backward(const Forecaster& model, const Tensor& x, const Tensor& y) {
  const auto t0 = std::chrono::steady_clock::now();
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = ops::mse_loss(model.forward(x), y);
    tape.backward(loss);
  }
  for (const auto& [name, p] : model.parameters()) Tensor(p).release_grad();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}
}  // namespace

ScalingRecord measure(const std::string& model_name, std::size_t length, const BenchConfig& cfg) {
  ScalingRecord rec;
  rec.model = model_name;
  rec.length = length;
  const std::size_t baseline = memory::current_bytes();
  memory::reset_peak();
  try {
    memory::CapScope cap(cfg.cap_bytes == 0 ? 0 : baseline + cfg.cap_bytes);
    const auto model = make_bench_model(model_name, length, cfg);
    nn::Rng rng(cfg.seed + length);
    std::vector<double> xs(cfg.batch * length);
    for (auto& v : xs) v = rng.normal();
    const Tensor x(Shape{cfg.batch, length, 1}, std::move(xs));
    const Tensor y(Shape{cfg.batch, cfg.horizon, 1}, 0.0);
    forward_backward(*model, x, y);  // warm-up
    std::vector<double> times;
    for (std::size_t t = 0; t < std::max<std::size_t>(cfg.trials, 1); ++t) times.push_back(forward_backward(*model, x, y));
    std::sort(times.begin(), times.end());
    const std::size_t n = times.size();
    rec.forward_backward_ms = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
    rec.peak_bytes = memory::peak_bytes() - baseline;
  } catch (const MemoryCapExceeded&) {
    rec.status = "oom";
    rec.peak_bytes = memory::peak_bytes() - baseline;
  }
  return rec;
}

std::vector<ScalingRecord> bench_scaling(const BenchConfig& cfg,
                                         const std::function<void(const ScalingRecord&)>& on_record) {
  std::vector<std::size_t> lengths = cfg.lengths;
  std::sort(lengths.begin(), lengths.end());
  std::vector<ScalingRecord> out;
  for (const auto& name : cfg.models) {
    bool oom = false;
    for (const std::size_t len : lengths) {
      ScalingRecord rec;
      if (oom) {
        rec.model = name;
        rec.length = len;
        rec.status = "oom";
      } else {
        rec = measure(name, len, cfg);
        oom = rec.status == "oom";
      }
      if (on_record) on_record(rec);
      out.push_back(rec);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ScalingRecord& a, const ScalingRecord& b) {
    return a.length < b.length;
  });
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("slope fit needs at least two paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericDomainError("log-log fit needs positive values");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw NumericDomainError("slope fit needs distinct x values");
  return sxy / sxx;
}

SlopeFit fit_slope(const std::vector<ScalingRecord>& records, const std::string& model) {
  SlopeFit fit;
  fit.model = model;
  std::vector<double> xs, ys;
  for (const auto& r : records) {
    if (r.model != model || r.status != "ok") continue;
    xs.push_back(static_cast<double>(r.length));
    ys.push_back(r.forward_backward_ms);
  }
  fit.points = xs.size();
  fit.sufficient = xs.size() >= 4;
  if (fit.sufficient) fit.slope = loglog_slope(xs, ys);
  return fit;
}

std::size_t first_oom(const std::vector<ScalingRecord>& records, const std::string& model) {
  std::size_t best = 0;
  for (const auto& r : records) {
    if (r.model == model && r.status == "oom" && (best == 0 || r.length < best)) best = r.length;
  }
  return best;
}

}  // namespace sst::bench
