#include <gtest/gtest.h>

#include <cmath>

#include "sst/mambaformer.hpp"
#include "sst/train.hpp"
#include "support/test_util.hpp"

using namespace sst;
using namespace sst::train;
using sst::testing::random_tensor;

namespace {

data::Dataset series(std::vector<double> v) {
  data::Dataset ds;
  ds.name = "s";
  const std::size_t n = v.size();
  ds.values = Tensor(Shape{n, 1}, std::move(v));
  ds.variate_names = {"y"};
  for (std::size_t t = 0; t < n; ++t) ds.timestamps.push_back(std::to_string(t));
  return ds;
}

data::Dataset ramp(std::size_t begin, std::size_t end) {
  std::vector<double> v;
  for (std::size_t t = begin; t < end; ++t) v.push_back(static_cast<double>(t));
  return series(std::move(v));
}

PreparedWindows noise_windows(std::size_t rows, std::size_t lookback, std::size_t horizon, std::uint64_t seed,
                              std::size_t stride = 1) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(rows);
  for (auto& x : v) x = n(g);
  return prepare(data::make_windows(series(std::move(v)), lookback, horizon, stride));
}

/// Single learnable scalar; predicts w * last lookback value at every step.
class ScalarModel : public Forecaster {
 public:
  explicit ScalarModel(double w0, std::size_t lb = 4, std::size_t f = 2) : lb_(lb), f_(f) {
    w = Tensor::from({w0});
    w.set_requires_grad(true);
  }
  Tensor forward(const Tensor& x) const override {
    const Tensor last = ops::slice(x, 1, lb_ - 1, 1);  // [B, 1, 1]
    return ops::mul(ops::concat(std::vector<Tensor>(f_, last), 1), ops::reshape(w, {1, 1, 1}));
  }
  std::string name() const override { return "scalar"; }
  std::size_t lookback() const override { return lb_; }
  std::size_t horizon() const override { return f_; }
  void collect(const std::string& prefix, NamedTensors& out) const override {
    out.emplace_back(nn::join(prefix, "w"), w);
  }
  Tensor w;

 private:
  std::size_t lb_, f_;
};

TrainConfig quick(std::size_t epochs = 5) {
  TrainConfig c;
  c.lr = 1e-2;
  c.batch_size = 8;
  c.max_epochs = epochs;
  c.patience = epochs;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(Adam, ZeroGradientsLeaveParametersButAdvanceStep) {
  std::mt19937_64 g(1);
  Tensor p = random_tensor({3, 2}, g);
  p.set_requires_grad(true);
  const std::vector<double> before = p.to_vector();
  p.accumulate_grad(std::vector<double>(6, 0.0));
  OptimizerState st;
  adam_step({{"p", p}}, st, TrainConfig{});
  EXPECT_EQ(p.to_vector(), before);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepIsLearningRate) {
  Tensor p = Tensor::from({2.0});
  p.set_requires_grad(true);
  OptimizerState st;
  TrainConfig c;
  c.lr = 0.01;
  for (int step = 1; step <= 3; ++step) {
    const double before = p.item();
    p.release_grad();
    p.accumulate_grad(std::vector<double>{1.0});
    adam_step({{"p", p}}, st, c);
    // with a constant gradient both bias-corrected moments equal 1
    EXPECT_NEAR(before - p.item(), c.lr / (1.0 + c.eps), 1e-15) << step;
  }
}

TEST(Adam, MissingGradientIsContractError) {
  Tensor p = Tensor::from({1.0});
  p.set_requires_grad(true);
  OptimizerState st;
  EXPECT_THROW(adam_step({{"p", p}}, st, TrainConfig{}), ContractError);
}

TEST(EarlyStop, PatienceOneStopsAfterSecondWorseEpoch) {
  EarlyStopping es(1);
  EXPECT_TRUE(es.update(1.0));
  EXPECT_FALSE(es.should_stop());
  EXPECT_FALSE(es.update(2.0));
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 1u);
}

TEST(EarlyStop, ImprovementResetsCounter) {
  EarlyStopping es(2);
  es.update(3.0);
  es.update(4.0);
  es.update(2.0);
  EXPECT_FALSE(es.should_stop());
  es.update(2.0);  // ties are not improvements
  EXPECT_FALSE(es.should_stop());
  es.update(5.0);
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best(), 2.0);
  EXPECT_EQ(es.best_epoch(), 3u);
}

TEST(Train, WorseningValidationStopsAfterTwoEpochs) {
  // validation windows are the negation of training, so fitting w -> 1 makes val worse every epoch
  std::vector<double> up, down;
  for (int t = 0; t < 40; ++t) {
    up.push_back(std::sin(0.7 * t) + 0.05 * t);
    down.push_back(-(std::sin(0.7 * t) + 0.05 * t));
  }
  const auto tr = prepare(data::make_windows(series(up), 4, 2));
  auto va = prepare(data::make_windows(series(down), 4, 2));
  for (auto& y : va.y) y = -y;  // flip targets so the best fit for validation is w = -1
  ScalarModel model(0.0);
  TrainConfig c = quick(50);
  c.patience = 1;
  const auto r = train::train(model, tr, va, c);
  EXPECT_EQ(r.history.size(), 2u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Train, DLinearLearnsARamp) {
  const std::size_t lb = 24, f = 8;
  const auto tr = prepare(data::make_windows(ramp(0, 300), lb, f));
  const auto va = prepare(data::make_windows(ramp(300, 400), lb, f));
  family::DLinear model(lb, f, 5, 1);
  TrainConfig c = quick(20);
  const auto r = train::train(model, tr, va, c);
  EXPECT_LE(r.history.size(), 20u);
  EXPECT_LT(r.best_val_loss, 1e-3);
}

TEST(Train, SameSeedSameHistory) {
  const auto tr = noise_windows(300, 24, 8, 2), va = noise_windows(120, 24, 8, 3);
  auto run = [&] {
    family::DLinear model(24, 8, 5, 9);
    auto r = train::train(model, tr, va, quick(4));
    std::vector<double> out;
    for (const auto& e : r.history) {
      out.push_back(e.train_loss);
      out.push_back(e.val_loss);
    }
    for (const auto& [n, p] : model.parameters()) {
      const auto v = p.to_vector();
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, RestoresBestCheckpoint) {
  const auto tr = noise_windows(300, 24, 8, 4), va = noise_windows(120, 24, 8, 5);
  family::DLinear model(24, 8, 5, 10);
  TrainConfig c = quick(8);
  c.lr = 0.05;  // noisy on purpose so the last epoch is unlikely to be the best
  c.patience = 8;
  const auto r = train::train(model, tr, va, c);
  double best = r.history.front().val_loss;
  for (const auto& e : r.history) best = std::min(best, e.val_loss);
  EXPECT_EQ(r.best_val_loss, best);
  EXPECT_EQ(r.history[r.best_epoch - 1].val_loss, best);
  EXPECT_EQ(normalized_loss(model, va, 32), best);
  for (const auto& [n, p] : model.parameters()) EXPECT_FALSE(p.has_grad()) << n;
}

TEST(Train, DivergenceAbortsWithDiagnostic) {
  const auto tr = noise_windows(100, 4, 2, 6), va = noise_windows(50, 4, 2, 7);
  ScalarModel model(1.0);
  TrainConfig c = quick(3);
  c.lr = 1e308;
  try {
    train::train(model, tr, va, c);
    FAIL() << "expected divergence";
  } catch (const NumericDomainError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsEmptySetsAndBadConfig) {
  const auto tr = noise_windows(100, 4, 2, 8);
  ScalarModel model(1.0);
  EXPECT_THROW(train::train(model, tr, PreparedWindows{}, quick()), ContractError);
  TrainConfig c = quick();
  c.patience = 0;
  EXPECT_THROW(train::train(model, tr, tr, c), ConfigError);
  c = quick();
  c.lr = 0.0;
  EXPECT_THROW(train::train(model, tr, tr, c), ConfigError);
}

TEST(Train, EpochRecordsAreJsonLines) {
  EpochRecord r{3, 0.5, 0.25, 12.0};
  EXPECT_EQ(to_json_line(r), R"({"epoch":3,"train_loss":0.5,"val_loss":0.25,"elapsed_ms":12.0})");
}

TEST(Evaluate, OracleScoresZero) {
  const auto w = noise_windows(200, 8, 4, 9);
  std::size_t next = 0;
  // hands back the normalised targets of whichever windows evaluate_with asks for, in order
  const PredictFn oracle = [&](const Tensor& x) {
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < x.dim(0); ++b) idx.push_back(next++);
    return gather(w, idx).second;
  };
  const auto r = evaluate_with(oracle, "oracle", w, 16);
  // the only error left is the normalise/denormalise round trip
  EXPECT_LT(r.mse, 1e-28);
  EXPECT_LT(r.mae, 1e-14);
  EXPECT_EQ(r.windows, w.count());
  EXPECT_FALSE(r.router_p_long_mean.has_value());
}

TEST(Evaluate, PersistenceOnWhiteNoiseIsTwo) {
  const std::size_t lb = 8, f = 4;
  const auto w = noise_windows(20000, lb, f, 10, 4);
  const PredictFn persist = [&](const Tensor& x) {
    const Tensor last = ops::slice(x, 1, lb - 1, 1);
    return ops::concat(std::vector<Tensor>(f, last), 1);
  };
  const auto r = evaluate_with(persist, "persistence", w, 64);
  EXPECT_NEAR(r.mse, 2.0, 0.2);
}

TEST(Evaluate, IndependentOfBatchPartition) {
  const auto w = noise_windows(400, 24, 8, 11);
  const family::DLinear model(24, 8, 5, 11);
  const double whole = evaluate(model, w, w.count()).mse;
  for (const std::size_t b : {1u, 7u, 32u}) {
    const auto r = evaluate(model, w, b);
    EXPECT_NEAR(r.mse, whole, 1e-9);
  }
}

TEST(Evaluate, EmptySetIsContractError) {
  const family::DLinear model(24, 8, 5, 0);
  EXPECT_THROW(evaluate(model, PreparedWindows{}, 4), ContractError);
}

TEST(Report, RoundTrip) {
  ForecastReport r;
  r.model = "sst";
  r.horizon = 96;
  r.windows = 17;
  r.variates = 2;
  r.mse = 0.123456789012345678;
  r.mae = 1.0 / 3.0;
  r.router_p_long_mean = 0.61;
  r.router_p_long_std = 0.02;
  const auto back = ForecastReport::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(back.mse, r.mse);
  EXPECT_EQ(back.mae, r.mae);
  EXPECT_EQ(*back.router_p_long_std, 0.02);
  EXPECT_THROW(ForecastReport::from_json("{\"model\": 3}"), DataError);
  EXPECT_THROW(ForecastReport::from_json("not json"), DataError);
}

TEST(Prepare, NormalisesLookbackAndScalesTargets) {
  const auto w = prepare(data::make_windows(ramp(10, 60), 8, 4));
  ASSERT_GT(w.count(), 0u);
  const auto [x, y] = gather(w, std::vector<std::size_t>{3});
  double mean = 0.0;
  for (const double v : x.data()) mean += v;
  EXPECT_NEAR(mean / 8.0, 0.0, 1e-12);
  const auto& st = w.stats[3];
  EXPECT_NEAR(y.data()[0] * st.scale(0) + st.mean[0], 10.0 + 3.0 + 8.0, 1e-12);
}
