#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "sst/mambaformer.hpp"
#include "sst/train.hpp"
#include "support/test_util.hpp"

using namespace sst;
using namespace sst::family;
using sst::testing::max_abs_diff;
using sst::testing::random_tensor;

namespace {

FamilyDims small_dims(std::size_t variates = 1) {
  FamilyDims d;
  d.lookback = 24;
  d.horizon = 8;
  d.variates = variates;
  d.d_model = 8;
  d.state_size = 4;
  d.heads = 2;
  d.ffn_mult = 2;
  d.patch = {8, 4, 24};
  return d;
}

data::Dataset sine(std::size_t rows) {
  data::Dataset ds;
  ds.name = "sine";
  std::vector<double> v(rows);
  for (std::size_t t = 0; t < rows; ++t) v[t] = std::sin(2.0 * M_PI * static_cast<double>(t) / 12.0);
  ds.values = Tensor(Shape{rows, 1}, std::move(v));
  ds.variate_names = {"y"};
  for (std::size_t t = 0; t < rows; ++t) ds.timestamps.push_back(std::to_string(t));
  return ds;
}

}  // namespace

TEST(Recipe, DeclaredOrders) {
  using enum SubLayer;
  EXPECT_EQ(recipe("transformer"), (std::vector<SubLayer>{Attention, Ffn}));
  EXPECT_EQ(recipe("mamba"), (std::vector<SubLayer>{Mamba, Mamba}));
  EXPECT_EQ(recipe("attention_mamba"), (std::vector<SubLayer>{Attention, Mamba}));
  EXPECT_EQ(recipe("mamba_attention"), (std::vector<SubLayer>{Mamba, Attention}));
  EXPECT_EQ(recipe("mambaformer"), (std::vector<SubLayer>{Mamba, Attention, Mamba}));
  EXPECT_THROW(recipe("hyena"), ConfigError);
  EXPECT_THROW(parse_embedding("fourier"), ConfigError);
}

TEST(Recipe, PositionalDefaults) {
  EXPECT_TRUE(default_positional("transformer"));
  EXPECT_TRUE(default_positional("attention_mamba"));
  EXPECT_FALSE(default_positional("mamba"));
  EXPECT_FALSE(default_positional("mamba_attention"));
  EXPECT_FALSE(default_positional("mambaformer"));
  VariantSpec s;
  s.name = "mamba_attention";
  s.use_positional = true;
  EXPECT_TRUE(s.positional());
}

TEST(Variant, ForwardInvokesRecipeInOrder) {
  for (const auto& name : variant_names()) {
    for (const std::size_t depth : {1u, 2u}) {
      VariantSpec s;
      s.name = name;
      s.depth = depth;
      const VariantModel model(s, small_dims(), 1);
      std::vector<SubLayer> seen;
      model.trace_into(&seen);
      std::mt19937_64 g(1);
      NoGradScope ng;
      model.forward(random_tensor({2, 24, 1}, g));
      model.trace_into(nullptr);
      std::vector<SubLayer> expected;
      for (std::size_t b = 0; b < depth; ++b) {
        for (const SubLayer l : recipe(name)) expected.push_back(l);
      }
      EXPECT_EQ(seen, expected) << name << " depth " << depth;
    }
  }
}

TEST(Variant, ShapesForBothEmbeddings) {
  std::mt19937_64 g(2);
  const Tensor x = random_tensor({3, 24, 2}, g);
  NoGradScope ng;
  for (const auto& name : variant_names()) {
    for (const Embedding e : {Embedding::Conv, Embedding::Pi}) {
      VariantSpec s;
      s.name = name;
      s.embedding = e;
      s.depth = 1;
      const VariantModel model(s, small_dims(2), 2);
      EXPECT_EQ(model.forward(x).shape(), (Shape{3, 8, 2}));
      EXPECT_EQ(model.tokens(), e == Embedding::Conv ? 24u : 5u);
      EXPECT_EQ(model.name(), name + "_" + embedding_name(e));
    }
  }
  VariantSpec s;
  EXPECT_THROW(VariantModel(s, small_dims(2), 0).forward(Tensor({1, 23, 2})), DimensionError);
  s.depth = 0;
  EXPECT_THROW(VariantModel(s, small_dims(), 0), ConfigError);
}

TEST(ConvEmbed, ShapeAndZeroWeights) {
  nn::Rng rng(3);
  ConvEmbedding emb(7, 64, rng);
  std::mt19937_64 g(3);
  const Tensor w = random_tensor({196, 7}, g);
  NoGradScope ng;
  EXPECT_EQ(conv_embed(w, emb).shape(), (Shape{196, 64}));
  for (auto& v : emb.proj.weight.data()) v = 0.0;
  const Tensor y = conv_embed(w, emb);
  for (std::size_t t = 0; t < 196; ++t) {
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(y.at({t, c}), emb.proj.bias.data()[c]);
  }
  EXPECT_THROW(conv_embed(Tensor({10, 6}), emb), DimensionError);
}

TEST(ConvEmbed, CentreTapIdentityReproducesInput) {
  nn::Rng rng(4);
  ConvEmbedding emb(4, 4, rng);
  for (auto& v : emb.proj.weight.data()) v = 0.0;
  for (auto& v : emb.proj.bias.data()) v = 0.0;
  for (std::size_t m = 0; m < 4; ++m) emb.proj.weight.at({4 + m, m}) = 1.0;
  std::mt19937_64 g(4);
  const Tensor w = random_tensor({9, 4}, g);
  NoGradScope ng;
  EXPECT_EQ(conv_embed(w, emb).to_vector(), w.to_vector());
}

TEST(ConvEmbed, NeighbourTapsSeeAdjacentSteps) {
  nn::Rng rng(5);
  ConvEmbedding emb(1, 2, rng);
  for (auto& v : emb.proj.weight.data()) v = 0.0;
  for (auto& v : emb.proj.bias.data()) v = 0.0;
  emb.proj.weight.at({0, 0}) = 1.0;  // previous step
  emb.proj.weight.at({2, 1}) = 1.0;  // next step
  NoGradScope ng;
  const Tensor y = conv_embed(Tensor::matrix({{1}, {2}, {3}}), emb);
  EXPECT_EQ(y.to_vector(), (std::vector<double>{0, 2, 1, 3, 2, 0}));
}

TEST(PiEmbed, ConstantWindowGivesBiasOnlyTokens) {
  nn::Rng rng(6);
  const nn::Linear proj(8, 4, rng);
  NoGradScope ng;
  const PiTokens pt = pi_embed(Tensor({24, 2}, 3.5), {8, 4, 24}, proj);
  EXPECT_EQ(pt.tokens.shape(), (Shape{2, 5, 4}));
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t n = 0; n < 5; ++n) {
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(pt.tokens.at({m, n, c}), proj.bias.data()[c]);
    }
    EXPECT_EQ(pt.stats.mean[m], 3.5);
  }
}

TEST(PiEmbed, StatsRoundTrip) {
  nn::Rng rng(7);
  const nn::Linear proj(16, 4, rng);
  std::mt19937_64 g(7);
  const Tensor w = random_tensor({196, 3}, g, -5.0, 20.0);
  NoGradScope ng;
  const PiTokens pt = pi_embed(w, {16, 8, 196}, proj);
  EXPECT_EQ(pt.tokens.shape(), (Shape{3, 23, 4}));
  const Tensor back = data::revin_denormalize(data::apply_norm(w, pt.stats), pt.stats);
  EXPECT_LT(max_abs_diff(back.data(), w.data()), 1e-9);
  EXPECT_THROW(pi_embed(w, {16, 8, 196}, nn::Linear(8, 4, rng)), DimensionError);
  EXPECT_THROW(pi_embed(Tensor({10, 1}), {16, 8, 10}, proj), ParameterError);
}

TEST(DLinearBaseline, ZeroWeightsGiveZeroForecast) {
  DLinear model(24, 8, 5, 8);
  for (nn::Linear* l : {&model.trend_map, &model.residual_map}) {
    for (auto& v : l->weight.data()) v = 0.0;
    for (auto& v : l->bias.data()) v = 0.0;
  }
  std::mt19937_64 g(8);
  NoGradScope ng;
  const Tensor y = dlinear_baseline(random_tensor({24, 3}, g), model);
  EXPECT_EQ(y.shape(), (Shape{8, 3}));
  for (const double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(DLinearBaseline, AveragingMatchesDecomposition) {
  // trend-only map: W = I on the trend, residual map zero, so the first L outputs are the trend itself
  DLinear model(20, 20, 7, 9);
  for (auto& v : model.trend_map.weight.data()) v = 0.0;
  for (auto& v : model.trend_map.bias.data()) v = 0.0;
  for (auto& v : model.residual_map.weight.data()) v = 0.0;
  for (auto& v : model.residual_map.bias.data()) v = 0.0;
  for (std::size_t i = 0; i < 20; ++i) model.trend_map.weight.at({i, i}) = 1.0;
  std::mt19937_64 g(9);
  const Tensor w = random_tensor({20, 1}, g);
  NoGradScope ng;
  const Tensor trend = dlinear_baseline(w, model);
  const auto ref = data::moving_average_decompose(w.data(), 7);
  EXPECT_LT(max_abs_diff(trend.data(), ref.trend), 1e-12);
}

TEST(DLinearBaseline, LeastSquaresTrendMapFitsRamps) {
  const std::size_t lb = 24, f = 8;
  DLinear model(lb, f, 5, 10);
  for (auto& v : model.residual_map.weight.data()) v = 0.0;
  for (auto& v : model.residual_map.bias.data()) v = 0.0;
  for (auto& v : model.trend_map.bias.data()) v = 0.0;
  // fit the trend map by least squares on the trend features of a few ramps
  std::mt19937_64 g(10);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  auto ramp = [&](double a, double b, std::size_t len) {
    std::vector<double> v(len);
    for (std::size_t t = 0; t < len; ++t) v[t] = a + b * static_cast<double>(t);
    return v;
  };
  const std::size_t fit_rows = 6;
  Eigen::MatrixXd feats(fit_rows, lb), targets(fit_rows, f);
  for (std::size_t r = 0; r < fit_rows; ++r) {
    const auto v = ramp(u(g), u(g), lb + f);
    const auto d = data::moving_average_decompose(std::span(v).first(lb), 5);
    for (std::size_t t = 0; t < lb; ++t) feats(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = d.trend[t];
    for (std::size_t t = 0; t < f; ++t) targets(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(t)) = v[lb + t];
  }
  const Eigen::MatrixXd w = feats.completeOrthogonalDecomposition().solve(targets);
  for (std::size_t i = 0; i < lb; ++i) {
    for (std::size_t j = 0; j < f; ++j) model.trend_map.weight.at({i, j}) = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  NoGradScope ng;
  double se = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto v = ramp(u(g), u(g), lb + f);
    const Tensor y = dlinear_baseline(Tensor(Shape{lb, 1}, std::vector<double>(v.begin(), v.begin() + lb)), model);
    for (std::size_t t = 0; t < f; ++t) se += (y.data()[t] - v[lb + t]) * (y.data()[t] - v[lb + t]);
  }
  EXPECT_LT(se / (20.0 * f), 1e-16);
}

TEST(DLinearBaseline, KernelValidation) {
  EXPECT_THROW(DLinear(24, 8, 4, 0), ConfigError);
  EXPECT_THROW(DLinear(24, 8, 25, 0), ConfigError);
  EXPECT_NO_THROW(DLinear(24, 8, 23, 0));
}

TEST(Variant, AllTrainBelowInitialLossOnSine) {
  const auto windows = data::make_windows(sine(200), 24, 8);
  const auto set = train::prepare(windows);
  train::TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 16;
  tc.max_epochs = 20;
  tc.patience = 20;
  tc.seed = 1;
  for (const auto& name : variant_names()) {
    VariantSpec s;
    s.name = name;
    s.depth = 1;
    VariantModel model(s, small_dims(), 3);
    const double before = train::normalized_loss(model, set, 64);
    const auto result = train::train(model, set, set, tc);
    EXPECT_LT(result.best_val_loss, before) << name;
    EXPECT_LT(train::normalized_loss(model, set, 64), 0.5 * before) << name;
  }
}
