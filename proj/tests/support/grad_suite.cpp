#include "grad_suite.hpp"

#include "sst/lwt.hpp"
#include "sst/mamba.hpp"
#include "sst/sst_model.hpp"
#include "test_util.hpp"

namespace sst::testing {

namespace {

using Params = std::vector<std::pair<std::string, Tensor>>;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// random rank-3 shape within 4 x 8 x 8
Shape shape3(std::mt19937_64& rng) { return {pick(rng, 1, 4), pick(rng, 1, 8), pick(rng, 1, 8)}; }

GradCheckResult unary(std::uint64_t seed, const std::function<Tensor(const Tensor&)>& op, double lo = -2.0,
                      double hi = 2.0) {
  std::mt19937_64 rng(seed);
  Tensor x = random_param(shape3(rng), rng, lo, hi);
  return gradient_check([&] { return weighted_sum(op(x), seed + 1); }, {{"x", x}});
}

GradCheckResult binary(std::uint64_t seed, const std::function<Tensor(const Tensor&, const Tensor&)>& op,
                       bool broadcast) {
  std::mt19937_64 rng(seed);
  const Shape s = shape3(rng);
  Shape t = s;
  if (broadcast) t = (seed % 2) ? Shape{s[2]} : Shape{s[1], s[2]};
  Tensor a = random_param(s, rng), b = random_param(t, rng);
  return gradient_check([&] { return weighted_sum(op(a, b), seed + 1); }, {{"a", a}, {"b", b}});
}

Params named(const NamedTensors& p) { return {p.begin(), p.end()}; }

// The default step-size init (0.001 to 0.1) leaves a_log and the step projection with
// gradients near 1e-6, below what central differences resolve at h = 1e-5. Steps in
// [0.1, 1] keep every parameter's gradient well above the round-off floor.
void condition_steps(mamba::MambaBlock& block) {
  auto bias = block.proj_delta.bias.data();
  for (std::size_t j = 0; j < bias.size(); ++j) {
    const double dt = 0.1 + 0.9 * static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(bias.size() - 1, 1));
    bias[j] = std::log(std::expm1(dt));
  }
}

std::vector<GradCase> build() {
  std::vector<GradCase> c;
  c.push_back({"add", [](auto s) { return binary(s, ops::add, false); }});
  c.push_back({"add_broadcast", [](auto s) { return binary(s, ops::add, true); }});
  c.push_back({"sub", [](auto s) { return binary(s, ops::sub, false); }});
  c.push_back({"sub_broadcast", [](auto s) { return binary(s, ops::sub, true); }});
  c.push_back({"mul", [](auto s) { return binary(s, ops::mul, false); }});
  c.push_back({"mul_broadcast", [](auto s) { return binary(s, ops::mul, true); }});
  c.push_back({"scale", [](auto s) { return unary(s, [](const Tensor& x) { return ops::scale(x, -1.7); }); }});
  c.push_back({"add_scalar", [](auto s) { return unary(s, [](const Tensor& x) { return ops::add_scalar(x, 0.3); }); }});
  c.push_back({"neg", [](auto s) { return unary(s, ops::neg); }});
  c.push_back({"exp", [](auto s) { return unary(s, ops::exp); }});
  c.push_back({"softplus", [](auto s) { return unary(s, ops::softplus, -4.0, 4.0); }});
  c.push_back({"sigmoid", [](auto s) { return unary(s, ops::sigmoid); }});
  c.push_back({"silu", [](auto s) { return unary(s, ops::silu); }});
  c.push_back({"tanh", [](auto s) { return unary(s, ops::tanh); }});
  c.push_back({"softmax", [](auto s) { return unary(s, ops::softmax, -3.0, 3.0); }});
  c.push_back({"sum", [](auto s) { return unary(s, [](const Tensor& x) { return ops::mul(ops::sum(x), ops::sum(x)); }); }});
  c.push_back({"mean", [](auto s) { return unary(s, [](const Tensor& x) { return ops::mul(ops::mean(x), ops::mean(x)); }); }});
  c.push_back({"sum_axis", [](auto s) { return unary(s, [s](const Tensor& x) { return ops::sum_axis(x, s % 3); }); }});
  c.push_back({"reshape", [](auto s) {
                 return unary(s, [](const Tensor& x) { return ops::reshape(x, {x.dim(0) * x.dim(1), x.dim(2)}); });
               }});
  c.push_back({"flatten", [](auto s) { return unary(s, [](const Tensor& x) { return ops::flatten(x, 1); }); }});
  c.push_back({"permute", [](auto s) { return unary(s, [](const Tensor& x) { return ops::permute(x, {2, 0, 1}); }); }});
  c.push_back({"transpose_last2", [](auto s) { return unary(s, ops::transpose_last2); }});
  c.push_back({"slice", [](auto s) {
                 return unary(s, [](const Tensor& x) {
                   const std::size_t n = x.dim(1);
                   return ops::slice(x, 1, n / 2, n - n / 2);
                 });
               }});
  c.push_back({"concat", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const Shape a = shape3(rng);
                 Shape b = a;
                 b[2] = pick(rng, 1, 8);
                 Tensor x = random_param(a, rng), y = random_param(b, rng);
                 return gradient_check([&] { return weighted_sum(ops::concat({x, y, x}, 2), s); }, {{"x", x}, {"y", y}});
               }});
  c.push_back({"unfold", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const std::size_t len = pick(rng, 4, 8);
                 Tensor x = random_param({pick(rng, 1, 4), pick(rng, 1, 8), len}, rng);
                 const std::size_t size = pick(rng, 1, len), step = pick(rng, 1, 3);
                 return gradient_check([&] { return weighted_sum(ops::unfold(x, size, step), s); }, {{"x", x}});
               }});
  c.push_back({"masked_fill", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const Shape sh = shape3(rng);
                 std::vector<std::uint8_t> where(sh[1] * sh[2]);
                 for (auto& w : where) w = static_cast<std::uint8_t>(rng() % 2);
                 Tensor x = random_param(sh, rng);
                 return gradient_check([&] { return weighted_sum(ops::softmax(ops::masked_fill(x, where, -0.5)), s); },
                                       {{"x", x}});
               }});
  c.push_back({"matmul", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const std::size_t b = pick(rng, 1, 4), n = pick(rng, 1, 8), k = pick(rng, 1, 8), m = pick(rng, 1, 8);
                 Tensor x = random_param({b, n, k}, rng), w = random_param({k, m}, rng), y = random_param({b, k, m}, rng);
                 return gradient_check(
                     [&] { return ops::add(weighted_sum(ops::matmul(x, w), s), weighted_sum(ops::matmul(x, y), s + 9)); },
                     {{"x", x}, {"w", w}, {"y", y}});
               }});
  c.push_back({"layer_norm", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 Shape sh = shape3(rng);
                 sh[2] = std::max<std::size_t>(sh[2], 2);
                 Tensor x = random_param(sh, rng), g = random_param({sh[2]}, rng), b = random_param({sh[2]}, rng);
                 return gradient_check([&] { return weighted_sum(ops::layer_norm(x, g, b, 1e-5), s); },
                                       {{"x", x}, {"gamma", g}, {"beta", b}});
               }});
  c.push_back({"causal_conv1d", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const Shape sh = shape3(rng);
                 Tensor x = random_param(sh, rng), w = random_param({sh[2], pick(rng, 1, 4)}, rng);
                 return gradient_check([&] { return weighted_sum(ops::causal_depthwise_conv1d(x, w), s); },
                                       {{"x", x}, {"w", w}});
               }});
  c.push_back({"mse_loss", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const Shape sh = shape3(rng);
                 Tensor x = random_param(sh, rng), y = random_param(sh, rng);
                 return gradient_check([&] { return ops::mse_loss(x, y); }, {{"pred", x}, {"target", y}});
               }});
  c.push_back({"selective_scan", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const std::size_t b = pick(rng, 1, 3), t = pick(rng, 1, 8), e = pick(rng, 1, 4), n = pick(rng, 1, 4);
                 Tensor u = random_param({b, t, e}, rng), delta = random_param({b, t, e}, rng, 0.05, 1.0),
                        a = random_param({e, n}, rng, -2.0, -0.1), bb = random_param({b, t, n}, rng),
                        cc = random_param({b, t, n}, rng), d = random_param({e}, rng);
                 return gradient_check([&] { return weighted_sum(mamba::selective_scan(u, delta, a, bb, cc, d), s); },
                                       {{"u", u}, {"delta", delta}, {"a", a}, {"b", bb}, {"c", cc}, {"d", d}});
               }});
  c.push_back({"banded_attention", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const std::size_t heads = pick(rng, 1, 2), dk = pick(rng, 1, 4), n = pick(rng, 1, 8);
                 const Shape sh{pick(rng, 1, 3), n, heads * dk};
                 Tensor q = random_param(sh, rng), k = random_param(sh, rng), v = random_param(sh, rng);
                 const std::size_t hw = pick(rng, 0, 3);
                 return gradient_check([&] { return weighted_sum(lwt::banded_attention(q, k, v, heads, hw), s); },
                                       {{"q", q}, {"k", k}, {"v", v}});
               }});
  c.push_back({"dense_attention", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 const std::size_t heads = pick(rng, 1, 2), dk = pick(rng, 1, 4), n = pick(rng, 1, 8);
                 const Shape sh{pick(rng, 1, 3), n, heads * dk};
                 Tensor q = random_param(sh, rng), k = random_param(sh, rng), v = random_param(sh, rng);
                 const auto mask = lwt::window_mask(n, 2 * pick(rng, 0, 3) + 1);
                 return gradient_check([&] { return weighted_sum(lwt::dense_attention(q, k, v, heads, &mask), s); },
                                       {{"q", q}, {"k", k}, {"v", v}});
               }});
  c.push_back({"mamba_block", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 nn::Rng init(s);
                 const mamba::MambaConfig cfg{4, 3, 2, 3};
                 mamba::MambaBlock block(cfg, init);
                 condition_steps(block);
                 Tensor x = random_param({2, 6, 4}, rng);
                 Params p = named(block.parameters());
                 p.emplace_back("x", x);
                 return gradient_check([&] { return weighted_sum(block.forward(x), s); }, p);
               }});
  c.push_back({"lwt_layer", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 nn::Rng init(s);
                 lwt::LwtConfig cfg{8, 2, 3, 2, lwt::AttentionPath::Banded};
                 const lwt::LwtLayer layer(cfg, init);
                 Tensor x = random_param({2, 5, 8}, rng);
                 Params p = named(layer.parameters());
                 p.emplace_back("x", x);
                 return gradient_check([&] { return weighted_sum(layer.forward(x), s); }, p);
               }});
  c.push_back({"sst_forward", [](std::uint64_t s) {
                 std::mt19937_64 rng(s);
                 model::SstConfig cfg;
                 cfg.lookback = 48;
                 cfg.short_len = 24;
                 cfg.horizon = 8;
                 cfg.variates = 2;
                 cfg.long_patch = {8, 4, 48};
                 cfg.short_patch = {4, 2, 24};
                 cfg.d_model = 8;
                 cfg.state_size = 4;
                 cfg.heads = 2;
                 cfg.window = 3;
                 cfg.mamba_blocks = 1;
                 cfg.lwt_layers = 1;
                 model::SstModel m(cfg, s);
                 for (auto& block : m.patterns().blocks) condition_steps(block);
                 const Tensor x = random_tensor({2, 48, 2}, rng);
                 const Tensor y = random_tensor({2, 8, 2}, rng);
                 return gradient_check([&] { return ops::mse_loss(m.forward(x), y); }, named(m.parameters()));
               }});
  return c;
}

}  // namespace

const std::vector<GradCase>& gradient_cases() {
  static const std::vector<GradCase> cases = build();
  return cases;
}

}  // namespace sst::testing
