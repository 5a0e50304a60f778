#include "sst/mamba.hpp"

#include <algorithm>
#include <cmath>

namespace sst::mamba {
namespace {

constexpr double kEulerLimit = 1e-8;

// b_bar / b as a function of (a, delta), and its partial derivatives.
struct ZohFactor {
  double a_bar, f, df_ddelta, df_da;
};

ZohFactor zoh_factor(double a, double delta) {
  const double z = delta * a;
  const double a_bar = std::exp(z);
  if (std::abs(z) < kEulerLimit) return {a_bar, delta, 1.0, 0.5 * delta * delta};
  const double em1 = std::expm1(z);
  return {a_bar, em1 / a, a_bar, (z * a_bar - em1) / (a * a)};
}

void check_state(double v) {
  if (numeric_checks_enabled() && !std::isfinite(v)) {
    throw NumericDomainError("selective scan produced a non-finite state");
  }
}

// Shared forward kernel for one sequence. `trajectory`, when given, receives
// h_t for every t ([T, E, N]); otherwise only the E x N state is kept.
void scan_sequence(std::size_t len, std::size_t ne, std::size_t ns, const double* u, const double* delta,
                   const double* a, const double* b, const double* c, const double* d_skip, double* y,
                   double* state, double* trajectory, double* max_abs) {
  std::fill(state, state + ne * ns, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double* bt = b + t * ns;
    const double* ct = c + t * ns;
    for (std::size_t e = 0; e < ne; ++e) {
      const double ut = u[t * ne + e];
      const double dt = delta[t * ne + e];
      double* h = state + e * ns;
      double acc = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        const ZohFactor z = zoh_factor(a[e * ns + n], dt);
        h[n] = z.a_bar * h[n] + z.f * bt[n] * ut;
        acc += ct[n] * h[n];
      }
      y[t * ne + e] = acc + d_skip[e] * ut;
      check_state(y[t * ne + e]);
      if (max_abs) {
        for (std::size_t n = 0; n < ns; ++n) *max_abs = std::max(*max_abs, std::abs(h[n]));
      }
    }
    if (trajectory) std::copy(state, state + ne * ns, trajectory + t * ne * ns);
  }
}

}  // namespace

Discretized zoh_discretize(double a, double b, double delta) {
  if (!(delta > 0.0) && delta != 0.0) throw ParameterError("ZOH step must be non-negative");
  const ZohFactor z = zoh_factor(a, delta);
  return {z.a_bar, z.f * b};
}

void ScanInputs::validate() const {
  if (u.rank() != 2 || delta.shape() != u.shape() || a.rank() != 2 || a.dim(0) != u.dim(1) ||
      b.rank() != 2 || b.dim(0) != u.dim(0) || b.dim(1) != a.dim(1) || c.shape() != b.shape() ||
      d_skip.rank() != 1 || d_skip.dim(0) != u.dim(1)) {
    throw DimensionError("inconsistent scan inputs: u " + shape_str(u.shape()) + ", delta " +
                         shape_str(delta.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                         shape_str(b.shape()) + ", C " + shape_str(c.shape()) + ", D " +
                         shape_str(d_skip.shape()));
  }
}

Tensor selective_scan_recurrence(const ScanInputs& in, ScanTrace* trace, HiddenState* final_state) {
  in.validate();
  const std::size_t len = in.length(), ne = in.channels(), ns = in.state_size();
  HiddenState st{ne, ns, std::vector<double>(ne * ns, 0.0)};
  Tensor y({len, ne});
  double max_abs = 0.0;
  scan_sequence(len, ne, ns, in.u.data().data(), in.delta.data().data(), in.a.data().data(),
                in.b.data().data(), in.c.data().data(), in.d_skip.data().data(), y.data().data(), st.h.data(),
                nullptr, trace ? &max_abs : nullptr);
  if (trace) {
    trace->max_abs_state = max_abs;
    trace->state_elements = st.h.size();
  }
  if (final_state) *final_state = std::move(st);
  return y;
}

ScanInputs LtiParams::as_scan_inputs(const Tensor& u) const {
  if (u.rank() != 2) throw DimensionError("LTI input must be [T, E]");
  const std::size_t len = u.dim(0), ne = u.dim(1), ns = a.dim(1);
  if (delta.size() != ne || a.dim(0) != ne || b.size() != ns || c.size() != ns || d_skip.size() != ne) {
    throw DimensionError("LTI parameters do not match input " + shape_str(u.shape()));
  }
  ScanInputs in{u, Tensor({len, ne}), a, Tensor({len, ns}), Tensor({len, ns}), d_skip};
  for (std::size_t t = 0; t < len; ++t) {
    std::copy(delta.data().begin(), delta.data().end(), in.delta.data().begin() + static_cast<std::ptrdiff_t>(t * ne));
    std::copy(b.data().begin(), b.data().end(), in.b.data().begin() + static_cast<std::ptrdiff_t>(t * ns));
    std::copy(c.data().begin(), c.data().end(), in.c.data().begin() + static_cast<std::ptrdiff_t>(t * ns));
  }
  return in;
}

Tensor lti_convolution_scan(const Tensor& u, const LtiParams& p) {
  if (u.rank() != 2) throw DimensionError("LTI input must be [T, E]");
  const std::size_t len = u.dim(0), ne = u.dim(1), ns = p.a.dim(1);
  if (p.delta.size() != ne || p.a.dim(0) != ne || p.b.size() != ns || p.c.size() != ns || p.d_skip.size() != ne) {
    throw DimensionError("LTI parameters do not match input " + shape_str(u.shape()));
  }
  // kernel[e][k] = sum_n C_n * a_bar^k * b_bar
  std::vector<double> kernel(ne * len, 0.0);
  for (std::size_t e = 0; e < ne; ++e) {
    for (std::size_t n = 0; n < ns; ++n) {
      const Discretized z = zoh_discretize(p.a.data()[e * ns + n], p.b.data()[n], p.delta.data()[e]);
      double power = 1.0;
      for (std::size_t k = 0; k < len; ++k) {
        kernel[e * len + k] += p.c.data()[n] * power * z.b_bar;
        power *= z.a_bar;
      }
    }
  }
  Tensor y({len, ne});
  const auto uv = u.data();
  auto yv = y.data();
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t e = 0; e < ne; ++e) {
      double acc = p.d_skip.data()[e] * uv[t * ne + e];
      for (std::size_t k = 0; k <= t; ++k) acc += kernel[e * len + k] * uv[(t - k) * ne + e];
      yv[t * ne + e] = acc;
    }
  }
  return y;
}

Tensor lti_convolution_scan(const ScanInputs& in) {
  in.validate();
  const std::size_t len = in.length(), ne = in.channels(), ns = in.state_size();
  auto rows_constant = [len](const Tensor& t, std::size_t width) {
    const auto v = t.data();
    for (std::size_t s = 1; s < len; ++s) {
      if (!std::equal(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(width),
                      v.begin() + static_cast<std::ptrdiff_t>(s * width))) {
        return false;
      }
    }
    return true;
  };
  if (!rows_constant(in.delta, ne) || !rows_constant(in.b, ns) || !rows_constant(in.c, ns)) {
    throw ContractError("convolutional scan requires time-invariant delta, B and C");
  }
  LtiParams p{Tensor({ne}), in.a, Tensor({ns}), Tensor({ns}), in.d_skip};
  if (len > 0) {
    std::copy_n(in.delta.data().begin(), ne, p.delta.data().begin());
    std::copy_n(in.b.data().begin(), ns, p.b.data().begin());
    std::copy_n(in.c.data().begin(), ns, p.c.data().begin());
  }
  return lti_convolution_scan(in.u, p);
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip) {
  if (u.rank() != 3 || delta.shape() != u.shape() || a.rank() != 2 || a.dim(0) != u.dim(2) ||
      b.rank() != 3 || b.dim(0) != u.dim(0) || b.dim(1) != u.dim(1) || b.dim(2) != a.dim(1) ||
      c.shape() != b.shape() || d_skip.rank() != 1 || d_skip.dim(0) != u.dim(2)) {
    throw DimensionError("selective_scan shape mismatch: u " + shape_str(u.shape()) + ", A " +
                         shape_str(a.shape()) + ", B " + shape_str(b.shape()));
  }
  const std::size_t nb = u.dim(0), len = u.dim(1), ne = u.dim(2), ns = a.dim(1);
  const Tensor in[] = {u, delta, a, b, c, d_skip};
  const bool recording = should_record(in);
  Buffer y(nb * len * ne);
  Buffer states(recording ? nb * len * ne * ns : 0);
  Buffer state(ne * ns);
  for (std::size_t s = 0; s < nb; ++s) {
    scan_sequence(len, ne, ns, u.data().data() + s * len * ne, delta.data().data() + s * len * ne,
                  a.data().data(), b.data().data() + s * len * ns, c.data().data() + s * len * ns,
                  d_skip.data().data(), y.data() + s * len * ne, state.data(),
                  recording ? states.data() + s * len * ne * ns : nullptr, nullptr);
  }
  Tensor result(u.shape(), std::move(y));
  if (!recording) return result;

  active_tape()->record(
      "selective_scan", {u, delta, a, b, c, d_skip}, result,
      [=, states = std::move(states)]() mutable {
        const auto gy = result.grad();
        const auto uv = u.data();
        const auto dv = delta.data();
        const auto av = a.data();
        const auto bv = b.data();
        const auto cv = c.data();
        const auto dsv = d_skip.data();
        Buffer gu(u.size(), 0.0), gdelta(delta.size(), 0.0), ga(a.size(), 0.0), gb(b.size(), 0.0),
            gc(c.size(), 0.0), gd(d_skip.size(), 0.0);
        Buffer dh(ne * ns);
        for (std::size_t s = 0; s < nb; ++s) {
          std::fill(dh.begin(), dh.end(), 0.0);
          const double* traj = states.data() + s * len * ne * ns;
          for (std::size_t t = len; t-- > 0;) {
            const std::size_t row_e = (s * len + t) * ne;
            const std::size_t row_n = (s * len + t) * ns;
            const double* h_now = traj + t * ne * ns;
            const double* h_prev = t > 0 ? traj + (t - 1) * ne * ns : nullptr;
            for (std::size_t e = 0; e < ne; ++e) {
              const double g = gy[row_e + e];
              const double ut = uv[row_e + e];
              const double dt = dv[row_e + e];
              gd[e] += g * ut;
              double du = g * dsv[e];
              double ddelta = 0.0;
              for (std::size_t n = 0; n < ns; ++n) {
                const std::size_t en = e * ns + n;
                const ZohFactor z = zoh_factor(av[en], dt);
                double& dhn = dh[en];
                dhn += g * cv[row_n + n];
                gc[row_n + n] += g * h_now[en];
                const double hp = h_prev ? h_prev[en] : 0.0;
                const double d_abar = dhn * hp;
                const double d_bbar = dhn * ut;
                const double bn = bv[row_n + n];
                du += dhn * z.f * bn;
                gb[row_n + n] += d_bbar * z.f;
                const double df = d_bbar * bn;
                ddelta += d_abar * z.a_bar * av[en] + df * z.df_ddelta;
                ga[en] += d_abar * z.a_bar * dt + df * z.df_da;
                dhn *= z.a_bar;
              }
              gu[row_e + e] += du;
              gdelta[row_e + e] += ddelta;
            }
          }
        }
        if (u.requires_grad()) u.accumulate_grad(gu);
        if (delta.requires_grad()) delta.accumulate_grad(gdelta);
        if (a.requires_grad()) a.accumulate_grad(ga);
        if (b.requires_grad()) b.accumulate_grad(gb);
        if (c.requires_grad()) c.accumulate_grad(gc);
        if (d_skip.requires_grad()) d_skip.accumulate_grad(gd);
      });
  return result;
}

MambaBlock::MambaBlock(const MambaConfig& cfg, nn::Rng& rng) {
  if (cfg.d_model == 0 || cfg.state_size == 0 || cfg.expand == 0 || cfg.conv_width == 0) {
    throw ConfigError("mamba dimensions must be positive");
  }
  const std::size_t d = cfg.d_model, e = cfg.expand * cfg.d_model, n = cfg.state_size, k = cfg.conv_width;
  norm = nn::LayerNorm(d);
  in_x = nn::Linear(d, e, rng);
  in_gate = nn::Linear(d, e, rng);
  conv_weight = nn::uniform_param({e, k}, 1.0 / std::sqrt(static_cast<double>(k)), rng);
  conv_bias = nn::uniform_param({e}, 1.0 / std::sqrt(static_cast<double>(k)), rng);
  proj_b = nn::Linear(e, n, rng, false);
  proj_c = nn::Linear(e, n, rng, false);
  proj_delta = nn::Linear(e, e, rng);
  // Step sizes start log-uniform in [dt_min, dt_max]; bias = softplus^-1(dt).
  for (auto& v : proj_delta.bias.data()) {
    const double dt = std::exp(rng.uniform(std::log(cfg.dt_min), std::log(cfg.dt_max)));
    v = dt + std::log(-std::expm1(-dt));
  }
  for (auto& v : proj_delta.weight.data()) v *= 0.1;
  a_log = Tensor({e, n});
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = 0; j < n; ++j) a_log.data()[i * n + j] = std::log(static_cast<double>(j + 1));
  }
  a_log.set_requires_grad(true);
  d_skip = nn::constant_param({e}, 1.0);
  out_proj = nn::Linear(e, d, rng);
}

Tensor MambaBlock::mixer(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != norm.gamma.size()) {
    throw DimensionError("mamba block expects [B, T, " + std::to_string(norm.gamma.size()) + "], got " +
                         shape_str(x.shape()));
  }
  const Tensor h = norm.forward(x);
  const Tensor xs = ops::silu(ops::add(ops::causal_depthwise_conv1d(in_x.forward(h), conv_weight), conv_bias));
  const Tensor gate = ops::silu(in_gate.forward(h));
  const Tensor delta = ops::softplus(proj_delta.forward(xs));
  const Tensor a = ops::neg(ops::exp(a_log));
  const Tensor y = selective_scan(xs, delta, a, proj_b.forward(xs), proj_c.forward(xs), d_skip);
  return out_proj.forward(ops::mul(y, gate));
}

Tensor MambaBlock::forward(const Tensor& x) const { return ops::add(x, mixer(x)); }

void MambaBlock::collect(const std::string& prefix, NamedTensors& out) const {
  norm.collect(nn::join(prefix, "norm"), out);
  in_x.collect(nn::join(prefix, "in_x"), out);
  in_gate.collect(nn::join(prefix, "in_gate"), out);
  out.emplace_back(nn::join(prefix, "conv.weight"), conv_weight);
  out.emplace_back(nn::join(prefix, "conv.bias"), conv_bias);
  proj_b.collect(nn::join(prefix, "proj_b"), out);
  proj_c.collect(nn::join(prefix, "proj_c"), out);
  proj_delta.collect(nn::join(prefix, "proj_delta"), out);
  out.emplace_back(nn::join(prefix, "a_log"), a_log);
  out.emplace_back(nn::join(prefix, "d_skip"), d_skip);
  out_proj.collect(nn::join(prefix, "out_proj"), out);
}

PatternsExpert::PatternsExpert(std::size_t patch_len, const MambaConfig& cfg, std::size_t n_blocks,
                               nn::Rng& rng)
    : encoder(patch_len, cfg.d_model, rng) {
  for (std::size_t i = 0; i < n_blocks; ++i) blocks.emplace_back(cfg, rng);
}

Tensor PatternsExpert::forward(const Tensor& pts) const {
  Tensor z = encoder.forward(pts);
  for (const auto& blk : blocks) z = blk.forward(z);
  return z;
}

void PatternsExpert::collect(const std::string& prefix, NamedTensors& out) const {
  encoder.collect(nn::join(prefix, "encoder"), out);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(nn::join(prefix, "blocks." + std::to_string(i)), out);
  }
}

}  // namespace sst::mamba
