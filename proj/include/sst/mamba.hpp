#pragma once

#include <vector>

#include "sst/nn.hpp"

namespace sst::mamba {

struct Discretized {
  double a_bar = 0.0;
  double b_bar = 0.0;
};

/// Zero-order hold for one diagonal channel: a_bar = exp(delta*a),
/// b_bar = (exp(delta*a) - 1) / a * b, with b_bar = delta*b once |delta*a| < 1e-8.
Discretized zoh_discretize(double a, double b, double delta);

/// One sequence of SSM inputs. A holds the (negative) continuous diagonal.
struct ScanInputs {
  Tensor u;      // [T, E]
  Tensor delta;  // [T, E]
  Tensor a;      // [E, N]
  Tensor b;      // [T, N]
  Tensor c;      // [T, N]
  Tensor d_skip; // [E]

  std::size_t length() const { return u.dim(0); }
  std::size_t channels() const { return u.dim(1); }
  std::size_t state_size() const { return a.dim(1); }
  void validate() const;
};

/// Fixed-size latent state, E x N.
struct HiddenState {
  std::size_t channels = 0, state = 0;
  std::vector<double> h;
};

struct ScanTrace {
  double max_abs_state = 0.0;
  std::size_t state_elements = 0;  // size of the state buffer actually allocated
};

/// Sequential reference: h_t = a_bar_t * h_{t-1} + b_bar_t * u_t,
/// y_t = <C_t, h_t> + D * u_t, starting from h_0 = 0.
Tensor selective_scan_recurrence(const ScanInputs& in, ScanTrace* trace = nullptr,
                                 HiddenState* final_state = nullptr);

/// Time-invariant parameterisation: one delta per channel, one B and C.
struct LtiParams {
  Tensor delta;   // [E]
  Tensor a;       // [E, N]
  Tensor b;       // [N]
  Tensor c;       // [N]
  Tensor d_skip;  // [E]

  /// Expands to per-step inputs for the selective path.
  ScanInputs as_scan_inputs(const Tensor& u) const;
};

/// Causal convolution with the materialised kernel K_k = sum_n C a_bar^k b_bar.
Tensor lti_convolution_scan(const Tensor& u, const LtiParams& params);
/// Same, but accepts per-step inputs and rejects them unless every step is
/// identical (i.e. the parameters really are time-invariant).
Tensor lti_convolution_scan(const ScanInputs& in);

/// Batched differentiable scan. u, delta: [B, T, E]; a: [E, N];
/// b, c: [B, T, N]; d_skip: [E]. Returns [B, T, E].
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c, const Tensor& d_skip);

struct MambaConfig {
  std::size_t d_model = 16;
  std::size_t state_size = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  double dt_min = 1e-3;
  double dt_max = 1e-1;
};

/// Pre-norm residual Mamba block:
/// x + out_proj( scan(silu(conv(in_x(norm x)))) * silu(in_gate(norm x)) ).
class MambaBlock : public nn::Module {
 public:
  MambaBlock() = default;
  MambaBlock(const MambaConfig& cfg, nn::Rng& rng);

  /// x: [B, T, D].
  Tensor forward(const Tensor& x) const;
  /// The block without its residual connection.
  Tensor mixer(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  std::size_t inner_width() const { return conv_weight.dim(0); }

  nn::LayerNorm norm;
  nn::Linear in_x, in_gate;
  Tensor conv_weight;  // [E, k]
  Tensor conv_bias;    // [E]
  nn::Linear proj_b, proj_c;  // E -> N, no bias
  nn::Linear proj_delta;      // E -> E, softplus applied
  Tensor a_log;               // [E, N], A = -exp(a_log)
  Tensor d_skip;              // [E]
  nn::Linear out_proj;
};

/// Encoder P_L -> D followed by stacked Mamba blocks; no positional encoding.
class PatternsExpert : public nn::Module {
 public:
  PatternsExpert() = default;
  PatternsExpert(std::size_t patch_len, const MambaConfig& cfg, std::size_t blocks, nn::Rng& rng);

  /// pts: [B, N_L, P_L] -> z_L: [B, N_L, D].
  Tensor forward(const Tensor& pts) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  nn::Linear encoder;
  std::vector<MambaBlock> blocks;
};

}  // namespace sst::mamba
