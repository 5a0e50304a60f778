#pragma once

#include <cstdint>
#include <vector>

#include "sst/nn.hpp"

namespace sst::lwt {

/// N x D sine/cosine table: even columns sin(pos * f_i), odd columns
/// cos(pos * f_i), with f_i = 10000^(-2i/D).
Tensor sinusoidal_positions(std::size_t tokens, std::size_t width);

/// Symmetric band: allowed(i, j) iff |i - j| <= half_width.
struct AttentionMask {
  std::size_t tokens = 0;
  std::size_t half_width = 0;
  std::vector<std::uint8_t> allowed;  // row-major N x N

  bool at(std::size_t i, std::size_t j) const { return allowed[i * tokens + j] != 0; }
  bool all_allowed() const;
  /// Entries to overwrite with -inf.
  std::vector<std::uint8_t> blocked() const;
};

/// Band mask with half-width floor(w / 2).
AttentionMask window_mask(std::size_t tokens, std::size_t window);

/// Single-head reference: softmax(Q K^T / sqrt(d_k)) V with disallowed logits at -inf.
/// Q, K, V are [N, d_k]. Plain arithmetic, no tape.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask);

enum class AttentionPath {
  Banded,  // fused kernel that only visits in-band logits
  Dense,   // primitive composition with masked_fill
  Full,    // primitive composition, no mask at all
};

/// Multi-head attention core on projected q, k, v: [B, N, D] -> [B, N, D].
Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       const AttentionMask* mask);
Tensor banded_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::size_t half_width);

/// Logits evaluated by attention kernels on this thread since the last reset.
std::uint64_t logits_evaluated();
void reset_logit_counter();

struct LwtConfig {
  std::size_t d_model = 16;
  std::size_t heads = 4;
  std::size_t window = 9;
  std::size_t ffn_mult = 4;
  AttentionPath path = AttentionPath::Banded;
};

/// Multi-head self-attention with its four projections.
class SelfAttention : public nn::Module {
 public:
  SelfAttention() = default;
  SelfAttention(std::size_t d_model, std::size_t heads, nn::Rng& rng);

  /// window == 0 means unrestricted attention.
  Tensor forward(const Tensor& x, std::size_t window, AttentionPath path) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  std::size_t heads = 1;
  nn::Linear wq, wk, wv, wo;
};

class FeedForward : public nn::Module {
 public:
  FeedForward() = default;
  FeedForward(std::size_t d_model, std::size_t mult, nn::Rng& rng);

  Tensor forward(const Tensor& x) const { return fc2.forward(ops::silu(fc1.forward(x))); }
  void collect(const std::string& prefix, NamedTensors& out) const override;

  nn::Linear fc1, fc2;
};

/// Pre-norm encoder layer: x + MHA(norm x), then + FFN(norm .).
class LwtLayer : public nn::Module {
 public:
  LwtLayer() = default;
  LwtLayer(const LwtConfig& cfg, nn::Rng& rng);

  /// x: [B, N, D].
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  LwtConfig cfg;
  nn::LayerNorm norm1, norm2;
  SelfAttention attn;
  FeedForward ffn;
};

/// Patch embedding P_S -> D plus sinusoidal positions, then stacked LWT layers.
class VariationsExpert : public nn::Module {
 public:
  VariationsExpert() = default;
  VariationsExpert(std::size_t patch_len, const LwtConfig& cfg, std::size_t layers, nn::Rng& rng);

  /// pts: [B, N_S, P_S] -> z_S: [B, N_S, D].
  Tensor forward(const Tensor& pts) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;
  void set_path(AttentionPath path);

  nn::Linear embed;
  std::vector<LwtLayer> layers;
};

}  // namespace sst::lwt
