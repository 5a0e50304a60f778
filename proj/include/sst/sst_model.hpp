#pragma once

#include <utility>

#include "sst/forecaster.hpp"
#include "sst/lwt.hpp"
#include "sst/mamba.hpp"
#include "sst/patcher.hpp"

namespace sst::model {

/// Per-step projection M -> D, flatten to L*D, linear to two logits, softmax.
class Router : public nn::Module {
 public:
  Router() = default;
  Router(std::size_t lookback, std::size_t variates, std::size_t d_model, nn::Rng& rng);

  /// lookback: [B, L, M] -> [B, 2] holding (p_L, p_S).
  Tensor forward(const Tensor& lookback) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  nn::Linear proj;
  nn::Linear gate;
};

/// Route a single [L, M] window.
std::pair<double, double> route(const Tensor& lookback, const Router& router);

/// head( concat(p_L * flatten(z_L), p_S * flatten(z_S)) ) for one variate.
/// z_L: [N_L, D], z_S: [N_S, D]; returns [F].
Tensor fuse_and_forecast(const Tensor& z_long, const Tensor& z_short, const Tensor& p_long,
                         const Tensor& p_short, const nn::Linear& head);

enum class Ablation {
  Full,
  MambaOnly,   // patterns expert on the long range only
  LwtOnly,     // variations expert on the short range only
  NoPatcher,   // both experts on raw steps (P = Str = 1)
  NoRouter,    // unweighted concatenation
};

std::string ablation_name(Ablation a);

struct SstConfig {
  std::size_t lookback = 672;
  std::size_t short_len = 336;
  std::size_t horizon = 96;
  std::size_t variates = 1;
  patcher::PatchSpec long_patch{48, 16, 672};
  patcher::PatchSpec short_patch{16, 8, 336};
  std::size_t d_model = 16;
  std::size_t state_size = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  std::size_t mamba_blocks = 2;
  std::size_t heads = 4;
  std::size_t window = 9;
  std::size_t lwt_layers = 3;
  lwt::AttentionPath attention_path = lwt::AttentionPath::Banded;
  Ablation ablation = Ablation::Full;

  std::size_t long_tokens() const;
  std::size_t short_tokens() const;
  /// Throws ConfigError before any parameters are allocated.
  void validate() const;
};

/// Multi-scale hybrid: Mamba over coarse long-range patches, local-window
/// Transformer over fine short-range patches, fused by the long-short router.
class SstModel : public Forecaster {
 public:
  SstModel(const SstConfig& cfg, std::uint64_t seed);

  Tensor forward(const Tensor& x) const override;
  std::string name() const override;
  std::size_t lookback() const override { return cfg_.lookback; }
  std::size_t horizon() const override { return cfg_.horizon; }
  std::optional<Tensor> router_weights(const Tensor& x) const override;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  /// Expert embeddings for one batch: z_L [B*M, N_L, D], z_S [B*M, N_S, D].
  /// Either may be empty under the single-expert ablations.
  std::pair<Tensor, Tensor> expert_embeddings(const Tensor& x) const;

  const SstConfig& config() const { return cfg_; }
  const Router& router() const { return router_; }
  const nn::Linear& head() const { return head_; }
  mamba::PatternsExpert& patterns() { return patterns_; }
  lwt::VariationsExpert& variations() { return variations_; }

 private:
  bool uses_long() const { return cfg_.ablation != Ablation::LwtOnly; }
  bool uses_short() const { return cfg_.ablation != Ablation::MambaOnly; }
  bool uses_router() const { return cfg_.ablation == Ablation::Full || cfg_.ablation == Ablation::NoPatcher; }

  SstConfig cfg_;
  patcher::PatchSpec long_spec_, short_spec_;
  mamba::PatternsExpert patterns_;
  lwt::VariationsExpert variations_;
  Router router_;
  nn::Linear head_;
};

}  // namespace sst::model
