#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sst/data.hpp"
#include "sst/forecaster.hpp"
#include "sst/lwt.hpp"
#include "sst/mamba.hpp"
#include "sst/patcher.hpp"

namespace sst::family {

enum class SubLayer { Attention, Mamba, Ffn };
std::string sublayer_name(SubLayer s);

enum class Embedding { Conv, Pi };
std::string embedding_name(Embedding e);
Embedding parse_embedding(const std::string& s);

/// Per-block sub-layer order. Unknown names throw ConfigError.
std::vector<SubLayer> recipe(const std::string& variant);
const std::vector<std::string>& variant_names();

/// True iff the recipe opens with attention.
bool default_positional(const std::string& variant);

struct VariantSpec {
  std::string name = "mambaformer";
  Embedding embedding = Embedding::Pi;
  std::size_t depth = 2;
  std::optional<bool> use_positional;

  bool positional() const { return use_positional.value_or(default_positional(name)); }
};

struct FamilyDims {
  std::size_t lookback = 196;
  std::size_t horizon = 96;
  std::size_t variates = 1;
  std::size_t d_model = 16;
  std::size_t state_size = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  patcher::PatchSpec patch{16, 8, 196};
};

/// Kernel-3 same-padded convolution M -> D, written as a linear map over the
/// stacked taps [x_{t-1}, x_t, x_{t+1}]. Rows M..2M-1 of the weight are the centre tap.
class ConvEmbedding : public nn::Module {
 public:
  ConvEmbedding() = default;
  ConvEmbedding(std::size_t variates, std::size_t d_model, nn::Rng& rng);

  /// x: [B, L, M] -> [B, L, D].
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const override;

  nn::Linear proj;
};

/// window: [L, M] -> [L, D].
Tensor conv_embed(const Tensor& window, const ConvEmbedding& embed);

struct PiTokens {
  Tensor tokens;  // [M, N, D]
  data::NormStats stats;
};

/// Instance-normalises the window, patches each variate, projects P -> D.
PiTokens pi_embed(const Tensor& window, const patcher::PatchSpec& spec, const nn::Linear& proj);

class VariantModel : public Forecaster {
 public:
  VariantModel(const VariantSpec& spec, const FamilyDims& dims, std::uint64_t seed);

  Tensor forward(const Tensor& x) const override;
  std::string name() const override;
  std::size_t lookback() const override { return dims_.lookback; }
  std::size_t horizon() const override { return dims_.horizon; }
  void collect(const std::string& prefix, NamedTensors& out) const override;

  /// Sub-layers invoked by subsequent forwards are appended to `sink`; nullptr stops.
  void trace_into(std::vector<SubLayer>* sink) const { trace_ = sink; }
  const VariantSpec& spec() const { return spec_; }
  std::size_t tokens() const { return tokens_; }

 private:
  struct Slot {
    SubLayer kind;
    nn::LayerNorm norm;
    lwt::SelfAttention attn;
    mamba::MambaBlock mamba;
    lwt::FeedForward ffn;
  };

  Tensor encode(const Tensor& tokens) const;

  VariantSpec spec_;
  FamilyDims dims_;
  std::size_t tokens_ = 0;
  ConvEmbedding conv_;
  nn::Linear patch_proj_;
  std::vector<Slot> slots_;
  nn::Linear head_;
  mutable std::vector<SubLayer>* trace_ = nullptr;
};

/// Channel-independent decomposition-linear baseline. The moving average is a
/// fixed [L, L] averaging matrix so gradients flow through it.
class DLinear : public Forecaster {
 public:
  DLinear(std::size_t lookback, std::size_t horizon, std::size_t kernel, std::uint64_t seed);

  Tensor forward(const Tensor& x) const override;
  std::string name() const override { return "dlinear"; }
  std::size_t lookback() const override { return lookback_; }
  std::size_t horizon() const override { return horizon_; }
  void collect(const std::string& prefix, NamedTensors& out) const override;

  std::size_t kernel() const { return kernel_; }
  nn::Linear trend_map, residual_map;

 private:
  std::size_t lookback_, horizon_, kernel_;
  Tensor average_;  // [L, L], trend = x . average_
};

/// window: [L, M] -> [F, M].
Tensor dlinear_baseline(const Tensor& window, const DLinear& model);

}  // namespace sst::family
