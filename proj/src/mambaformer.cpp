#include "sst/mambaformer.hpp"

#include <map>

namespace sst::family {

std::string sublayer_name(SubLayer s) {
  switch (s) {
    case SubLayer::Attention: return "attention";
    case SubLayer::Mamba: return "mamba";
    case SubLayer::Ffn: return "ffn";
  }
  return "?";
}

std::string embedding_name(Embedding e) { return e == Embedding::Conv ? "conv" : "pi"; }

Embedding parse_embedding(const std::string& s) {
  if (s == "conv") return Embedding::Conv;
  if (s == "pi") return Embedding::Pi;
  throw ConfigError("unknown embedding '" + s + "' (expected conv or pi)");
}

namespace {
const std::map<std::string, std::vector<SubLayer>>& recipes() {
  using enum SubLayer;
  static const std::map<std::string, std::vector<SubLayer>> table{
      {"transformer", {Attention, Ffn}},
      {"mamba", {Mamba, Mamba}},
      {"attention_mamba", {Attention, Mamba}},
      {"mamba_attention", {Mamba, Attention}},
      {"mambaformer", {Mamba, Attention, Mamba}},
  };
  return table;
}

// zero row prepended or appended along the time axis
Tensor shift(const Tensor& x, bool right) {
  const std::size_t nb = x.dim(0), len = x.dim(1), m = x.dim(2);
  const Tensor pad(Shape{nb, 1, m}, 0.0);
  if (len == 1) return Tensor(Shape{nb, 1, m}, 0.0);
  if (right) return ops::concat({pad, ops::slice(x, 1, 0, len - 1)}, 1);
  return ops::concat({ops::slice(x, 1, 1, len - 1), pad}, 1);
}
}  // namespace

std::vector<SubLayer> recipe(const std::string& variant) {
  const auto it = recipes().find(variant);
  if (it == recipes().end()) throw ConfigError("unknown variant '" + variant + "'");
  return it->second;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"transformer", "mamba", "attention_mamba", "mamba_attention",
                                              "mambaformer"};
  return names;
}

bool default_positional(const std::string& variant) { return recipe(variant).front() == SubLayer::Attention; }

ConvEmbedding::ConvEmbedding(std::size_t variates, std::size_t d_model, nn::Rng& rng)
    : proj(3 * variates, d_model, rng) {}

Tensor ConvEmbedding::forward(const Tensor& x) const {
  if (x.rank() != 3 || 3 * x.dim(2) != proj.in_features()) {
    throw DimensionError("conv embedding expects [B, L, " + std::to_string(proj.in_features() / 3) + "], got " +
                         shape_str(x.shape()));
  }
  return proj.forward(ops::concat({shift(x, true), x, shift(x, false)}, 2));
}

void ConvEmbedding::collect(const std::string& prefix, NamedTensors& out) const {
  proj.collect(nn::join(prefix, "proj"), out);
}

Tensor conv_embed(const Tensor& window, const ConvEmbedding& embed) {
  if (window.rank() != 2) throw DimensionError("conv_embed expects an [L, M] window");
  const Tensor y = embed.forward(ops::reshape(window, {1, window.dim(0), window.dim(1)}));
  return ops::reshape(y, {window.dim(0), y.dim(2)});
}

PiTokens pi_embed(const Tensor& window, const patcher::PatchSpec& spec, const nn::Linear& proj) {
  if (window.rank() != 2) throw DimensionError("pi_embed expects an [L, M] window");
  if (proj.in_features() != spec.patch) throw DimensionError("projection width must equal the patch length");
  const std::size_t len = window.dim(0), m = window.dim(1);
  patcher::PatchSpec s = spec;
  s.range_len = len;
  s.validate();
  data::SeriesWindow w{window, Tensor(Shape{0, m}, 0.0), 0};
  auto [normed, stats] = data::revin_normalize(w);
  const Tensor series = ops::transpose_last2(normed.lookback);  // [M, L]
  return {proj.forward(ops::unfold(series, s.patch, s.stride)), std::move(stats)};
}

VariantModel::VariantModel(const VariantSpec& spec, const FamilyDims& dims, std::uint64_t seed)
    : spec_(spec), dims_(dims) {
  const auto layers = recipe(spec_.name);
  if (spec_.depth == 0) throw ConfigError("depth must be >= 1");
  if (dims_.d_model == 0 || dims_.d_model % 2 != 0) throw ConfigError("d_model must be even and positive");
  if (dims_.heads == 0 || dims_.d_model % dims_.heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (dims_.lookback == 0 || dims_.horizon == 0 || dims_.variates == 0) {
    throw ConfigError("lookback, horizon and variates must be positive");
  }
  nn::Rng rng(seed);
  if (spec_.embedding == Embedding::Conv) {
    conv_ = ConvEmbedding(dims_.variates, dims_.d_model, rng);
    tokens_ = dims_.lookback;
  } else {
    dims_.patch.range_len = dims_.lookback;
    try {
      dims_.patch.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    patch_proj_ = nn::Linear(dims_.patch.patch, dims_.d_model, rng);
    tokens_ = patcher::num_patches(dims_.lookback, dims_.patch.patch, dims_.patch.stride);
  }
  const mamba::MambaConfig mc{dims_.d_model, dims_.state_size, dims_.expand, dims_.conv_width};
  for (std::size_t b = 0; b < spec_.depth; ++b) {
    for (const SubLayer kind : layers) {
      Slot slot{kind, {}, {}, {}, {}};
      switch (kind) {
        case SubLayer::Attention:
          slot.norm = nn::LayerNorm(dims_.d_model);
          slot.attn = lwt::SelfAttention(dims_.d_model, dims_.heads, rng);
          break;
        case SubLayer::Mamba:
          slot.mamba = mamba::MambaBlock(mc, rng);
          break;
        case SubLayer::Ffn:
          slot.norm = nn::LayerNorm(dims_.d_model);
          slot.ffn = lwt::FeedForward(dims_.d_model, dims_.ffn_mult, rng);
          break;
      }
      slots_.push_back(std::move(slot));
    }
  }
  const std::size_t out = spec_.embedding == Embedding::Conv ? dims_.horizon * dims_.variates : dims_.horizon;
  head_ = nn::Linear(tokens_ * dims_.d_model, out, rng);
}

std::string VariantModel::name() const { return spec_.name + "_" + embedding_name(spec_.embedding); }

Tensor VariantModel::encode(const Tensor& tokens) const {
  Tensor z = tokens;
  if (spec_.positional()) z = ops::add(z, lwt::sinusoidal_positions(z.dim(1), dims_.d_model));
  for (const auto& slot : slots_) {
    if (trace_) trace_->push_back(slot.kind);
    switch (slot.kind) {
      case SubLayer::Attention:
        z = ops::add(z, slot.attn.forward(slot.norm.forward(z), 0, lwt::AttentionPath::Full));
        break;
      case SubLayer::Mamba:
        z = slot.mamba.forward(z);
        break;
      case SubLayer::Ffn:
        z = ops::add(z, slot.ffn.forward(slot.norm.forward(z)));
        break;
    }
  }
  return z;
}

Tensor VariantModel::forward(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != dims_.lookback || x.dim(2) != dims_.variates) {
    throw DimensionError(name() + " expects [B, " + std::to_string(dims_.lookback) + ", " +
                         std::to_string(dims_.variates) + "], got " + shape_str(x.shape()));
  }
  const std::size_t nb = x.dim(0), m = x.dim(2);
  if (spec_.embedding == Embedding::Conv) {
    const Tensor z = encode(conv_.forward(x));
    return ops::reshape(head_.forward(ops::flatten(z, 1)), {nb, dims_.horizon, m});
  }
  const Tensor series = ops::reshape(ops::permute(x, {0, 2, 1}), {nb * m, dims_.lookback});
  const Tensor z = encode(patch_proj_.forward(ops::unfold(series, dims_.patch.patch, dims_.patch.stride)));
  const Tensor y = head_.forward(ops::flatten(z, 1));  // [B*M, F]
  return ops::permute(ops::reshape(y, {nb, m, dims_.horizon}), {0, 2, 1});
}

void VariantModel::collect(const std::string& prefix, NamedTensors& out) const {
  if (spec_.embedding == Embedding::Conv) {
    conv_.collect(nn::join(prefix, "embed"), out);
  } else {
    patch_proj_.collect(nn::join(prefix, "embed"), out);
  }
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const std::string p = nn::join(prefix, "layers." + std::to_string(i));
    const Slot& s = slots_[i];
    switch (s.kind) {
      case SubLayer::Attention:
        s.norm.collect(nn::join(p, "norm"), out);
        s.attn.collect(nn::join(p, "attn"), out);
        break;
      case SubLayer::Mamba:
        s.mamba.collect(nn::join(p, "mamba"), out);
        break;
      case SubLayer::Ffn:
        s.norm.collect(nn::join(p, "norm"), out);
        s.ffn.collect(nn::join(p, "ffn"), out);
        break;
    }
  }
  head_.collect(nn::join(prefix, "head"), out);
}

DLinear::DLinear(std::size_t lookback, std::size_t horizon, std::size_t kernel, std::uint64_t seed)
    : lookback_(lookback), horizon_(horizon), kernel_(kernel) {
  if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be positive");
  if (kernel == 0 || kernel % 2 == 0 || kernel > lookback) {
    throw ConfigError("decomposition kernel must be odd and at most the lookback");
  }
  nn::Rng rng(seed);
  trend_map = nn::Linear(lookback, horizon, rng);
  residual_map = nn::Linear(lookback, horizon, rng);
  // column t averages the truncated window around t, matching moving_average_decompose
  std::vector<double> avg(lookback * lookback, 0.0);
  const std::size_t half = kernel / 2;
  for (std::size_t t = 0; t < lookback; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(lookback - 1, t + half);
    const double w = 1.0 / static_cast<double>(hi - lo + 1);
    for (std::size_t s = lo; s <= hi; ++s) avg[s * lookback + t] = w;
  }
  average_ = Tensor(Shape{lookback, lookback}, std::move(avg));
}

Tensor DLinear::forward(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != lookback_) {
    throw DimensionError("dlinear expects [B, " + std::to_string(lookback_) + ", M], got " + shape_str(x.shape()));
  }
  const Tensor series = ops::permute(x, {0, 2, 1});  // [B, M, L]
  const Tensor trend = ops::matmul(series, average_);
  const Tensor residual = ops::sub(series, trend);
  const Tensor y = ops::add(trend_map.forward(trend), residual_map.forward(residual));
  return ops::permute(y, {0, 2, 1});
}

void DLinear::collect(const std::string& prefix, NamedTensors& out) const {
  trend_map.collect(nn::join(prefix, "trend"), out);
  residual_map.collect(nn::join(prefix, "residual"), out);
}

Tensor dlinear_baseline(const Tensor& window, const DLinear& model) {
  if (window.rank() != 2) throw DimensionError("dlinear_baseline expects an [L, M] window");
  const Tensor y = model.forward(ops::reshape(window, {1, window.dim(0), window.dim(1)}));
  return ops::reshape(y, {model.horizon(), window.dim(1)});
}

}  // namespace sst::family
