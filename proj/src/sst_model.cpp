#include "sst/sst_model.hpp"

namespace sst::model {

Router::Router(std::size_t lookback, std::size_t variates, std::size_t d_model, nn::Rng& rng)
    : proj(variates, d_model, rng), gate(lookback * d_model, 2, rng) {}

Tensor Router::forward(const Tensor& lookback) const {
  if (lookback.rank() != 3 || lookback.dim(2) != proj.in_features() ||
      lookback.dim(1) * proj.out_features() != gate.in_features()) {
    throw DimensionError("router expects [B, " + std::to_string(gate.in_features() / proj.out_features()) + ", " +
                         std::to_string(proj.in_features()) + "], got " + shape_str(lookback.shape()));
  }
  const Tensor z = ops::flatten(proj.forward(lookback), 1);
  return ops::softmax(gate.forward(z));
}

void Router::collect(const std::string& prefix, NamedTensors& out) const {
  proj.collect(nn::join(prefix, "proj"), out);
  gate.collect(nn::join(prefix, "gate"), out);
}

std::pair<double, double> route(const Tensor& lookback, const Router& router) {
  if (lookback.rank() != 2) throw DimensionError("route expects an [L, M] window");
  const Tensor p = router.forward(ops::reshape(lookback, {1, lookback.dim(0), lookback.dim(1)}));
  return {p.data()[0], p.data()[1]};
}

Tensor fuse_and_forecast(const Tensor& z_long, const Tensor& z_short, const Tensor& p_long,
                         const Tensor& p_short, const nn::Linear& head) {
  if (z_long.rank() != 2 || z_short.rank() != 2 || z_long.dim(1) != z_short.dim(1)) {
    throw DimensionError("fusion expects z_L [N_L, D] and z_S [N_S, D] of equal width");
  }
  if (p_long.size() != 1 || p_short.size() != 1) throw DimensionError("router weights must be scalars");
  if (head.in_features() != z_long.size() + z_short.size()) {
    throw DimensionError("head expects " + std::to_string(head.in_features()) + " features, fusion yields " +
                         std::to_string(z_long.size() + z_short.size()));
  }
  const Tensor fused = ops::concat({ops::mul(ops::reshape(z_long, {z_long.size()}), ops::reshape(p_long, {1})),
                                    ops::mul(ops::reshape(z_short, {z_short.size()}), ops::reshape(p_short, {1}))},
                                   0);
  return head.forward(fused);
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full: return "sst";
    case Ablation::MambaOnly: return "sst_mamba_only";
    case Ablation::LwtOnly: return "sst_lwt_only";
    case Ablation::NoPatcher: return "sst_no_patcher";
    case Ablation::NoRouter: return "sst_no_router";
  }
  return "sst";
}

namespace {
patcher::PatchSpec effective(const patcher::PatchSpec& spec, std::size_t range, Ablation a) {
  if (a == Ablation::NoPatcher) return {1, 1, range};
  return {spec.patch, spec.stride, range};
}
}  // namespace

std::size_t SstConfig::long_tokens() const {
  const auto s = effective(long_patch, lookback, ablation);
  return patcher::num_patches(lookback, s.patch, s.stride);
}

std::size_t SstConfig::short_tokens() const {
  const auto s = effective(short_patch, short_len, ablation);
  return patcher::num_patches(short_len, s.patch, s.stride);
}

void SstConfig::validate() const {
  if (horizon == 0 || variates == 0 || d_model == 0) throw ConfigError("horizon, variates and d_model must be positive");
  if (d_model % 2 != 0) throw ConfigError("d_model must be even");
  if (heads == 0 || d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  if (window == 0) throw ConfigError("window must be >= 1");
  if (ablation == Ablation::NoPatcher) {
    if (short_len == 0 || short_len >= lookback) throw ConfigError("short range must satisfy 0 < S < L");
    return;
  }
  patcher::check_multi_scale(lookback, short_len, long_patch, short_patch);
}

SstModel::SstModel(const SstConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  long_spec_ = effective(cfg_.long_patch, cfg_.lookback, cfg_.ablation);
  short_spec_ = effective(cfg_.short_patch, cfg_.short_len, cfg_.ablation);
  nn::Rng rng(seed);
  const mamba::MambaConfig mc{cfg_.d_model, cfg_.state_size, cfg_.expand, cfg_.conv_width};
  const lwt::LwtConfig lc{cfg_.d_model, cfg_.heads, cfg_.window, 4, cfg_.attention_path};
  std::size_t features = 0;
  if (uses_long()) {
    patterns_ = mamba::PatternsExpert(long_spec_.patch, mc, cfg_.mamba_blocks, rng);
    features += cfg_.long_tokens() * cfg_.d_model;
  }
  if (uses_short()) {
    variations_ = lwt::VariationsExpert(short_spec_.patch, lc, cfg_.lwt_layers, rng);
    features += cfg_.short_tokens() * cfg_.d_model;
  }
  if (uses_router()) router_ = Router(cfg_.lookback, cfg_.variates, cfg_.d_model, rng);
  head_ = nn::Linear(features, cfg_.horizon, rng);
}

std::string SstModel::name() const { return ablation_name(cfg_.ablation); }

std::pair<Tensor, Tensor> SstModel::expert_embeddings(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.lookback || x.dim(2) != cfg_.variates) {
    throw DimensionError("SST expects [B, " + std::to_string(cfg_.lookback) + ", " + std::to_string(cfg_.variates) +
                         "], got " + shape_str(x.shape()));
  }
  const std::size_t nb = x.dim(0), m = x.dim(2);
  // channel independence: every variate becomes its own sequence
  const Tensor series = ops::reshape(ops::permute(x, {0, 2, 1}), {nb * m, cfg_.lookback});
  Tensor z_long, z_short;
  if (uses_long()) z_long = patterns_.forward(ops::unfold(series, long_spec_.patch, long_spec_.stride));
  if (uses_short()) {
    const Tensor recent = ops::slice(series, 1, cfg_.lookback - cfg_.short_len, cfg_.short_len);
    z_short = variations_.forward(ops::unfold(recent, short_spec_.patch, short_spec_.stride));
  }
  return {z_long, z_short};
}

Tensor SstModel::forward(const Tensor& x) const {
  const auto [z_long, z_short] = expert_embeddings(x);
  const std::size_t nb = x.dim(0), m = x.dim(2);
  std::vector<Tensor> parts;
  Tensor p;
  if (uses_router()) p = router_.forward(x);
  auto weighted = [&](const Tensor& z, std::size_t column) {
    const Tensor flat = ops::reshape(z, {nb, m, z.size() / (nb * m)});
    if (!uses_router()) return flat;
    return ops::mul(flat, ops::reshape(ops::slice(p, 1, column, 1), {nb, 1, 1}));
  };
  if (uses_long()) parts.push_back(weighted(z_long, 0));
  if (uses_short()) parts.push_back(weighted(z_short, 1));
  const Tensor fused = parts.size() == 1 ? parts.front() : ops::concat(parts, 2);
  return ops::permute(head_.forward(fused), {0, 2, 1});
}

std::optional<Tensor> SstModel::router_weights(const Tensor& x) const {
  if (!uses_router()) return std::nullopt;
  return router_.forward(x);
}

void SstModel::collect(const std::string& prefix, NamedTensors& out) const {
  if (uses_long()) patterns_.collect(nn::join(prefix, "patterns"), out);
  if (uses_short()) variations_.collect(nn::join(prefix, "variations"), out);
  if (uses_router()) router_.collect(nn::join(prefix, "router"), out);
  head_.collect(nn::join(prefix, "head"), out);
}

}  // namespace sst::model
