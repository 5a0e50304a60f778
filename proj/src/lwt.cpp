#include "sst/lwt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sst::lwt {
namespace {

thread_local std::uint64_t t_logits = 0;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

std::uint64_t logits_evaluated() { return t_logits; }
void reset_logit_counter() { t_logits = 0; }

Tensor sinusoidal_positions(std::size_t tokens, std::size_t width) {
  if (width == 0 || width % 2 != 0) throw ParameterError("positional width must be even, got " + std::to_string(width));
  Tensor pe({tokens, width});
  auto v = pe.data();
  for (std::size_t pos = 0; pos < tokens; ++pos) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) * freq;
      v[pos * width + 2 * i] = std::sin(angle);
      v[pos * width + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

bool AttentionMask::all_allowed() const {
  return std::all_of(allowed.begin(), allowed.end(), [](std::uint8_t a) { return a != 0; });
}

std::vector<std::uint8_t> AttentionMask::blocked() const {
  std::vector<std::uint8_t> out(allowed.size());
  for (std::size_t i = 0; i < allowed.size(); ++i) out[i] = allowed[i] ? 0 : 1;
  return out;
}

AttentionMask window_mask(std::size_t tokens, std::size_t window) {
  if (window < 1) throw ParameterError("attention window must be >= 1");
  AttentionMask m{tokens, window / 2, std::vector<std::uint8_t>(tokens * tokens, 0)};
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t j = 0; j < tokens; ++j) {
      const std::size_t gap = i > j ? i - j : j - i;
      m.allowed[i * tokens + j] = gap <= m.half_width ? 1 : 0;
    }
  }
  return m;
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask) {
  if (q.rank() != 2 || k.shape() != q.shape() || v.rank() != 2 || v.dim(0) != q.dim(0) ||
      mask.tokens != q.dim(0)) {
    throw DimensionError("masked_attention expects Q, K [N, d_k], V [N, d_v] and an N x N mask");
  }
  const std::size_t n = q.dim(0), dk = q.dim(1), dv = v.dim(1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor out({n, dv});
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j) {
      double s = kNegInf;
      if (mask.at(i, j)) {
        s = 0.0;
        for (std::size_t c = 0; c < dk; ++c) s += q.data()[i * dk + c] * k.data()[j * dk + c];
        s *= scale;
      }
      w[j] = s;
      mx = std::max(mx, s);
    }
    double total = 0.0;
    for (auto& x : w) {
      x = std::exp(x - mx);
      total += x;
    }
    for (std::size_t c = 0; c < dv; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += w[j] / total * v.data()[j * dv + c];
      out.data()[i * dv + c] = acc;
    }
  }
  return out;
}

Tensor dense_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       const AttentionMask* mask) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention expects q, k, v of identical [B, N, D] shape");
  }
  const std::size_t nb = q.dim(0), n = q.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) throw DimensionError("width " + std::to_string(d) + " not divisible by heads");
  if (mask && mask->tokens != n) throw DimensionError("mask size does not match token count");
  const std::size_t dk = d / heads;
  auto split = [&](const Tensor& t) { return ops::permute(ops::reshape(t, {nb, n, heads, dk}), {0, 2, 1, 3}); };
  Tensor scores = ops::scale(ops::matmul(split(q), ops::transpose_last2(split(k))),
                             1.0 / std::sqrt(static_cast<double>(dk)));
  t_logits += nb * heads * n * n;
  if (mask && !mask->all_allowed()) scores = ops::masked_fill(scores, mask->blocked(), kNegInf);
  const Tensor ctx = ops::matmul(ops::softmax(scores), split(v));
  return ops::reshape(ops::permute(ctx, {0, 2, 1, 3}), {nb, n, d});
}

Tensor banded_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                        std::size_t half_width) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.shape() != q.shape()) {
    throw DimensionError("attention expects q, k, v of identical [B, N, D] shape");
  }
  const std::size_t nb = q.dim(0), n = q.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) throw DimensionError("width " + std::to_string(d) + " not divisible by heads");
  const std::size_t dk = d / heads;
  const std::size_t band = 2 * half_width + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Tensor in[] = {q, k, v};
  const bool recording = should_record(in);
  const auto qv = q.data();
  const auto kv = k.data();
  const auto vv = v.data();
  Buffer out(q.size(), 0.0);
  // probs[(b, h, i), slot] with slot = j - i + half_width
  Buffer probs(recording ? nb * heads * n * band : 0, 0.0);
  std::vector<double> w(band);
  std::uint64_t evaluated = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col = h * dk;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half_width ? i - half_width : 0;
        const std::size_t hi = std::min(n, i + half_width + 1);
        const double* qi = qv.data() + (b * n + i) * d + col;
        double mx = kNegInf;
        for (std::size_t j = lo; j < hi; ++j) {
          const double* kj = kv.data() + (b * n + j) * d + col;
          double s = 0.0;
          for (std::size_t c = 0; c < dk; ++c) s += qi[c] * kj[c];
          s *= scale;
          w[j - lo] = s;
          mx = std::max(mx, s);
        }
        evaluated += hi - lo;
        double total = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
          w[j - lo] = std::exp(w[j - lo] - mx);
          total += w[j - lo];
        }
        double* oi = out.data() + (b * n + i) * d + col;
        for (std::size_t j = lo; j < hi; ++j) {
          const double p = w[j - lo] / total;
          if (recording) probs[((b * heads + h) * n + i) * band + (j + half_width - i)] = p;
          const double* vj = vv.data() + (b * n + j) * d + col;
          for (std::size_t c = 0; c < dk; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  t_logits += evaluated;
  Tensor result(q.shape(), std::move(out));
  if (!recording) return result;
  active_tape()->record(
      "banded_attention", {q, k, v}, result, [=, probs = std::move(probs)]() mutable {
        const auto g = result.grad();
        const auto qv = q.data();
        const auto kv = k.data();
        const auto vv = v.data();
        Buffer gq(q.size(), 0.0), gk(k.size(), 0.0), gv(v.size(), 0.0);
        std::vector<double> dp(band);
        for (std::size_t b = 0; b < nb; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t col = h * dk;
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t lo = i >= half_width ? i - half_width : 0;
              const std::size_t hi = std::min(n, i + half_width + 1);
              const double* row = probs.data() + ((b * heads + h) * n + i) * band;
              auto p = [&](std::size_t j) { return row[j + half_width - i]; };
              const double* gi = g.data() + (b * n + i) * d + col;
              double dot = 0.0;
              for (std::size_t j = lo; j < hi; ++j) {
                const double* vj = vv.data() + (b * n + j) * d + col;
                double* gvj = gv.data() + (b * n + j) * d + col;
                double s = 0.0;
                for (std::size_t c = 0; c < dk; ++c) {
                  s += gi[c] * vj[c];
                  gvj[c] += p(j) * gi[c];
                }
                dp[j - lo] = s;
                dot += p(j) * s;
              }
              const double* qi = qv.data() + (b * n + i) * d + col;
              double* gqi = gq.data() + (b * n + i) * d + col;
              for (std::size_t j = lo; j < hi; ++j) {
                const double ds = p(j) * (dp[j - lo] - dot) * scale;
                const double* kj = kv.data() + (b * n + j) * d + col;
                double* gkj = gk.data() + (b * n + j) * d + col;
                for (std::size_t c = 0; c < dk; ++c) {
                  gqi[c] += ds * kj[c];
                  gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
        if (q.requires_grad()) q.accumulate_grad(gq);
        if (k.requires_grad()) k.accumulate_grad(gk);
        if (v.requires_grad()) v.accumulate_grad(gv);
      });
  return result;
}

SelfAttention::SelfAttention(std::size_t d_model, std::size_t n_heads, nn::Rng& rng)
    : heads(n_heads),
      wq(d_model, d_model, rng),
      wk(d_model, d_model, rng),
      wv(d_model, d_model, rng),
      wo(d_model, d_model, rng) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
}

Tensor SelfAttention::forward(const Tensor& x, std::size_t window, AttentionPath path) const {
  const Tensor q = wq.forward(x), k = wk.forward(x), v = wv.forward(x);
  const std::size_t n = x.dim(1);
  Tensor ctx;
  if (window == 0 || path == AttentionPath::Full) {
    ctx = dense_attention(q, k, v, heads, nullptr);
  } else if (path == AttentionPath::Dense) {
    const AttentionMask mask = window_mask(n, window);
    ctx = dense_attention(q, k, v, heads, &mask);
  } else {
    ctx = banded_attention(q, k, v, heads, window / 2);
  }
  return wo.forward(ctx);
}

void SelfAttention::collect(const std::string& prefix, NamedTensors& out) const {
  wq.collect(nn::join(prefix, "wq"), out);
  wk.collect(nn::join(prefix, "wk"), out);
  wv.collect(nn::join(prefix, "wv"), out);
  wo.collect(nn::join(prefix, "wo"), out);
}

FeedForward::FeedForward(std::size_t d_model, std::size_t mult, nn::Rng& rng)
    : fc1(d_model, mult * d_model, rng), fc2(mult * d_model, d_model, rng) {}

void FeedForward::collect(const std::string& prefix, NamedTensors& out) const {
  fc1.collect(nn::join(prefix, "fc1"), out);
  fc2.collect(nn::join(prefix, "fc2"), out);
}

LwtLayer::LwtLayer(const LwtConfig& c, nn::Rng& rng)
    : cfg(c), norm1(c.d_model), norm2(c.d_model), attn(c.d_model, c.heads, rng), ffn(c.d_model, c.ffn_mult, rng) {
  if (c.window < 1) throw ConfigError("attention window must be >= 1");
}

Tensor LwtLayer::forward(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != cfg.d_model) {
    throw DimensionError("LWT layer expects [B, N, " + std::to_string(cfg.d_model) + "], got " +
                         shape_str(x.shape()));
  }
  const Tensor h = ops::add(x, attn.forward(norm1.forward(x), cfg.window, cfg.path));
  return ops::add(h, ffn.forward(norm2.forward(h)));
}

void LwtLayer::collect(const std::string& prefix, NamedTensors& out) const {
  norm1.collect(nn::join(prefix, "norm1"), out);
  attn.collect(nn::join(prefix, "attn"), out);
  norm2.collect(nn::join(prefix, "norm2"), out);
  ffn.collect(nn::join(prefix, "ffn"), out);
}

VariationsExpert::VariationsExpert(std::size_t patch_len, const LwtConfig& cfg, std::size_t n_layers,
                                   nn::Rng& rng)
    : embed(patch_len, cfg.d_model, rng) {
  if (cfg.d_model % 2 != 0) throw ConfigError("d_model must be even for positional encoding");
  for (std::size_t i = 0; i < n_layers; ++i) layers.emplace_back(cfg, rng);
}

Tensor VariationsExpert::forward(const Tensor& pts) const {
  if (pts.rank() != 3) throw DimensionError("variations expert expects [B, N_S, P_S]");
  Tensor z = ops::add(embed.forward(pts), sinusoidal_positions(pts.dim(1), embed.out_features()));
  for (const auto& layer : layers) z = layer.forward(z);
  return z;
}

void VariationsExpert::collect(const std::string& prefix, NamedTensors& out) const {
  embed.collect(nn::join(prefix, "embed"), out);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].collect(nn::join(prefix, "layers." + std::to_string(i)), out);
  }
}

void VariationsExpert::set_path(AttentionPath path) {
  for (auto& layer : layers) layer.cfg.path = path;
}

}  // namespace sst::lwt
