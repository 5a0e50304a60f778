#include "sst/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace sst::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

thread_local std::unordered_map<std::string, std::uint64_t> t_counts;

void count(std::string_view op) { ++t_counts[std::string(op)]; }

void check_finite(std::string_view op, std::span<const double> values) {
  if (!numeric_checks_enabled()) return;
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericDomainError(std::string(op) + " produced a non-finite value");
    }
  }
}

Tensor finish(std::string_view op, Shape shape, Buffer values, bool checked = true) {
  count(op);
  if (checked) check_finite(op, values);
  return Tensor(std::move(shape), std::move(values));
}

void record(std::string_view op, std::vector<Tensor> inputs, const Tensor& out,
            std::function<void()> backward) {
  active_tape()->record(std::string(op), std::move(inputs), out, std::move(backward));
}

// ---- broadcasting -------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t src = s.size() - 1 - k;
    const std::size_t dst = out.size() - 1 - k;
    st[dst] = s[src] == 1 ? 0 : stride;
    stride *= s[src];
  }
  return st;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const Shape& a, const Shape& b, const Shape& out, F&& f) {
  const std::size_t n = numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t na = numel(a);
  const std::size_t nb = numel(b);
  if (a == out && is_suffix(b, out)) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
    return;
  }
  if (b == out && is_suffix(a, out)) {
    for (std::size_t i = 0; i < n; ++i) f(i, i % na, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < out[k]) break;
      ia -= sa[k] * out[k];
      ib -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(BinOp kind, std::string_view name, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Buffer out(numel(out_shape));
  const auto da = a.data();
  const auto db = b.data();
  switch (kind) {
    case BinOp::Add:
      for_each_broadcast(a.shape(), b.shape(), out_shape,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = da[ia] + db[ib]; });
      break;
    case BinOp::Sub:
      for_each_broadcast(a.shape(), b.shape(), out_shape,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = da[ia] - db[ib]; });
      break;
    case BinOp::Mul:
      for_each_broadcast(a.shape(), b.shape(), out_shape,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = da[ia] * db[ib]; });
      break;
  }
  Tensor result = finish(name, out_shape, std::move(out));
  const Tensor in[] = {a, b};
  if (should_record(in)) {
    record(name, {a, b}, result, [kind, a, b, result, out_shape]() mutable {
      const auto g = result.grad();
      const auto da = a.data();
      const auto db = b.data();
      if (a.requires_grad()) {
        Buffer ga(a.size(), 0.0);
        for_each_broadcast(a.shape(), b.shape(), out_shape,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             ga[ia] += kind == BinOp::Mul ? g[i] * db[ib] : g[i];
                           });
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        Buffer gb(b.size(), 0.0);
        for_each_broadcast(a.shape(), b.shape(), out_shape,
                           [&](std::size_t i, std::size_t ia, std::size_t ib) {
                             gb[ib] += kind == BinOp::Mul ? g[i] * da[ia]
                                       : kind == BinOp::Sub ? -g[i]
                                                            : g[i];
                           });
        b.accumulate_grad(gb);
      }
    });
  }
  return result;
}

// Elementwise unary with derivative expressed from (x, y).
template <class Fwd, class Deriv>
Tensor unary(std::string_view name, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto dx = x.data();
  Buffer out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
  Tensor result = finish(name, x.shape(), std::move(out));
  const Tensor in[] = {x};
  if (should_record(in)) {
    record(name, {x}, result, [x, result, deriv]() mutable {
      const auto g = result.grad();
      const auto xv = x.data();
      const auto yv = result.data();
      Buffer gx(xv.size());
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = g[i] * deriv(xv[i], yv[i]);
      x.accumulate_grad(gx);
    });
  }
  return result;
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Copies with an index remapping; backward scatters with the same map.
Tensor gather_op(std::string_view name, const Tensor& x, Shape out_shape,
                 std::vector<std::size_t> src_index) {
  const auto dx = x.data();
  Buffer out(src_index.size());
  for (std::size_t i = 0; i < src_index.size(); ++i) out[i] = dx[src_index[i]];
  Tensor result = finish(name, std::move(out_shape), std::move(out), false);
  const Tensor in[] = {x};
  if (should_record(in)) {
    record(name, {x}, result, [x, result, idx = std::move(src_index)]() mutable {
      const auto g = result.grad();
      Buffer gx(x.size(), 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
      x.accumulate_grad(gx);
    });
  }
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinOp::Add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinOp::Sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinOp::Mul, "mul", a, b); }

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary("add_scalar", x, [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return v > 30.0 ? 1.0 : sigmoid_scalar(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul needs rank >= 2 operands");
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2);
  const std::size_t n = b.dim(b.rank() - 1);
  if (k != kb) {
    throw DimensionError("matmul inner mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  const std::size_t batch = numel(a.shape()) / (m * k);
  if (!shared_b) {
    if (b.rank() != a.rank() ||
        !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw DimensionError("matmul batch mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer out(batch * m * n);
  if (shared_b) {
    MapMat(out.data(), batch * m, n).noalias() =
        ConstMapMat(a.data().data(), batch * m, k) * ConstMapMat(b.data().data(), k, n);
  } else {
    for (std::size_t p = 0; p < batch; ++p) {
      MapMat(out.data() + p * m * n, m, n).noalias() =
          ConstMapMat(a.data().data() + p * m * k, m, k) *
          ConstMapMat(b.data().data() + p * k * n, k, n);
    }
  }
  Tensor result = finish("matmul", out_shape, std::move(out));
  const Tensor in[] = {a, b};
  if (should_record(in)) {
    record("matmul", {a, b}, result, [a, b, result, m, k, n, batch, shared_b]() mutable {
      const double* g = result.grad().data();
      if (a.requires_grad()) {
        Buffer ga(a.size());
        if (shared_b) {
          MapMat(ga.data(), batch * m, k).noalias() =
              ConstMapMat(g, batch * m, n) * ConstMapMat(b.data().data(), k, n).transpose();
        } else {
          for (std::size_t p = 0; p < batch; ++p) {
            MapMat(ga.data() + p * m * k, m, k).noalias() =
                ConstMapMat(g + p * m * n, m, n) *
                ConstMapMat(b.data().data() + p * k * n, k, n).transpose();
          }
        }
        a.accumulate_grad(ga);
      }
      if (b.requires_grad()) {
        Buffer gb(b.size());
        if (shared_b) {
          MapMat(gb.data(), k, n).noalias() =
              ConstMapMat(a.data().data(), batch * m, k).transpose() * ConstMapMat(g, batch * m, n);
        } else {
          for (std::size_t p = 0; p < batch; ++p) {
            MapMat(gb.data() + p * k * n, k, n).noalias() =
                ConstMapMat(a.data().data() + p * m * k, m, k).transpose() *
                ConstMapMat(g + p * m * n, m, n);
          }
        }
        b.accumulate_grad(gb);
      }
    });
  }
  return result;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax needs rank >= 1");
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = d ? x.size() / d : 0;
  const auto xv = x.data();
  Buffer out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double* yr = out.data() + r * d;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, xr[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < d; ++j) yr[j] /= total;
  }
  Tensor result = finish("softmax", x.shape(), std::move(out));
  const Tensor in[] = {x};
  if (should_record(in)) {
    record("softmax", {x}, result, [x, result, d, rows]() mutable {
      const auto g = result.grad();
      const auto y = result.data();
      Buffer gx(x.size());
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] = y[r * d + j] * (g[r * d + j] - dot);
      }
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm needs rank >= 1");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm affine size mismatch for width " + std::to_string(d));
  }
  const std::size_t rows = d ? x.size() / d : 0;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  Buffer out(x.size());
  Buffer xhat(x.size());
  Buffer inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  Tensor result = finish("layer_norm", x.shape(), std::move(out));
  const Tensor in[] = {x, gamma, beta};
  if (should_record(in)) {
    record("layer_norm", {x, gamma, beta}, result,
           [x, gamma, beta, result, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
             const auto g = result.grad();
             const auto gv = gamma.data();
             if (x.requires_grad()) {
               Buffer gx(x.size());
               for (std::size_t r = 0; r < rows; ++r) {
                 double m1 = 0.0, m2 = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = g[r * d + j] * gv[j];
                   m1 += dh;
                   m2 += dh * xhat[r * d + j];
                 }
                 m1 /= static_cast<double>(d);
                 m2 /= static_cast<double>(d);
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = g[r * d + j] * gv[j];
                   gx[r * d + j] = inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                 }
               }
               x.accumulate_grad(gx);
             }
             if (gamma.requires_grad() || beta.requires_grad()) {
               Buffer gg(d, 0.0), gb(d, 0.0);
               for (std::size_t r = 0; r < rows; ++r) {
                 for (std::size_t j = 0; j < d; ++j) {
                   gg[j] += g[r * d + j] * xhat[r * d + j];
                   gb[j] += g[r * d + j];
                 }
               }
               if (gamma.requires_grad()) gamma.accumulate_grad(gg);
               if (beta.requires_grad()) beta.accumulate_grad(gb);
             }
           });
  }
  return result;
}

Tensor causal_depthwise_conv1d(const Tensor& x, const Tensor& weight) {
  if (x.rank() != 3 || weight.rank() != 2 || weight.dim(0) != x.dim(2)) {
    throw DimensionError("causal conv expects x [B,T,C] and weight [C,k], got " + shape_str(x.shape()) +
                         " and " + shape_str(weight.shape()));
  }
  const std::size_t nb = x.dim(0), nt = x.dim(1), nc = x.dim(2), kw = weight.dim(1);
  if (kw == 0) throw DimensionError("causal conv kernel width must be >= 1");
  const auto xv = x.data();
  const auto wv = weight.data();
  Buffer out(x.size(), 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t t = 0; t < nt; ++t) {
      double* yr = out.data() + (b * nt + t) * nc;
      for (std::size_t j = 0; j < kw; ++j) {
        // tap j reads x[t - (kw - 1) + j]
        if (t + j < kw - 1) continue;
        const std::size_t s = t + j - (kw - 1);
        const double* xr = xv.data() + (b * nt + s) * nc;
        for (std::size_t c = 0; c < nc; ++c) yr[c] += wv[c * kw + j] * xr[c];
      }
    }
  }
  Tensor result = finish("causal_conv1d", x.shape(), std::move(out));
  const Tensor in[] = {x, weight};
  if (should_record(in)) {
    record("causal_conv1d", {x, weight}, result, [x, weight, result, nb, nt, nc, kw]() mutable {
      const auto g = result.grad();
      const auto xv = x.data();
      const auto wv = weight.data();
      Buffer gx(x.size(), 0.0), gw(weight.size(), 0.0);
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t t = 0; t < nt; ++t) {
          const double* gr = g.data() + (b * nt + t) * nc;
          for (std::size_t j = 0; j < kw; ++j) {
            if (t + j < kw - 1) continue;
            const std::size_t s = t + j - (kw - 1);
            const std::size_t base = (b * nt + s) * nc;
            for (std::size_t c = 0; c < nc; ++c) {
              gx[base + c] += wv[c * kw + j] * gr[c];
              gw[c * kw + j] += xv[base + c] * gr[c];
            }
          }
        }
      }
      if (x.requires_grad()) x.accumulate_grad(gx);
      if (weight.requires_grad()) weight.accumulate_grad(gw);
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor result = finish("reshape", std::move(shape), Buffer(x.data().begin(), x.data().end()), false);
  const Tensor in[] = {x};
  if (should_record(in)) {
    record("reshape", {x}, result, [x, result]() mutable { x.accumulate_grad(result.grad()); });
  }
  return result;
}

Tensor flatten(const Tensor& x, std::size_t start_axis) {
  if (start_axis >= x.rank()) throw DimensionError("flatten axis out of range");
  Shape s(x.shape().begin(), x.shape().begin() + static_cast<std::ptrdiff_t>(start_axis));
  std::size_t tail = 1;
  for (std::size_t i = start_axis; i < x.rank(); ++i) tail *= x.dim(i);
  s.push_back(tail);
  return reshape(x, std::move(s));
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute axes rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute axes are not a permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(axes[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[axes[i]];
  const std::size_t n = x.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = off;
    for (std::size_t k = r; k-- > 0;) {
      ++idx[k];
      off += step[k];
      if (idx[k] < out_shape[k]) break;
      off -= step[k] * out_shape[k];
      idx[k] = 0;
    }
  }
  return gather_op("permute", x, std::move(out_shape), std::move(src));
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2");
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw DimensionError("concat shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(first));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = out_shape[axis] * inner;
  Buffer out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t col = 0;
  for (const auto& p : parts) {
    offsets.push_back(col);
    const std::size_t w = p.dim(axis) * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * w, w, out.data() + o * out_row + col);
    }
    col += w;
  }
  Tensor result = finish("concat", out_shape, std::move(out), false);
  if (should_record(parts)) {
    record("concat", parts, result, [parts, result, offsets, outer, inner, out_row, axis]() mutable {
      const auto g = result.grad();
      for (std::size_t i = 0; i < parts.size(); ++i) {
        auto& p = parts[i];
        if (!p.requires_grad()) continue;
        const std::size_t w = p.dim(axis) * inner;
        Buffer gp(p.size());
        for (std::size_t o = 0; o < outer; ++o) {
          std::copy_n(g.data() + o * out_row + offsets[i], w, gp.data() + o * w);
        }
        p.accumulate_grad(gp);
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t in_row = x.dim(axis) * inner;
  const std::size_t w = length * inner;
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Buffer out(outer * w);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + o * in_row + start * inner, w, out.data() + o * w);
  }
  Tensor result = finish("slice", out_shape, std::move(out), false);
  const Tensor in[] = {x};
  if (should_record(in)) {
    record("slice", {x}, result, [x, result, outer, in_row, w, off = start * inner]() mutable {
      const auto g = result.grad();
      Buffer gx(x.size(), 0.0);
      for (std::size_t o = 0; o < outer; ++o) std::copy_n(g.data() + o * w, w, gx.data() + o * in_row + off);
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor unfold(const Tensor& x, std::size_t size, std::size_t step) {
  if (x.rank() == 0) throw DimensionError("unfold needs rank >= 1");
  const std::size_t len = x.dim(x.rank() - 1);
  if (size == 0 || step == 0 || size > len) {
    throw DimensionError("unfold size " + std::to_string(size) + " step " + std::to_string(step) +
                         " invalid for length " + std::to_string(len));
  }
  const std::size_t frames = (len - size) / step + 1;
  const std::size_t rows = x.size() / len;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(frames);
  out_shape.push_back(size);
  std::vector<std::size_t> src;
  src.reserve(rows * frames * size);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t j = 0; j < size; ++j) src.push_back(r * len + f * step + j);
    }
  }
  return gather_op("unfold", x, std::move(out_shape), std::move(src));
}

Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& fill_where, double value) {
  const std::size_t block = fill_where.size();
  if (block == 0 || x.size() % block != 0) {
    throw DimensionError("mask of " + std::to_string(block) + " entries does not tile " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fill_where[i % block] ? value : xv[i];
  // The fill value is an intentional sentinel (typically -inf), so no finite check.
  Tensor result = finish("masked_fill", x.shape(), std::move(out), false);
  const Tensor in[] = {x};
  if (should_record(in)) {
    record("masked_fill", {x}, result, [x, result, fill_where]() mutable {
      const auto g = result.grad();
      const std::size_t block = fill_where.size();
      Buffer gx(x.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = fill_where[i % block] ? 0.0 : g[i];
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  Tensor result = finish("sum", Shape{}, Buffer{total});
  const Tensor in[] = {x};
  if (should_record(in)) {
    record("sum", {x}, result, [x, result]() mutable {
      Buffer gx(x.size(), result.grad()[0]);
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("sum axis out of range");
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Buffer out(outer * inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
    }
  }
  Tensor result = finish("sum_axis", out_shape, std::move(out));
  const Tensor in[] = {x};
  if (should_record(in)) {
    record("sum_axis", {x}, result, [x, result, outer, inner, len]() mutable {
      const auto g = result.grad();
      Buffer gx(x.size());
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] = g[o * inner + i];
        }
      }
      x.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const Tensor diff = sub(pred, target);
  return mean(mul(diff, diff));
}

double Attrs::get(std::string_view key, double fallback) const {
  const auto it = num.find(key);
  return it == num.end() ? fallback : it->second;
}

const std::vector<std::size_t>& Attrs::list(std::string_view key) const {
  const auto it = ints.find(key);
  if (it == ints.end()) throw ContractError("missing attribute '" + std::string(key) + "'");
  return it->second;
}

Tensor apply(std::string_view op_id, std::span<const Tensor> inputs, const Attrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw DimensionError(std::string(op_id) + " takes " + std::to_string(n) + " inputs, got " +
                           std::to_string(inputs.size()));
    }
  };
  auto idx = [&](std::string_view key) {
    return static_cast<std::size_t>(attrs.get(key, 0.0));
  };
  if (op_id == "add") return need(2), add(inputs[0], inputs[1]);
  if (op_id == "sub") return need(2), sub(inputs[0], inputs[1]);
  if (op_id == "mul") return need(2), mul(inputs[0], inputs[1]);
  if (op_id == "matmul") return need(2), matmul(inputs[0], inputs[1]);
  if (op_id == "exp") return need(1), exp(inputs[0]);
  if (op_id == "softplus") return need(1), softplus(inputs[0]);
  if (op_id == "sigmoid") return need(1), sigmoid(inputs[0]);
  if (op_id == "silu") return need(1), silu(inputs[0]);
  if (op_id == "tanh") return need(1), tanh(inputs[0]);
  if (op_id == "softmax") return need(1), softmax(inputs[0]);
  if (op_id == "layer_norm") return need(3), layer_norm(inputs[0], inputs[1], inputs[2], attrs.get("eps", 1e-5));
  if (op_id == "causal_conv1d") return need(2), causal_depthwise_conv1d(inputs[0], inputs[1]);
  if (op_id == "reshape") return need(1), reshape(inputs[0], attrs.list("shape"));
  if (op_id == "flatten") return need(1), flatten(inputs[0], idx("start_axis"));
  if (op_id == "permute") return need(1), permute(inputs[0], attrs.list("axes"));
  if (op_id == "concat") return concat(std::vector<Tensor>(inputs.begin(), inputs.end()), idx("axis"));
  if (op_id == "slice") return need(1), slice(inputs[0], idx("axis"), idx("start"), idx("length"));
  if (op_id == "unfold") return need(1), unfold(inputs[0], idx("size"), idx("step"));
  if (op_id == "masked_fill") {
    return need(1), masked_fill(inputs[0], attrs.mask, attrs.get("value", -std::numeric_limits<double>::infinity()));
  }
  if (op_id == "sum") return need(1), sum(inputs[0]);
  if (op_id == "mean") return need(1), mean(inputs[0]);
  if (op_id == "scale") return need(1), scale(inputs[0], attrs.get("factor", 1.0));
  throw UnsupportedPrimitiveError("unsupported primitive '" + std::string(op_id) + "'");
}

std::uint64_t invocation_count(std::string_view op_id) {
  const auto it = t_counts.find(std::string(op_id));
  return it == t_counts.end() ? 0 : it->second;
}

void reset_invocation_counts() { t_counts.clear(); }

}  // namespace sst::ops
