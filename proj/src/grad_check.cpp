#include "sst/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace sst {

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw ParameterError("finite-difference step must be positive");
  Tensor probe = x.detach();
  Tensor grad(x.shape(), 0.0);
  auto eval = [&](const char* side) {
    const double v = f(probe);
    if (!std::isfinite(v)) {
      throw NumericDomainError(std::string("non-finite function value at ") + side + " probe");
    }
    return v;
  };
  auto pv = probe.data();
  auto gv = grad.data();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double orig = pv[i];
    pv[i] = orig + h;
    const double up = eval("+h");
    pv[i] = orig - h;
    const double down = eval("-h");
    pv[i] = orig;
    gv[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("relative_error size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  diff = std::sqrt(diff);
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  return denom < 1e-8 ? diff : diff / denom;
}

GradCheckResult gradient_check(const std::function<Tensor()>& loss,
                               const std::vector<std::pair<std::string, Tensor>>& params,
                               double h) {
  for (const auto& [name, p] : params) Tensor(p).release_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor l = loss();
    tape.backward(l);
  }
  GradCheckResult result;
  for (const auto& [name, p] : params) {
    Tensor param = p;
    const Tensor analytic = param.grad_tensor();
    const Tensor numeric = finite_difference_gradient(
        [&](const Tensor& probe) {
          // Swap probe values into the live parameter storage.
          auto live = param.data();
          std::vector<double> saved(live.begin(), live.end());
          std::copy(probe.data().begin(), probe.data().end(), live.begin());
          NoGradScope no_grad;
          const double v = loss().item();
          std::copy(saved.begin(), saved.end(), live.begin());
          return v;
        },
        param, h);
    const double err = relative_error(analytic.data(), numeric.data());
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_param = name;
    }
  }
  return result;
}

}  // namespace sst
