#pragma once

#include <optional>
#include <string>

#include "sst/nn.hpp"

namespace sst {

/// A model mapping normalised lookbacks [B, L, M] to forecasts [B, F, M].
/// Instance normalisation is applied by the caller (training engine).
class Forecaster : public nn::Module {
 public:
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual std::string name() const = 0;
  virtual std::size_t lookback() const = 0;
  virtual std::size_t horizon() const = 0;

  /// [B, 2] expert weights (p_L, p_S) for models that route; nullopt otherwise.
  virtual std::optional<Tensor> router_weights(const Tensor& x) const {
    (void)x;
    return std::nullopt;
  }
};

}  // namespace sst
