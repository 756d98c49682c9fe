#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "harlab/nn/model.hpp"
#include "harlab/nn/network.hpp"

namespace harlab::nn {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double lr = 0.001;
  double rho = 0.95;
  double epsilon = 1e-6;
  std::uint64_t seed = 0;

  /// Throws ConfigError when rho is outside (0,1), epochs or batch size is
  /// zero, or lr/epsilon are not positive.
  void validate() const;
};

/// Running averages of squared gradients (eg2) and squared updates (edx2)
/// for every parameterized layer, zero-initialized.
struct AdadeltaState {
  std::vector<std::optional<LayerParams>> eg2;
  std::vector<std::optional<LayerParams>> edx2;

  static AdadeltaState for_model(const CnnModel& model);
};

/// Element-wise Adadelta on flat arrays:
///   eg2  <- rho*eg2 + (1-rho)*g^2
///   u     = sqrt(edx2+eps)/sqrt(eg2+eps) * g
///   p    <- p - lr*u
///   edx2 <- rho*edx2 + (1-rho)*u^2
void adadelta_update(std::span<double> param, std::span<const double> grad, std::span<double> eg2,
                     std::span<double> edx2, const TrainConfig& cfg);

/// Applies one Adadelta step to every unfrozen layer. Throws NumericalError
/// naming the layer if a gradient is not finite; nothing is modified then.
void adadelta_step(CnnModel& model, const Gradients& grads, AdadeltaState& state, const TrainConfig& cfg);

}  // namespace harlab::nn
