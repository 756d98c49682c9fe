#include "harlab/nn/adadelta.hpp"

#include <fmt/format.h>

#include <cmath>

#include "harlab/errors.hpp"

namespace harlab::nn {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train: epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError(fmt::format("train: rho must lie in (0, 1), got {}", rho));
  if (!(lr > 0.0)) throw ConfigError(fmt::format("train: lr must be positive, got {}", lr));
  if (!(epsilon > 0.0)) throw ConfigError(fmt::format("train: epsilon must be positive, got {}", epsilon));
}

AdadeltaState AdadeltaState::for_model(const CnnModel& model) {
  AdadeltaState s;
  s.eg2.resize(model.num_layers());
  s.edx2.resize(model.num_layers());
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    if (!model.has_params(i)) continue;
    LayerParams zero = model.params(i);
    zero.set_zero();
    s.eg2[i] = zero;
    s.edx2[i] = zero;
  }
  return s;
}

void adadelta_update(std::span<double> param, std::span<const double> grad, std::span<double> eg2,
                     std::span<double> edx2, const TrainConfig& cfg) {
  if (grad.size() != param.size() || eg2.size() != param.size() || edx2.size() != param.size()) {
    throw ConfigError("adadelta: parameter, gradient and accumulator sizes differ");
  }
  const double rho = cfg.rho;
  const double eps = cfg.epsilon;
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k];
    eg2[k] = rho * eg2[k] + (1.0 - rho) * g * g;
    const double u = std::sqrt(edx2[k] + eps) / std::sqrt(eg2[k] + eps) * g;
    param[k] -= cfg.lr * u;
    edx2[k] = rho * edx2[k] + (1.0 - rho) * u * u;
  }
}

namespace {

std::span<double> span_of(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(RowVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> span_of(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> span_of(const RowVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

void adadelta_step(CnnModel& model, const Gradients& grads, AdadeltaState& state, const TrainConfig& cfg) {
  if (grads.size() != model.num_layers() || state.eg2.size() != model.num_layers()) {
    throw ConfigError("adadelta: gradient/state layer count does not match the model");
  }
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    if (!model.has_params(i) || model.frozen(i)) continue;
    if (!grads[i]) throw ConfigError(fmt::format("adadelta: missing gradient for layer '{}'", model.layer(i).name));
    if (!grads[i]->weights.allFinite() || !grads[i]->bias.allFinite()) {
      throw NumericalError(fmt::format("non-finite gradient in layer '{}'", model.layer(i).name));
    }
  }
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    if (!model.has_params(i) || model.frozen(i)) continue;
    auto& p = model.params(i);
    const auto& g = *grads[i];
    if (g.weights.rows() != p.weights.rows() || g.weights.cols() != p.weights.cols()) {
      throw ConfigError(fmt::format("adadelta: gradient shape mismatch in layer '{}'", model.layer(i).name));
    }
    adadelta_update(span_of(p.weights), span_of(g.weights), span_of(state.eg2[i]->weights),
                    span_of(state.edx2[i]->weights), cfg);
    adadelta_update(span_of(p.bias), span_of(g.bias), span_of(state.eg2[i]->bias), span_of(state.edx2[i]->bias),
                    cfg);
  }
}

}  // namespace harlab::nn
