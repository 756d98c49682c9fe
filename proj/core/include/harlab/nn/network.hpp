#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "harlab/nn/model.hpp"
#include "harlab/rng.hpp"

namespace harlab::nn {

enum class Mode { Train, Eval };

/// Everything forward() produced for one batch. `outputs[i]` is layer i's
/// activation stored unrolled ((B*H*W) x C for spatial layers, B x n for
/// flat ones). The remaining members are what backward() needs.
struct ForwardResult {
  std::size_t batch = 0;
  Mode mode = Mode::Eval;
  std::size_t first_layer = 0;
  std::size_t last_layer = 0;
  Matrix input;  // unrolled input of first_layer
  std::vector<Matrix> outputs;
  std::vector<Matrix> im2col;                         // conv layers only
  std::vector<std::vector<Eigen::Index>> pool_argmax; // maxpool layers only
  std::vector<Matrix> dropout_masks;                  // train mode only
  Matrix logits;                                      // input of the softmax

  const Matrix& probabilities() const { return outputs.back(); }
};

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Dropout masks are drawn from here in train mode; required then.
  Rng* rng = nullptr;
  /// Start at this layer; `batch` is then that layer's input.
  std::size_t first_layer = 0;
  /// Stop after this layer (inclusive). Defaults to the last layer.
  std::optional<std::size_t> last_layer;
  /// Keep im2col buffers and pool indices for backward().
  bool keep_intermediates = true;
};

/// Runs the network on a batch. `batch` holds one sample per row: B x
/// input_size for the first layer, or the unrolled activation of layer
/// first_layer-1 otherwise. Throws DataError naming the first layer whose
/// input does not match.
ForwardResult forward(const CnnModel& model, const Matrix& batch, const ForwardOptions& options = {});

/// Per-layer parameter gradients; std::nullopt for layers without params.
using Gradients = std::vector<std::optional<LayerParams>>;

/// Backpropagates categorical cross-entropy (mean over the batch) through
/// the result of forward(). Frozen layers receive zero-filled gradients and
/// propagation stops below the deepest layer that still needs a gradient.
Gradients backward(const CnnModel& model, const ForwardResult& fwd, const Matrix& onehot);

/// Mean categorical cross-entropy computed from the cached logits.
double cross_entropy(const ForwardResult& fwd, const Matrix& onehot);

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

/// forward + cross_entropy + backward. Labels must be one-hot rows.
LossAndGrad loss_and_grad(const CnnModel& model, const Matrix& batch, const Matrix& onehot,
                          const ForwardOptions& options = {});

/// Throws DataError unless every row has exactly one 1 and zeros elsewhere.
void check_onehot(const Matrix& onehot, std::size_t num_classes);

Matrix onehot_matrix(std::span<const int> labels, std::size_t num_classes);

}  // namespace harlab::nn
