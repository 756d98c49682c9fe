#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "harlab/nn/adadelta.hpp"
#include "harlab/nn/model.hpp"

namespace harlab::nn {

/// Feature images (one flattened image per row) with integer labels.
struct LabeledSet {
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  /// Rows selected by `indices`, in that order.
  LabeledSet subset(std::span<const std::size_t> indices) const;
  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double cpu_seconds = 0.0;
};

struct TrainingCurve {
  /// Validation metrics of the model before the first update.
  double initial_val_loss = 0.0;
  double initial_val_accuracy = 0.0;
  std::vector<EpochStats> epochs;
  /// CPU time spent before the first epoch (e.g. caching a frozen prefix).
  double setup_cpu_seconds = 0.0;

  double total_cpu_seconds() const;
  double mean_epoch_cpu_seconds() const;
  /// Training loss of the first epoch.
  double starting_loss() const { return epochs.empty() ? 0.0 : epochs.front().train_loss; }

  /// First epoch after which validation accuracy improves by less than
  /// `threshold` over the next `patience` epochs. Returns the last epoch if
  /// the curve never plateaus.
  std::size_t plateau_epoch(std::size_t patience = 3, double threshold = 0.002) const;
  /// CPU seconds up to and including plateau_epoch().
  double cpu_seconds_to_plateau(std::size_t patience = 3, double threshold = 0.002) const;
};

/// Mini-batch Adadelta on categorical cross-entropy. Deterministic given
/// cfg.seed: batch order and dropout masks come from seeds derived from it.
/// Frozen parameters are never touched; when the leading layers are frozen
/// and deterministic their output is computed once and reused.
TrainingCurve train(CnnModel& model, const LabeledSet& train_set, const LabeledSet& val_set,
                    const TrainConfig& cfg);

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

/// Eval-mode accuracy, mean cross-entropy and confusion matrix.
Evaluation evaluate(const CnnModel& model, const LabeledSet& data);

/// Eval-mode class probabilities, one row per sample.
Matrix predict(const CnnModel& model, const Matrix& features);

}  // namespace harlab::nn
