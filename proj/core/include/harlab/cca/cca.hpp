#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "harlab/nn/model.hpp"

namespace harlab::cca {

/// Network locations where activations are captured. Each maps to the
/// model layer of the same name. The dropout layers are not probed: in eval
/// mode they reproduce their predecessor.
enum class ProbeLayer { Conv1, Conv2, Pool, Flatten, Fc1, Softmax };

const std::vector<ProbeLayer>& all_probe_layers();
std::string to_string(ProbeLayer layer);
/// Throws ConfigError for unknown names.
ProbeLayer probe_layer_from_string(const std::string& name);

struct ActivationMatrix {
  ProbeLayer layer = ProbeLayer::Conv1;
  nn::Matrix data;  // datapoints x neurons
  std::string probe_set_id;
};

/// Eval-mode activations at each requested probe layer. Conv layers are
/// unrolled spatially ((samples*H*W) x channels), dense ones are samples x
/// units. Throws DataError when the probe set has fewer than
/// `min_probe_samples` rows.
std::vector<ActivationMatrix> capture_activations(const nn::CnnModel& model, const nn::Matrix& probe_features,
                                                  std::span<const ProbeLayer> layers,
                                                  const std::string& probe_set_id = {},
                                                  std::size_t min_probe_samples = 1);

struct CcaResult {
  std::vector<double> correlations;  // non-increasing, in [0, 1]
  double mean_distance = 1.0;        // 1 - mean(correlations)
};

/// Centered, unit-variance activations multiplied by the inverse Cholesky
/// factor of their ridge-regularized correlation matrix (ridge = 1e-8 *
/// trace / m). Directions that are numerically in the span of earlier
/// columns (dead units, sum-to-one constraints) are dropped, so the result
/// has rank() orthonormal columns.
class WhitenedActivations {
 public:
  explicit WhitenedActivations(const nn::Matrix& x);

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  Eigen::Index rank() const { return data_.cols(); }
  const nn::Matrix& data() const { return data_; }

 private:
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  nn::Matrix data_;
};

/// Canonical correlations between the column spaces of X and Y: singular
/// values of the whitened cross-covariance, clipped to [0, 1], all
/// min(rank X, rank Y) retained. Distance is 1 when either side is
/// constant. Throws DataError when the row counts differ or n <= max(m1, m2);
/// NumericalError if the result is not finite.
CcaResult cca_correlations(const nn::Matrix& x, const nn::Matrix& y);
CcaResult cca_correlations(const WhitenedActivations& x, const WhitenedActivations& y);

struct DistancePoint {
  ProbeLayer layer = ProbeLayer::Conv1;
  double mean_distance = 0.0;
  double std = 0.0;  // population std over model pairs
  std::size_t n_pairs = 0;
};

/// One curve: mean CCA distance per probe layer for models trained on
/// train_uc_a vs models trained on train_uc_b, probed with test_uc's data.
struct DistanceCurve {
  std::string train_uc_a;
  std::string train_uc_b;
  std::string test_uc;
  std::vector<DistancePoint> points;

  /// Throws ConfigError if the layer was not probed.
  const DistancePoint& at(ProbeLayer layer) const;
};

using ModelSet = std::vector<const nn::CnnModel*>;

/// Mean and spread of the CCA distance over all unordered pairs of models,
/// per probe layer. Throws DataError with fewer than two models or
/// mismatched architectures.
DistanceCurve mean_pairwise_distance(const ModelSet& models, const nn::Matrix& probe_features,
                                     std::span<const ProbeLayer> layers, std::size_t min_probe_samples = 1);

/// Same statistics over all (a, b) pairs with a from models_a and b from
/// models_b; a model paired with itself is skipped.
DistanceCurve cross_model_distance(const ModelSet& models_a, const ModelSet& models_b,
                                   const nn::Matrix& probe_features, std::span<const ProbeLayer> layers,
                                   std::size_t min_probe_samples = 1);

}  // namespace harlab::cca
