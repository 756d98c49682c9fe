#include "harlab/cca/cca.hpp"

#include <fmt/format.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>

#include "harlab/errors.hpp"
#include "harlab/nn/network.hpp"

namespace harlab::cca {

namespace {

using Index = Eigen::Index;
constexpr std::size_t kCaptureChunk = 128;
constexpr double kRidge = 1e-8;
// Directions whose residual variance (relative to a unit-variance column)
// falls below this are linear combinations of earlier columns.
constexpr double kNullTolerance = 1e-6;

}  // namespace

const std::vector<ProbeLayer>& all_probe_layers() {
  static const std::vector<ProbeLayer> layers = {ProbeLayer::Conv1,   ProbeLayer::Conv2, ProbeLayer::Pool,
                                                 ProbeLayer::Flatten, ProbeLayer::Fc1,   ProbeLayer::Softmax};
  return layers;
}

std::string to_string(ProbeLayer layer) {
  switch (layer) {
    case ProbeLayer::Conv1: return "conv1";
    case ProbeLayer::Conv2: return "conv2";
    case ProbeLayer::Pool: return "pool";
    case ProbeLayer::Flatten: return "flatten";
    case ProbeLayer::Fc1: return "fc1";
    case ProbeLayer::Softmax: return "softmax";
  }
  return "?";
}

ProbeLayer probe_layer_from_string(const std::string& name) {
  for (auto l : all_probe_layers()) {
    if (to_string(l) == name) return l;
  }
  throw ConfigError(fmt::format("unknown probe layer '{}' (expected conv1, conv2, pool, flatten, fc1, softmax)", name));
}

std::vector<ActivationMatrix> capture_activations(const nn::CnnModel& model, const nn::Matrix& probe_features,
                                                  std::span<const ProbeLayer> layers,
                                                  const std::string& probe_set_id, std::size_t min_probe_samples) {
  const auto n = static_cast<std::size_t>(probe_features.rows());
  if (n < min_probe_samples || n == 0) {
    throw DataError(fmt::format("probe set '{}' has {} samples; at least {} are needed for a well-conditioned CCA",
                                probe_set_id, n, std::max<std::size_t>(min_probe_samples, 1)));
  }
  std::vector<std::size_t> idx;
  std::size_t deepest = 0;
  for (auto l : layers) {
    idx.push_back(model.layer_index(to_string(l)));
    deepest = std::max(deepest, idx.back());
  }
  std::vector<ActivationMatrix> out;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& shape = model.output_shape(idx[k]);
    ActivationMatrix m;
    m.layer = layers[k];
    m.probe_set_id = probe_set_id;
    m.data.resize(static_cast<Index>(n * shape.positions()), static_cast<Index>(shape.channels));
    out.push_back(std::move(m));
  }
  for (std::size_t start = 0; start < n; start += kCaptureChunk) {
    const std::size_t len = std::min(kCaptureChunk, n - start);
    nn::ForwardOptions opts;
    opts.mode = nn::Mode::Eval;
    opts.last_layer = deepest;
    opts.keep_intermediates = false;
    const auto fwd =
        nn::forward(model, probe_features.middleRows(static_cast<Index>(start), static_cast<Index>(len)), opts);
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto pos = static_cast<Index>(model.output_shape(idx[k]).positions());
      out[k].data.middleRows(static_cast<Index>(start) * pos, static_cast<Index>(len) * pos) = fwd.outputs[idx[k]];
    }
  }
  return out;
}

WhitenedActivations::WhitenedActivations(const nn::Matrix& x) : rows_(x.rows()), cols_(x.cols()) {
  if (rows_ < 2 || cols_ < 1) throw DataError(fmt::format("CCA needs at least 2 rows and 1 column, got {}x{}", rows_, cols_));
  if (!x.allFinite()) throw DataError("CCA input contains non-finite activations");
  nn::Matrix centered = x.rowwise() - x.colwise().mean();
  // Unit-variance columns make the ridge and the null test scale-free.
  Eigen::RowVectorXd scale = (centered.colwise().squaredNorm() / static_cast<double>(rows_ - 1)).cwiseSqrt();
  for (Index j = 0; j < cols_; ++j) {
    if (scale(j) == 0.0) scale(j) = 1.0;
  }
  centered.array().rowwise() /= scale.array();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(cols_, cols_);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / static_cast<double>(rows_ - 1));
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  const double trace = cov.trace();
  if (trace <= 0.0) {
    // Constant activations carry no signal.
    data_.resize(rows_, 0);
    return;
  }
  cov.diagonal().array() += kRidge * trace / static_cast<double>(cols_);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    const double dmax = cov.diagonal().maxCoeff();
    const double dmin = cov.diagonal().minCoeff();
    throw NumericalError(
        fmt::format("CCA whitening failed: covariance {}x{} not positive definite (diag range {:.3e}..{:.3e})", cols_,
                    cols_, dmin, dmax));
  }
  // W = Xc L^{-T} / sqrt(n-1): column j is the part of column j orthogonal
  // to columns 0..j-1, with variance L(j,j)^2. Dead units and exact linear
  // dependencies (softmax rows sum to one) leave nothing and are dropped.
  const Eigen::MatrixXd lt = llt.matrixL().transpose();
  lt.triangularView<Eigen::Upper>().solveInPlace<Eigen::OnTheRight>(centered);
  std::vector<Index> keep;
  for (Index j = 0; j < cols_; ++j) {
    if (lt(j, j) * lt(j, j) > kNullTolerance) keep.push_back(j);
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(rows_ - 1));
  if (static_cast<Index>(keep.size()) == cols_) {
    data_ = std::move(centered);
    data_ *= norm;
  } else {
    data_.resize(rows_, static_cast<Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) data_.col(static_cast<Index>(k)) = centered.col(keep[k]) * norm;
  }
}

CcaResult cca_correlations(const WhitenedActivations& x, const WhitenedActivations& y) {
  if (x.rows() != y.rows()) {
    throw DataError(fmt::format("CCA inputs have different datapoint counts ({} vs {})", x.rows(), y.rows()));
  }
  const Index m = std::min(x.rank(), y.rank());
  CcaResult r;
  if (m == 0) return r;
  // Singular values of T = Wx^T Wy via the eigenvalues of the smaller Gram.
  const Eigen::MatrixXd t = x.data().transpose() * y.data();
  Eigen::MatrixXd gram = x.rank() <= y.rank() ? Eigen::MatrixXd(t * t.transpose()) : Eigen::MatrixXd(t.transpose() * t);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success || !es.eigenvalues().allFinite()) {
    throw NumericalError(fmt::format("CCA: eigen-decomposition of the {}x{} whitened cross-covariance failed "
                                     "(max |T| = {:.3e})",
                                     m, m, t.cwiseAbs().maxCoeff()));
  }
  r.correlations.resize(static_cast<std::size_t>(m));
  for (Index i = 0; i < m; ++i) {
    r.correlations[static_cast<std::size_t>(i)] = std::clamp(std::sqrt(std::max(es.eigenvalues()(i), 0.0)), 0.0, 1.0);
  }
  std::sort(r.correlations.begin(), r.correlations.end(), std::greater<>());
  double sum = 0.0;
  for (double c : r.correlations) sum += c;
  r.mean_distance = 1.0 - sum / static_cast<double>(m);
  return r;
}

CcaResult cca_correlations(const nn::Matrix& x, const nn::Matrix& y) {
  if (x.rows() != y.rows()) {
    throw DataError(fmt::format("CCA inputs have different datapoint counts ({} vs {})", x.rows(), y.rows()));
  }
  const Index widest = std::max(x.cols(), y.cols());
  if (x.rows() <= widest) {
    throw DataError(fmt::format("CCA needs more datapoints than neurons: n = {} but m = {}; use a larger probe set",
                                x.rows(), widest));
  }
  return cca_correlations(WhitenedActivations(x), WhitenedActivations(y));
}

const DistancePoint& DistanceCurve::at(ProbeLayer layer) const {
  for (const auto& p : points) {
    if (p.layer == layer) return p;
  }
  throw ConfigError(fmt::format("distance curve has no '{}' point", to_string(layer)));
}

namespace {

/// Whitened activations of one model, one entry per requested layer.
std::vector<WhitenedActivations> whiten_model(const nn::CnnModel& model, const nn::Matrix& probe,
                                              std::span<const ProbeLayer> layers, std::size_t min_probe) {
  auto acts = capture_activations(model, probe, layers, {}, min_probe);
  std::vector<WhitenedActivations> out;
  out.reserve(acts.size());
  for (auto& a : acts) {
    if (a.data.rows() <= a.data.cols()) {
      throw DataError(fmt::format("layer {}: {} datapoints for {} neurons; CCA needs more datapoints than neurons, "
                                  "use a larger probe set",
                                  to_string(a.layer), a.data.rows(), a.data.cols()));
    }
    out.emplace_back(a.data);
    a.data.resize(0, 0);
  }
  return out;
}

DistanceCurve summarize(std::span<const ProbeLayer> layers, const std::vector<std::vector<double>>& per_layer) {
  DistanceCurve curve;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& d = per_layer[k];
    DistancePoint p;
    p.layer = layers[k];
    p.n_pairs = d.size();
    double sum = 0.0;
    for (double v : d) sum += v;
    p.mean_distance = d.empty() ? 0.0 : sum / static_cast<double>(d.size());
    double ss = 0.0;
    for (double v : d) ss += (v - p.mean_distance) * (v - p.mean_distance);
    p.std = d.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(d.size()));
    curve.points.push_back(p);
  }
  return curve;
}

void check_architectures(const ModelSet& models) {
  for (const auto* m : models) {
    if (m == nullptr) throw DataError("CCA: null model");
    if (!m->same_architecture(*models.front())) throw DataError("CCA: models do not share an architecture");
  }
}

}  // namespace

DistanceCurve mean_pairwise_distance(const ModelSet& models, const nn::Matrix& probe_features,
                                     std::span<const ProbeLayer> layers, std::size_t min_probe_samples) {
  if (models.size() < 2) throw DataError(fmt::format("mean_pairwise_distance needs at least 2 models, got {}", models.size()));
  check_architectures(models);
  std::vector<std::vector<WhitenedActivations>> whitened;
  whitened.reserve(models.size());
  for (const auto* m : models) whitened.push_back(whiten_model(*m, probe_features, layers, min_probe_samples));
  std::vector<std::vector<double>> per_layer(layers.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      for (std::size_t k = 0; k < layers.size(); ++k) {
        per_layer[k].push_back(cca_correlations(whitened[i][k], whitened[j][k]).mean_distance);
      }
    }
  }
  return summarize(layers, per_layer);
}

DistanceCurve cross_model_distance(const ModelSet& models_a, const ModelSet& models_b,
                                   const nn::Matrix& probe_features, std::span<const ProbeLayer> layers,
                                   std::size_t min_probe_samples) {
  if (models_a.empty() || models_b.empty()) throw DataError("cross_model_distance: both model sets must be nonempty");
  check_architectures(models_a);
  check_architectures(models_b);
  if (!models_a.front()->same_architecture(*models_b.front())) {
    throw DataError("cross_model_distance: the two model sets differ in architecture");
  }
  // Whiten each distinct model once.
  std::vector<const nn::CnnModel*> distinct;
  auto slot = [&](const nn::CnnModel* m) {
    auto it = std::find(distinct.begin(), distinct.end(), m);
    if (it != distinct.end()) return static_cast<std::size_t>(it - distinct.begin());
    distinct.push_back(m);
    return distinct.size() - 1;
  };
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
  for (const auto* m : models_a) ia.push_back(slot(m));
  for (const auto* m : models_b) ib.push_back(slot(m));
  std::vector<std::vector<WhitenedActivations>> whitened;
  for (const auto* m : distinct) whitened.push_back(whiten_model(*m, probe_features, layers, min_probe_samples));

  std::vector<std::vector<double>> per_layer(layers.size());
  for (auto a : ia) {
    for (auto b : ib) {
      if (a == b) continue;
      for (std::size_t k = 0; k < layers.size(); ++k) {
        per_layer[k].push_back(cca_correlations(whitened[a][k], whitened[b][k]).mean_distance);
      }
    }
  }
  if (per_layer.front().empty()) throw DataError("cross_model_distance: no model pairs to compare");
  return summarize(layers, per_layer);
}

}  // namespace harlab::cca
