#include "oracles.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "harlab/harness/experiment.hpp"
#include "harlab/nn/layer_spec.hpp"
#include "harlab/rng.hpp"

namespace harlab::oracle {
namespace {

double loss_at(const nn::CnnModel& model, const nn::Matrix& batch, const nn::Matrix& onehot, nn::Mode mode,
               std::uint64_t dropout_seed) {
  Rng rng(dropout_seed);
  nn::ForwardOptions opts;
  opts.mode = mode;
  opts.rng = &rng;
  return nn::loss_and_grad(model, batch, onehot, opts).loss;
}

}  // namespace

GradCheck gradient_check(const nn::CnnModel& model, const nn::Matrix& batch, const nn::Matrix& onehot,
                         nn::Mode mode, std::uint64_t dropout_seed, double step) {
  Rng rng(dropout_seed);
  nn::ForwardOptions opts;
  opts.mode = mode;
  opts.rng = &rng;
  const auto analytic = nn::loss_and_grad(model, batch, onehot, opts).grads;

  GradCheck out;
  nn::CnnModel probe = model;
  auto check = [&](std::size_t layer, bool is_bias, double* value, double grad, Eigen::Index r, Eigen::Index c) {
    const double saved = *value;
    *value = saved + step;
    const double up = loss_at(probe, batch, onehot, mode, dropout_seed);
    *value = saved - step;
    const double down = loss_at(probe, batch, onehot, mode, dropout_seed);
    *value = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double rel = std::abs(grad - numeric) / std::max({std::abs(grad), std::abs(numeric), 1e-6});
    ++out.n_checked;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = fmt::format("{}[{}]({},{}) analytic {:.6e} numeric {:.6e}", model.layer(layer).name,
                              is_bias ? 'b' : 'w', r, c, grad, numeric);
    }
  };
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    if (!model.has_params(i)) continue;
    auto& p = probe.params(i);
    const auto& g = *analytic.at(i);
    for (Eigen::Index r = 0; r < p.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.weights.cols(); ++c) check(i, false, &p.weights(r, c), g.weights(r, c), r, c);
    }
    for (Eigen::Index c = 0; c < p.bias.size(); ++c) check(i, true, &p.bias(c), g.bias(c), 0, c);
  }
  return out;
}

nn::CnnModel random_tiny_model(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "tiny-model"));
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng.below(hi - lo + 1)); };
  const auto input = nn::TensorShape::spatial(pick(2, 5), pick(2, 5), 1);
  std::vector<nn::LayerSpec> layers;
  layers.push_back(nn::LayerSpec::conv_same("conv1", pick(1, 3)));
  std::size_t h = input.height;
  std::size_t w = input.width;
  if (h >= 3 && w >= 3 && rng.bernoulli(0.6)) {
    layers.push_back(nn::LayerSpec::conv_valid("conv2", pick(1, 3)));
    h -= 2;
    w -= 2;
  }
  if (h >= 2 && w >= 2 && rng.bernoulli(0.6)) layers.push_back(nn::LayerSpec::max_pool("pool"));
  if (rng.bernoulli(0.5)) layers.push_back(nn::LayerSpec::dropout("dropout1", 0.25));
  layers.push_back(nn::LayerSpec::flatten("flatten"));
  if (rng.bernoulli(0.7)) {
    layers.push_back(nn::LayerSpec::dense("fc1", pick(2, 6), nn::Activation::Relu));
    if (rng.bernoulli(0.5)) layers.push_back(nn::LayerSpec::dropout("dropout2", 0.5));
  }
  layers.push_back(nn::LayerSpec::dense("fc2", pick(2, 4), nn::Activation::Linear));
  layers.push_back(nn::LayerSpec::softmax("softmax"));
  nn::CnnModel model(input, layers, derive_seed(seed, "tiny-init"));
  // Glorot init leaves biases at zero; give them values so their gradients
  // are exercised away from the ReLU kink at the origin.
  Rng brng(derive_seed(seed, "tiny-bias"));
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    if (!model.has_params(i)) continue;
    for (Eigen::Index c = 0; c < model.params(i).bias.size(); ++c) model.params(i).bias(c) = brng.uniform(-0.2, 0.2);
  }
  return model;
}

Batch random_batch(const nn::CnnModel& model, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(model.input_shape().size()));
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = rng.normal();
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng.below(model.num_classes()));
  b.onehot = nn::onehot_matrix(labels, model.num_classes());
  return b;
}

const std::vector<ShapeRow>& dimension_table() {
  using nn::TensorShape;
  static const std::vector<ShapeRow> rows = {
      {"w-HAR",
       {TensorShape::spatial(4, 30, 32), TensorShape::spatial(2, 28, 64), TensorShape::spatial(1, 14, 64),
        TensorShape::vector(896), TensorShape::vector(128), TensorShape::vector(8), TensorShape::vector(8)}},
      {"UCI-HAR",
       {TensorShape::spatial(33, 17, 32), TensorShape::spatial(31, 15, 64), TensorShape::spatial(15, 7, 64),
        TensorShape::vector(6720), TensorShape::vector(128), TensorShape::vector(6), TensorShape::vector(6)}},
      {"UCI-HAPT",
       {TensorShape::spatial(33, 17, 32), TensorShape::spatial(31, 15, 64), TensorShape::spatial(15, 7, 64),
        TensorShape::vector(6720), TensorShape::vector(128), TensorShape::vector(12), TensorShape::vector(12)}},
      {"UniMiB",
       {TensorShape::spatial(25, 18, 32), TensorShape::spatial(23, 16, 64), TensorShape::spatial(11, 8, 64),
        TensorShape::vector(5632), TensorShape::vector(128), TensorShape::vector(9), TensorShape::vector(9)}},
      {"WISDM",
       {TensorShape::spatial(27, 15, 32), TensorShape::spatial(25, 13, 64), TensorShape::spatial(12, 6, 64),
        TensorShape::vector(4608), TensorShape::vector(128), TensorShape::vector(6), TensorShape::vector(6)}},
  };
  return rows;
}

std::string shape_mismatch(const ShapeRow& row) {
  const auto& layout = nn::layout_by_name(row.layout);
  const nn::CnnModel model(layout.input, nn::canonical_architecture(layout.num_classes), 0);
  static const char* names[] = {"conv1", "conv2", "pool", "flatten", "fc1", "fc2", "softmax"};
  for (std::size_t k = 0; k < row.expected.size(); ++k) {
    const auto& got = model.output_shape(model.layer_index(names[k]));
    if (!(got == row.expected[k])) {
      return fmt::format("{} {}: got {}, expected {}", row.layout, names[k], got.to_string(),
                         row.expected[k].to_string());
    }
  }
  return {};
}

nn::Matrix gaussian_matrix(std::size_t n, std::size_t m, std::uint64_t seed) {
  Rng rng(seed);
  nn::Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

double planted_ari(const harness::SynthConfig& synth, std::uint64_t kmeans_seed) {
  harness::ExperimentConfig cfg;
  cfg.synthetic = synth;
  const auto data = harness::load_dataset(cfg);
  const auto found = harness::cluster_dataset(data, synth.n_clusters, kmeans_seed);
  const auto planted = harness::synth_generate(synth).planted;
  std::vector<int> a;
  std::vector<int> b;
  for (const auto& [user, c] : planted) {
    a.push_back(c);
    b.push_back(found.assignments.at(user));
  }
  return clustering::adjusted_rand_index(a, b);
}

}  // namespace harlab::oracle
