#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "harlab/errors.hpp"
#include "harlab/nn/adadelta.hpp"
#include "harlab/nn/layer_spec.hpp"
#include "harlab/nn/model.hpp"
#include "harlab/nn/network.hpp"
#include "harlab/nn/trainer.hpp"
#include "harlab/rng.hpp"
#include "oracles.hpp"

using namespace harlab;
using nn::TensorShape;

namespace {

nn::CnnModel whar_model(std::uint64_t seed = 1) {
  return nn::CnnModel(TensorShape::spatial(4, 30, 1), nn::canonical_architecture(8), seed);
}

void zero_all(nn::CnnModel& m) {
  for (std::size_t i = 0; i < m.num_layers(); ++i) {
    if (m.has_params(i)) m.params(i).set_zero();
  }
}

}  // namespace

TEST(Shapes, DimensionTableRows) {
  for (const auto& row : oracle::dimension_table()) EXPECT_EQ(oracle::shape_mismatch(row), "") << row.layout;
}

TEST(Shapes, OddDimsFloorInPool) {
  const auto shapes = nn::infer_shapes(TensorShape::spatial(33, 17, 1), nn::canonical_architecture(6));
  EXPECT_EQ(shapes[1], TensorShape::spatial(31, 15, 64));
  EXPECT_EQ(shapes[2], TensorShape::spatial(15, 7, 64));
}

TEST(Shapes, ValidConvOnTooSmallInputNamesLayer) {
  try {
    nn::infer_shapes(TensorShape::spatial(2, 2, 1), nn::canonical_architecture(3));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("conv2"), std::string::npos) << e.what();
  }
}

TEST(Shapes, ForwardOutputsMatchTable) {
  const auto model = whar_model();
  const auto batch = oracle::random_batch(model, 3, 11);
  const auto fwd = nn::forward(model, batch.x);
  const auto& row = oracle::dimension_table().front();
  const char* names[] = {"conv1", "conv2", "pool", "flatten", "fc1", "fc2", "softmax"};
  for (std::size_t k = 0; k < 7; ++k) {
    const auto& s = row.expected[k];
    const auto& out = fwd.outputs[model.layer_index(names[k])];
    EXPECT_EQ(out.rows(), static_cast<Eigen::Index>(3 * s.positions())) << names[k];
    EXPECT_EQ(out.cols(), static_cast<Eigen::Index>(s.channels)) << names[k];
  }
}

TEST(Shapes, ForwardRejectsWrongInputWidth) {
  const auto model = whar_model();
  nn::Matrix bad = nn::Matrix::Zero(2, 119);
  try {
    nn::forward(model, bad);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("conv1"), std::string::npos) << e.what();
  }
}

TEST(Model, ParameterCountsWhar) {
  const auto m = whar_model();
  EXPECT_EQ(m.params(m.layer_index("conv1")).size(), 320u);
  EXPECT_EQ(m.params(m.layer_index("conv2")).size(), 18496u);
  EXPECT_EQ(m.params(m.layer_index("fc1")).size(), 114816u);
  EXPECT_EQ(m.params(m.layer_index("fc2")).size(), 1032u);
  EXPECT_EQ(m.parameter_count(), 134664u);
  for (std::size_t i = 0; i < m.num_layers(); ++i) {
    EXPECT_EQ(m.has_params(i), m.layer(i).is_conv() || m.layer(i).kind == nn::LayerKind::Dense) << m.layer(i).name;
  }
}

TEST(Model, SaveLoadIsExact) {
  const auto m = oracle::random_tiny_model(5);
  std::stringstream ss;
  m.save(ss);
  const auto back = nn::CnnModel::load(ss);
  EXPECT_TRUE(back == m);
}

TEST(Model, SameSeedSameInit) {
  EXPECT_TRUE(whar_model(3) == whar_model(3));
  EXPECT_FALSE(whar_model(3) == whar_model(4));
}

TEST(Forward, ZeroWeightsGiveUniformProbabilities) {
  auto m = whar_model();
  zero_all(m);
  const nn::Matrix x = nn::Matrix::Zero(2, 120);
  const auto fwd = nn::forward(m, x);
  for (Eigen::Index i = 0; i < fwd.probabilities().size(); ++i) EXPECT_NEAR(fwd.probabilities().data()[i], 0.125, 1e-15);
  const std::vector<int> labels = {0, 5};
  const auto onehot = nn::onehot_matrix(labels, 8);
  EXPECT_NEAR(nn::cross_entropy(fwd, onehot), std::log(8.0), 1e-12);
  EXPECT_NEAR(nn::loss_and_grad(m, x, onehot).loss, 2.0794415416798357, 1e-12);
}

TEST(Forward, ConfidentCorrectPredictionHasNearZeroLoss) {
  nn::CnnModel m(TensorShape::spatial(1, 2, 1),
                 {nn::LayerSpec::flatten("flatten"), nn::LayerSpec::dense("fc2", 2, nn::Activation::Linear),
                  nn::LayerSpec::softmax("softmax")},
                 0);
  auto& p = m.params(1);
  p.weights << 60.0, -60.0, -60.0, 60.0;
  p.bias.setZero();
  nn::Matrix x(2, 2);
  x << 1, 0, 0, 1;
  const std::vector<int> labels = {0, 1};
  EXPECT_LT(nn::loss_and_grad(m, x, nn::onehot_matrix(labels, 2)).loss, 1e-40);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto m = oracle::random_tiny_model(s);
    auto b = oracle::random_batch(m, 6, s + 100);
    b.x *= 50.0;
    const auto p = nn::forward(m, b.x).probabilities();
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
      EXPECT_GE(p.row(i).minCoeff(), 0.0);
    }
  }
}

TEST(Forward, EvalDropoutIsIdentity) {
  const auto m = whar_model();
  const auto b = oracle::random_batch(m, 4, 3);
  const auto fwd = nn::forward(m, b.x);
  EXPECT_EQ(fwd.outputs[m.layer_index("dropout1")], fwd.outputs[m.layer_index("pool")]);
  EXPECT_EQ(fwd.outputs[m.layer_index("dropout2")], fwd.outputs[m.layer_index("fc1")]);
}

TEST(Gradients, MatchFiniteDifferencesEvalMode) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto m = oracle::random_tiny_model(s);
    const auto b = oracle::random_batch(m, 3, 1000 + s);
    const auto r = oracle::gradient_check(m, b.x, b.onehot, nn::Mode::Eval);
    EXPECT_LT(r.max_rel_error, 1e-4) << "model " << s << " worst " << r.worst;
    EXPECT_GT(r.n_checked, 0u);
  }
}

TEST(Gradients, MatchFiniteDifferencesWithDropoutMasks) {
  for (std::uint64_t s = 20; s < 30; ++s) {
    const auto m = oracle::random_tiny_model(s);
    const auto b = oracle::random_batch(m, 3, 1000 + s);
    const auto r = oracle::gradient_check(m, b.x, b.onehot, nn::Mode::Train, s);
    EXPECT_LT(r.max_rel_error, 1e-4) << "model " << s << " worst " << r.worst;
  }
}

TEST(Gradients, CanonicalArchitectureSpotCheck) {
  // Every parameter of a canonical network on a 4x4 input, 2 classes.
  const nn::CnnModel m(TensorShape::spatial(4, 4, 1), nn::canonical_architecture(2), 9);
  const auto b = oracle::random_batch(m, 2, 9);
  const auto r = oracle::gradient_check(m, b.x, b.onehot, nn::Mode::Eval);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_EQ(r.n_checked, m.parameter_count());
}

TEST(Gradients, FrozenLayersGetZeroGradients) {
  auto m = whar_model();
  m.set_frozen(m.layer_index("conv1"), true);
  const auto b = oracle::random_batch(m, 2, 4);
  const auto g = nn::loss_and_grad(m, b.x, b.onehot).grads;
  const auto& gc = *g[m.layer_index("conv1")];
  EXPECT_EQ(gc.weights.rows(), m.params(0).weights.rows());
  EXPECT_TRUE(gc.weights.isZero(0.0));
  EXPECT_TRUE(gc.bias.isZero(0.0));
  EXPECT_FALSE(g[m.layer_index("fc2")]->weights.isZero(0.0));
}

TEST(Labels, NonOneHotRowRejected) {
  nn::Matrix y(2, 3);
  y << 1, 0, 0, 0.5, 0.5, 0;
  EXPECT_THROW(nn::check_onehot(y, 3), DataError);
  const auto m = oracle::random_tiny_model(1);
  const auto b = oracle::random_batch(m, 2, 1);
  nn::Matrix bad = b.onehot;
  bad(0, 0) = 2.0;
  EXPECT_THROW(nn::loss_and_grad(m, b.x, bad), DataError);
}

TEST(Adadelta, FirstStepHandValue) {
  nn::TrainConfig cfg;
  cfg.lr = 0.001;
  cfg.rho = 0.95;
  cfg.epsilon = 1e-6;
  std::vector<double> p = {0.0};
  std::vector<double> g = {1.0};
  std::vector<double> eg2 = {0.0};
  std::vector<double> edx2 = {0.0};
  nn::adadelta_update(p, g, eg2, edx2, cfg);
  EXPECT_NEAR(eg2[0], 0.05, 1e-15);
  EXPECT_NEAR(p[0], -0.001 * std::sqrt(1e-6) / std::sqrt(0.050001), 1e-18);
  EXPECT_NEAR(p[0], -4.4721e-6, 1e-10);
  // edx2 accumulates the update before the lr multiplier.
  const double u = std::sqrt(1e-6) / std::sqrt(0.050001);
  EXPECT_NEAR(edx2[0], 0.05 * u * u, 1e-20);
}

TEST(Adadelta, ZeroGradientOnlyDecaysAccumulator) {
  nn::TrainConfig cfg;
  std::vector<double> p = {0.7, -1.5};
  std::vector<double> g = {0.0, 0.0};
  std::vector<double> eg2 = {0.4, 2.0};
  std::vector<double> edx2 = {0.1, 0.3};
  nn::adadelta_update(p, g, eg2, edx2, cfg);
  EXPECT_EQ(p[0], 0.7);
  EXPECT_EQ(p[1], -1.5);
  EXPECT_NEAR(eg2[0], 0.38, 1e-15);
  EXPECT_NEAR(eg2[1], 1.9, 1e-15);
}

TEST(Adadelta, StepSkipsFrozenLayersBitwise) {
  auto m = whar_model();
  m.set_frozen(0, true);
  m.set_frozen(1, true);
  const auto before = m;
  auto state = nn::AdadeltaState::for_model(m);
  const auto b = oracle::random_batch(m, 4, 2);
  nn::TrainConfig cfg;
  cfg.lr = 1.0;
  for (int step = 0; step < 3; ++step) {
    const auto g = nn::loss_and_grad(m, b.x, b.onehot).grads;
    nn::adadelta_step(m, g, state, cfg);
  }
  EXPECT_TRUE(m.params(0) == before.params(0));
  EXPECT_TRUE(m.params(1) == before.params(1));
  EXPECT_FALSE(m.params(m.layer_index("fc2")) == before.params(before.layer_index("fc2")));
  for (std::size_t i = 0; i < m.num_layers(); ++i) {
    if (!state.eg2[i]) continue;
    EXPECT_GE(state.eg2[i]->weights.minCoeff(), 0.0);
    EXPECT_GE(state.edx2[i]->weights.minCoeff(), 0.0);
    EXPECT_EQ(state.eg2[i]->weights.rows(), m.params(i).weights.rows());
    EXPECT_EQ(state.eg2[i]->weights.cols(), m.params(i).weights.cols());
  }
}

TEST(Adadelta, NonFiniteGradientAbortsWithoutChanges) {
  auto m = oracle::random_tiny_model(3);
  const auto before = m;
  auto state = nn::AdadeltaState::for_model(m);
  const auto b = oracle::random_batch(m, 2, 3);
  auto g = nn::loss_and_grad(m, b.x, b.onehot).grads;
  const auto last = m.layer_index("fc2");
  g[last]->weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    nn::adadelta_step(m, g, state, nn::TrainConfig{});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("fc2"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(m == before);
}

TEST(TrainConfig, Validation) {
  nn::TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.rho = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.rho = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

namespace {

nn::LabeledSet blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  nn::LabeledSet s;
  s.num_classes = 2;
  s.features.resize(static_cast<Eigen::Index>(n), 4);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    s.labels.push_back(y);
    for (Eigen::Index j = 0; j < 4; ++j) {
      s.features(static_cast<Eigen::Index>(i), j) = (y == 0 ? -2.0 : 2.0) + 0.5 * rng.normal();
    }
  }
  return s;
}

nn::CnnModel blob_model(std::uint64_t seed) {
  return nn::CnnModel(TensorShape::spatial(2, 2, 1),
                      {nn::LayerSpec::conv_same("conv1", 4), nn::LayerSpec::flatten("flatten"),
                       nn::LayerSpec::dense("fc1", 8, nn::Activation::Relu), nn::LayerSpec::dropout("dropout2", 0.5),
                       nn::LayerSpec::dense("fc2", 2, nn::Activation::Linear), nn::LayerSpec::softmax("softmax")},
                      seed);
}

}  // namespace

TEST(Train, SeparableBlobsReachHighAccuracy) {
  auto m = blob_model(1);
  nn::TrainConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 16;
  cfg.lr = 1.0;
  cfg.seed = 5;
  const auto curve = nn::train(m, blobs(200, 1), blobs(100, 2), cfg);
  ASSERT_EQ(curve.epochs.size(), 100u);
  EXPECT_GE(curve.epochs.back().val_accuracy, 0.99);
  EXPECT_GE(nn::evaluate(m, blobs(100, 3)).accuracy, 0.99);
}

TEST(Train, SameSeedSameParameters) {
  nn::TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.lr = 1.0;
  cfg.seed = 9;
  auto a = blob_model(2);
  auto b = blob_model(2);
  const auto ca = nn::train(a, blobs(40, 1), blobs(20, 2), cfg);
  const auto cb = nn::train(b, blobs(40, 1), blobs(20, 2), cfg);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(ca.epochs.back().train_loss, cb.epochs.back().train_loss);
  cfg.seed = 10;
  auto c = blob_model(2);
  nn::train(c, blobs(40, 1), blobs(20, 2), cfg);
  EXPECT_FALSE(a == c);
}

TEST(Train, RejectsEmptySplitAndZeroEpochs) {
  auto m = blob_model(1);
  nn::TrainConfig cfg;
  nn::LabeledSet empty;
  empty.num_classes = 2;
  empty.features.resize(0, 4);
  EXPECT_THROW(nn::train(m, empty, blobs(10, 1), cfg), DataError);
  cfg.epochs = 0;
  EXPECT_THROW(nn::train(m, blobs(10, 1), blobs(10, 2), cfg), ConfigError);
}

TEST(Train, PlateauEpoch) {
  nn::TrainingCurve c;
  for (double acc : {0.5, 0.7, 0.8, 0.801, 0.801, 0.8, 0.9}) c.epochs.push_back({c.epochs.size() + 1, 0, 0, acc, 1.0});
  EXPECT_EQ(c.plateau_epoch(), 3u);
  EXPECT_DOUBLE_EQ(c.cpu_seconds_to_plateau(), 3.0);
  nn::TrainingCurve rising;
  for (int e = 0; e < 5; ++e) rising.epochs.push_back({static_cast<std::size_t>(e + 1), 0, 0, 0.1 * e, 1.0});
  EXPECT_EQ(rising.plateau_epoch(), 5u);
}

TEST(Evaluate, OneHotIdentityModelIsPerfect) {
  nn::CnnModel m(TensorShape::spatial(1, 4, 1),
                 {nn::LayerSpec::flatten("flatten"), nn::LayerSpec::dense("fc2", 4, nn::Activation::Linear),
                  nn::LayerSpec::softmax("softmax")},
                 0);
  m.params(1).weights = nn::Matrix::Identity(4, 4);
  m.params(1).bias.setZero();
  nn::LabeledSet s;
  s.num_classes = 4;
  s.labels = {0, 1, 2, 3, 2, 1};
  s.features = nn::onehot_matrix(s.labels, 4);
  EXPECT_DOUBLE_EQ(nn::evaluate(m, s).accuracy, 1.0);

  // Constant-class predictor on a balanced set.
  m.params(1).weights.setZero();
  m.params(1).bias << 1.0, 0.0, 0.0, 0.0;
  s.labels = {0, 1, 2, 3, 0, 1, 2, 3};
  s.features = nn::onehot_matrix(s.labels, 4);
  const auto ev = nn::evaluate(m, s);
  EXPECT_DOUBLE_EQ(ev.accuracy, 0.25);
  for (std::size_t c = 0; c < 4; ++c) {
    std::size_t row = 0;
    for (auto v : ev.confusion[c]) row += v;
    EXPECT_EQ(row, 2u);
  }
}

TEST(Evaluate, ConfusionTraceEqualsAccuracy) {
  const auto m = oracle::random_tiny_model(12);
  nn::LabeledSet s;
  const auto b = oracle::random_batch(m, 30, 12);
  s.features = b.x;
  s.num_classes = m.num_classes();
  for (Eigen::Index i = 0; i < b.onehot.rows(); ++i) {
    Eigen::Index arg = 0;
    b.onehot.row(i).maxCoeff(&arg);
    s.labels.push_back(static_cast<int>(arg));
  }
  const auto ev = nn::evaluate(m, s);
  std::size_t trace = 0;
  for (std::size_t c = 0; c < s.num_classes; ++c) trace += ev.confusion[c][c];
  EXPECT_DOUBLE_EQ(static_cast<double>(trace) / 30.0, ev.accuracy);
}
