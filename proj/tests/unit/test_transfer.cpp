#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "harlab/errors.hpp"
#include "harlab/harness/experiment.hpp"
#include "harlab/nn/layer_spec.hpp"
#include "harlab/transfer/transfer.hpp"

using namespace harlab;
using namespace harlab::transfer;

namespace {

nn::CnnModel whar_model(std::uint64_t seed) {
  return nn::CnnModel(nn::TensorShape::spatial(4, 30, 1), nn::canonical_architecture(8), seed);
}

/// Two planted clusters of a small synthetic population, each split 60/20/20.
struct Population {
  harness::Dataset data;
  SplitData uc[2];
  nn::CnnModel source = whar_model(1);
  nn::TrainConfig cfg;
};

SplitData split_of(const harness::Dataset& data, const std::vector<std::string>& users, std::uint64_t seed) {
  const auto idx = data.indices_of_users(users);
  std::vector<int> labels;
  for (auto i : idx) labels.push_back(data.labels[i]);
  const auto s = harness::split_60_20_20(labels, seed);
  auto pick = [&](const std::vector<std::size_t>& pos) {
    std::vector<std::size_t> rows;
    for (auto p : pos) rows.push_back(idx[p]);
    return data.labeled(rows);
  };
  return {pick(s.train), pick(s.val), pick(s.test)};
}

const Population& population() {
  static const Population pop = [] {
    Population p;
    harness::ExperimentConfig cfg;
    harness::SynthConfig syn;
    syn.n_users = 8;
    syn.n_activities = 8;
    syn.n_clusters = 2;
    syn.windows_per_pair = 10;
    syn.seed = 3;
    cfg.synthetic = syn;
    p.data = harness::load_dataset(cfg);
    const auto planted = harness::synth_generate(syn).planted;
    std::vector<std::string> users[2];
    for (const auto& [u, c] : planted) users[c].push_back(u);
    p.uc[0] = split_of(p.data, users[0], 11);
    p.uc[1] = split_of(p.data, users[1], 12);
    p.cfg.epochs = 6;
    p.cfg.batch_size = 32;
    p.cfg.lr = 1.0;
    p.cfg.seed = 5;
    nn::train(p.source, p.uc[0].train, p.uc[0].val, p.cfg);
    return p;
  }();
  return pop;
}

TransferPlan plan(std::size_t depth, std::uint64_t init_seed = 77) {
  TransferPlan p;
  p.source_model_id = "UC1/m00";
  p.target_uc = "UC2";
  p.fine_tune_depth = depth;
  p.init_seed = init_seed;
  return p;
}

}  // namespace

TEST(Plan, TrainableParameterCounts) {
  const auto src = whar_model(1);
  const auto d1 = transfer_weights(src, plan(1));
  EXPECT_EQ(d1.trainable_parameter_count(), 1032u);
  EXPECT_EQ(d1.parameter_count(), 134664u);
  EXPECT_NEAR(static_cast<double>(d1.trainable_parameter_count()) / d1.parameter_count(), 0.0077, 5e-5);
  EXPECT_EQ(transfer_weights(src, plan(2)).trainable_parameter_count(), 115848u);
  EXPECT_EQ(transfer_weights(src, plan(kFullDepth)).trainable_parameter_count(), 134664u);
}

TEST(Plan, FrozenLayers) {
  const auto m = whar_model(1);
  const auto idx = [&](const char* n) { return m.layer_index(n); };
  EXPECT_EQ(plan(1).frozen_layers(m), (std::vector<std::size_t>{idx("conv1"), idx("conv2"), idx("fc1")}));
  EXPECT_EQ(plan(2).frozen_layers(m), (std::vector<std::size_t>{idx("conv1"), idx("conv2")}));
  EXPECT_TRUE(plan(kFullDepth).frozen_layers(m).empty());
  EXPECT_THROW(plan(3).validate(), ConfigError);
  EXPECT_THROW(plan(0).validate(), ConfigError);
}

TEST(Plan, ReinitPolicy) {
  auto p = plan(1);
  EXPECT_TRUE(p.class_sets_match());
  EXPECT_FALSE(p.reinitializes());
  p.source_classes = {0, 1, 2, 3};
  p.target_classes = {0, 1, 2};
  EXPECT_FALSE(p.class_sets_match());
  EXPECT_TRUE(p.reinitializes());
  p.reinit = ReinitPolicy::Never;
  EXPECT_FALSE(p.reinitializes());
  p.target_classes = {3, 2, 1, 0};
  p.reinit = ReinitPolicy::Always;
  EXPECT_TRUE(p.class_sets_match());
  EXPECT_TRUE(p.reinitializes());
}

TEST(TransferWeights, CopiesFreezesAndReinitializes) {
  const auto src = whar_model(1);
  const auto init = whar_model(99);
  const auto fc1 = src.layer_index("fc1");
  const auto fc2 = src.layer_index("fc2");

  const auto warm = transfer_weights(src, init, plan(2));
  for (std::size_t i = 0; i < src.num_layers(); ++i) {
    if (src.has_params(i)) {
      EXPECT_TRUE(warm.params(i) == src.params(i)) << i;
    }
  }
  EXPECT_TRUE(warm.frozen(0));
  EXPECT_FALSE(warm.frozen(fc1));

  auto p = plan(2);
  p.reinit = ReinitPolicy::Always;
  const auto fresh = transfer_weights(src, init, p);
  EXPECT_TRUE(fresh.params(0) == src.params(0));
  EXPECT_TRUE(fresh.params(fc1) == init.params(fc1));
  EXPECT_TRUE(fresh.params(fc2) == init.params(fc2));

  // The single-argument form seeds the fresh layers from plan.init_seed.
  p.init_seed = 99;
  EXPECT_TRUE(transfer_weights(src, p) == fresh);
}

TEST(TransferWeights, ArchitectureMismatchNamesLayer) {
  const auto src = whar_model(1);
  const nn::CnnModel other(nn::TensorShape::spatial(4, 30, 1), nn::canonical_architecture(6), 2);
  try {
    transfer_weights(src, other, plan(1));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("fc2"), std::string::npos) << e.what();
  }
}

TEST(FineTune, FrozenLayersBitIdentical) {
  const auto& pop = population();
  for (std::size_t depth : {std::size_t{1}, std::size_t{2}}) {
    auto model = transfer_weights(pop.source, plan(depth));
    const auto before = model;
    const auto r = fine_tune(model, plan(depth), pop.uc[1], pop.cfg);
    for (auto i : plan(depth).frozen_layers(model)) EXPECT_TRUE(model.params(i) == before.params(i)) << i;
    EXPECT_FALSE(model.params(model.layer_index("fc2")) == before.params(before.layer_index("fc2")));
    EXPECT_GT(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
    EXPECT_EQ(r.curve.epochs.size(), pop.cfg.epochs);
  }
}

TEST(FineTune, FullDepthReinitReproducesScratch) {
  const auto& pop = population();
  auto p = plan(kFullDepth, 123);
  p.reinit = ReinitPolicy::Always;
  auto model = transfer_weights(pop.source, p);
  const auto tuned = fine_tune(model, p, pop.uc[1], pop.cfg);
  const auto scratch = train_scratch(pop.source, 123, pop.uc[1], pop.cfg);
  EXPECT_EQ(tuned.accuracy, scratch.accuracy);
  ASSERT_EQ(tuned.curve.epochs.size(), scratch.curve.epochs.size());
  for (std::size_t e = 0; e < tuned.curve.epochs.size(); ++e) {
    EXPECT_EQ(tuned.curve.epochs[e].train_loss, scratch.curve.epochs[e].train_loss);
    EXPECT_EQ(tuned.curve.epochs[e].val_accuracy, scratch.curve.epochs[e].val_accuracy);
  }
  nn::CnnModel fresh = whar_model(123);
  nn::train(fresh, pop.uc[1].train, pop.uc[1].val, pop.cfg);
  for (std::size_t i = 0; i < fresh.num_layers(); ++i) {
    if (fresh.has_params(i)) {
      EXPECT_TRUE(fresh.params(i) == model.params(i)) << i;
    }
  }
}

TEST(FineTune, ClassSetMismatchRejected) {
  const auto& pop = population();
  auto p = plan(1);
  p.source_classes = {0, 1, 2, 3, 4, 5, 6};  // target also has class 7
  auto model = transfer_weights(pop.source, p);
  EXPECT_THROW(fine_tune(model, p, pop.uc[1], pop.cfg), DataError);
}

TEST(CompareToScratch, ReproducibleAndConsistent) {
  const auto& pop = population();
  const auto a = compare_to_scratch(pop.source, pop.uc[1], pop.cfg, plan(1));
  const auto b = compare_to_scratch(pop.source, pop.uc[1], pop.cfg, plan(1));
  EXPECT_EQ(outcome_to_json(a, false), outcome_to_json(b, false));
  EXPECT_EQ(a.trained_params, 1032u);
  EXPECT_GT(a.trained_param_fraction, 0.0);
  EXPECT_LT(a.trained_param_fraction, 1.0);
  for (double acc : {a.baseline_accuracy, a.tuned_accuracy, a.scratch_accuracy}) {
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
  EXPECT_EQ(a.baseline_accuracy, nn::evaluate(pop.source, pop.uc[1].test).accuracy);
  EXPECT_LT(a.starting_loss_tuning, a.starting_loss_scratch);
  EXPECT_LT(a.epoch_cpu_tuning, a.epoch_cpu_scratch);
  EXPECT_GE(a.tuned_accuracy, a.baseline_accuracy);
}

TEST(CompareToScratch, SelfTransferKeepsAccuracy) {
  const auto& pop = population();
  auto p = plan(1);
  p.target_uc = "UC1";
  const auto o = compare_to_scratch(pop.source, pop.uc[0], pop.cfg, p);
  EXPECT_GE(o.tuned_accuracy, o.baseline_accuracy - 0.01);
}

TEST(Outcome, JsonRoundTrip) {
  const auto& pop = population();
  const auto o = compare_to_scratch(pop.source, pop.uc[1], pop.cfg, plan(2));
  const auto j = outcome_to_json(o);
  const auto back = outcome_from_json(j);
  EXPECT_EQ(outcome_to_json(back), j);
  EXPECT_EQ(back.tuning_curve.epochs.size(), o.tuning_curve.epochs.size());
  EXPECT_DOUBLE_EQ(back.time_to_plateau_ratio(), o.time_to_plateau_ratio());
  const auto no_time = outcome_to_json(o, false);
  EXPECT_FALSE(no_time.contains("wall_clock_tuning"));
  const auto doc = transfer_report_json({o}, "abc", "def");
  EXPECT_EQ(doc.at("outcomes").size(), 1u);
}
