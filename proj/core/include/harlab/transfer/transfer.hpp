#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "harlab/nn/model.hpp"
#include "harlab/nn/trainer.hpp"

namespace harlab::transfer {

/// Fine-tune depth that unfreezes every layer.
inline constexpr std::size_t kFullDepth = std::numeric_limits<std::size_t>::max();

enum class ReinitPolicy {
  Auto,    // re-initialize the fine-tuned layers iff the class sets differ
  Always,
  Never,
};

struct TransferPlan {
  std::string source_model_id;
  std::string target_uc;
  /// Number of trailing parameterized layers left trainable: 1 (output
  /// layer), 2 (fc1 + output) or kFullDepth.
  std::size_t fine_tune_depth = 1;
  ReinitPolicy reinit = ReinitPolicy::Auto;
  /// Label indices the source model was trained on / the target UC uses.
  /// Empty means every output class.
  std::vector<int> source_classes;
  std::vector<int> target_classes;
  /// Seed of the fresh initialization used for re-initialized layers.
  std::uint64_t init_seed = 0;

  /// Throws ConfigError for depths other than 1, 2 and kFullDepth.
  void validate() const;
  /// Indices of layers that stay frozen on a model of this architecture.
  std::vector<std::size_t> frozen_layers(const nn::CnnModel& model) const;
  bool class_sets_match() const;
  bool reinitializes() const;
};

/// Copy of `source` with the plan's layers frozen and its fine-tuned layers
/// either kept or replaced with target_init's values. Throws ConfigError
/// naming the first differing layer when the architectures differ.
nn::CnnModel transfer_weights(const nn::CnnModel& source, const nn::CnnModel& target_init, const TransferPlan& plan);
/// As above with target_init = a fresh model of the source architecture
/// seeded by plan.init_seed.
nn::CnnModel transfer_weights(const nn::CnnModel& source, const TransferPlan& plan);

/// Stratified train/validation/test sets of one user cluster.
struct SplitData {
  nn::LabeledSet train;
  nn::LabeledSet val;
  nn::LabeledSet test;
};

struct ArmResult {
  double accuracy = 0.0;  // on the test split
  nn::TrainingCurve curve;
  std::size_t trained_params = 0;
  std::size_t total_params = 0;
};

/// Trains the unfrozen layers of a transferred model on the target's train
/// split (validation on val) and scores it on test. Throws DataError when a
/// target label lies outside plan.source_classes.
ArmResult fine_tune(nn::CnnModel& model, const TransferPlan& plan, const SplitData& target, const nn::TrainConfig& cfg);

/// Trains a fresh model of the given architecture (seeded by init_seed) on
/// the same splits.
ArmResult train_scratch(const nn::CnnModel& architecture, std::uint64_t init_seed, const SplitData& target,
                        const nn::TrainConfig& cfg);

struct TransferOutcome {
  std::string source_model_id;
  std::string target_uc;
  std::size_t fine_tune_depth = 1;
  bool reinitialized = false;
  double baseline_accuracy = 0.0;
  double tuned_accuracy = 0.0;
  double scratch_accuracy = 0.0;
  std::size_t trained_params = 0;
  std::size_t total_params = 0;
  double trained_param_fraction = 0.0;
  double wall_clock_tuning = 0.0;   // CPU seconds of the training loop
  double wall_clock_scratch = 0.0;
  double epoch_cpu_tuning = 0.0;    // mean per epoch
  double epoch_cpu_scratch = 0.0;
  double starting_loss_tuning = 0.0;
  double starting_loss_scratch = 0.0;
  std::size_t plateau_epoch_tuning = 0;
  std::size_t plateau_epoch_scratch = 0;
  double plateau_cpu_tuning = 0.0;
  double plateau_cpu_scratch = 0.0;
  nn::TrainingCurve tuning_curve;
  nn::TrainingCurve scratch_curve;

  /// plateau_cpu_tuning / plateau_cpu_scratch.
  double time_to_plateau_ratio() const;
};

TransferOutcome make_outcome(const TransferPlan& plan, double baseline_accuracy, const ArmResult& tuned,
                             const ArmResult& scratch);

/// Baseline (source model on target test split), fine-tune and scratch arms
/// with matched epoch budget, splits and seeds.
TransferOutcome compare_to_scratch(const nn::CnnModel& source, const SplitData& target, const nn::TrainConfig& cfg,
                                   const TransferPlan& plan);

nlohmann::json curve_to_json(const nn::TrainingCurve& curve, bool timings = true);
nn::TrainingCurve curve_from_json(const nlohmann::json& j);
/// `timings` controls whether CPU-time fields are written.
nlohmann::json outcome_to_json(const TransferOutcome& outcome, bool timings = true);
TransferOutcome outcome_from_json(const nlohmann::json& j);

/// transfer_report.json document: outcomes plus config hashes.
nlohmann::json transfer_report_json(const std::vector<TransferOutcome>& outcomes, const std::string& train_config_hash,
                                    const std::string& experiment_config_hash);

}  // namespace harlab::transfer
