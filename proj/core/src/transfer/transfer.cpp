#include "harlab/transfer/transfer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <nlohmann/json.hpp>

#include "harlab/errors.hpp"

namespace harlab::transfer {

using nlohmann::json;

void TransferPlan::validate() const {
  if (fine_tune_depth != 1 && fine_tune_depth != 2 && fine_tune_depth != kFullDepth) {
    throw ConfigError(fmt::format("fine_tune_depth must be 1, 2 or full, got {}", fine_tune_depth));
  }
}

std::vector<std::size_t> TransferPlan::frozen_layers(const nn::CnnModel& model) const {
  validate();
  std::vector<std::size_t> frozen;
  if (fine_tune_depth == kFullDepth) return frozen;
  std::size_t remaining = fine_tune_depth;
  std::size_t cut = model.num_layers();
  for (std::size_t i = model.num_layers(); i-- > 0 && remaining > 0;) {
    if (model.has_params(i)) {
      cut = i;
      --remaining;
    }
  }
  for (std::size_t i = 0; i < cut; ++i) {
    if (model.has_params(i)) frozen.push_back(i);
  }
  return frozen;
}

bool TransferPlan::class_sets_match() const {
  if (source_classes.empty() || target_classes.empty()) return source_classes.empty() && target_classes.empty();
  auto a = source_classes;
  auto b = target_classes;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return a == b;
}

bool TransferPlan::reinitializes() const {
  switch (reinit) {
    case ReinitPolicy::Always: return true;
    case ReinitPolicy::Never: return false;
    case ReinitPolicy::Auto: return !class_sets_match();
  }
  return false;
}

namespace {

void require_same_architecture(const nn::CnnModel& source, const nn::CnnModel& target) {
  if (source.same_architecture(target)) return;
  if (!(source.input_shape() == target.input_shape())) {
    throw ConfigError(fmt::format("architecture mismatch at input: source {} vs target {}",
                                  source.input_shape().to_string(), target.input_shape().to_string()));
  }
  const std::size_t n = std::min(source.num_layers(), target.num_layers());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = source.layer(i);
    const auto& b = target.layer(i);
    if (a.kind != b.kind || a.name != b.name || a.units != b.units || a.activation != b.activation ||
        a.rate != b.rate || !(source.output_shape(i) == target.output_shape(i))) {
      throw ConfigError(fmt::format("architecture mismatch at layer {} '{}': source output {} vs target '{}' output {}",
                                    i, a.name, source.output_shape(i).to_string(), b.name,
                                    target.output_shape(i).to_string()));
    }
  }
  throw ConfigError(fmt::format("architecture mismatch: source has {} layers, target {}", source.num_layers(),
                                target.num_layers()));
}

}  // namespace

nn::CnnModel transfer_weights(const nn::CnnModel& source, const nn::CnnModel& target_init, const TransferPlan& plan) {
  plan.validate();
  require_same_architecture(source, target_init);
  const auto frozen = plan.frozen_layers(source);
  const bool reinit = plan.reinitializes();
  nn::CnnModel out = target_init;
  for (std::size_t i = 0; i < out.num_layers(); ++i) {
    if (!out.has_params(i)) continue;
    const bool is_frozen = std::find(frozen.begin(), frozen.end(), i) != frozen.end();
    if (is_frozen || !reinit) out.params(i) = source.params(i);
    out.set_frozen(i, is_frozen);
  }
  return out;
}

nn::CnnModel transfer_weights(const nn::CnnModel& source, const TransferPlan& plan) {
  const nn::CnnModel fresh(source.input_shape(), source.layers(), plan.init_seed);
  return transfer_weights(source, fresh, plan);
}

namespace {

void check_labels(const TransferPlan& plan, const nn::LabeledSet& set, const char* split) {
  if (plan.source_classes.empty()) return;
  for (int y : set.labels) {
    if (std::find(plan.source_classes.begin(), plan.source_classes.end(), y) == plan.source_classes.end()) {
      std::string allowed;
      for (int c : plan.source_classes) allowed += (allowed.empty() ? "" : ",") + std::to_string(c);
      throw DataError(fmt::format("class-set mismatch: target '{}' {} split has class {} which the source model "
                                  "was not trained on (source classes: {})",
                                  plan.target_uc, split, y, allowed));
    }
  }
}

}  // namespace

ArmResult fine_tune(nn::CnnModel& model, const TransferPlan& plan, const SplitData& target,
                    const nn::TrainConfig& cfg) {
  check_labels(plan, target.train, "train");
  check_labels(plan, target.val, "val");
  check_labels(plan, target.test, "test");
  ArmResult r;
  r.curve = nn::train(model, target.train, target.val, cfg);
  r.accuracy = nn::evaluate(model, target.test).accuracy;
  r.trained_params = model.trainable_parameter_count();
  r.total_params = model.parameter_count();
  spdlog::debug("fine-tune {} -> {} depth {}: acc {:.4f}, {:.2f}s", plan.source_model_id, plan.target_uc,
                plan.fine_tune_depth, r.accuracy, r.curve.total_cpu_seconds());
  return r;
}

ArmResult train_scratch(const nn::CnnModel& architecture, std::uint64_t init_seed, const SplitData& target,
                        const nn::TrainConfig& cfg) {
  nn::CnnModel model(architecture.input_shape(), architecture.layers(), init_seed);
  ArmResult r;
  r.curve = nn::train(model, target.train, target.val, cfg);
  r.accuracy = nn::evaluate(model, target.test).accuracy;
  r.trained_params = model.trainable_parameter_count();
  r.total_params = model.parameter_count();
  return r;
}

double TransferOutcome::time_to_plateau_ratio() const {
  return plateau_cpu_scratch > 0.0 ? plateau_cpu_tuning / plateau_cpu_scratch : 0.0;
}

TransferOutcome make_outcome(const TransferPlan& plan, double baseline_accuracy, const ArmResult& tuned,
                             const ArmResult& scratch) {
  TransferOutcome o;
  o.source_model_id = plan.source_model_id;
  o.target_uc = plan.target_uc;
  o.fine_tune_depth = plan.fine_tune_depth;
  o.reinitialized = plan.reinitializes();
  o.baseline_accuracy = baseline_accuracy;
  o.tuned_accuracy = tuned.accuracy;
  o.scratch_accuracy = scratch.accuracy;
  o.trained_params = tuned.trained_params;
  o.total_params = tuned.total_params;
  o.trained_param_fraction =
      tuned.total_params ? static_cast<double>(tuned.trained_params) / static_cast<double>(tuned.total_params) : 0.0;
  o.wall_clock_tuning = tuned.curve.total_cpu_seconds();
  o.wall_clock_scratch = scratch.curve.total_cpu_seconds();
  o.epoch_cpu_tuning = tuned.curve.mean_epoch_cpu_seconds();
  o.epoch_cpu_scratch = scratch.curve.mean_epoch_cpu_seconds();
  o.starting_loss_tuning = tuned.curve.starting_loss();
  o.starting_loss_scratch = scratch.curve.starting_loss();
  o.plateau_epoch_tuning = tuned.curve.plateau_epoch();
  o.plateau_epoch_scratch = scratch.curve.plateau_epoch();
  o.plateau_cpu_tuning = tuned.curve.cpu_seconds_to_plateau();
  o.plateau_cpu_scratch = scratch.curve.cpu_seconds_to_plateau();
  o.tuning_curve = tuned.curve;
  o.scratch_curve = scratch.curve;
  return o;
}

TransferOutcome compare_to_scratch(const nn::CnnModel& source, const SplitData& target, const nn::TrainConfig& cfg,
                                   const TransferPlan& plan) {
  const double baseline = nn::evaluate(source, target.test).accuracy;
  auto model = transfer_weights(source, plan);
  const auto tuned = fine_tune(model, plan, target, cfg);
  const auto scratch = train_scratch(source, plan.init_seed, target, cfg);
  return make_outcome(plan, baseline, tuned, scratch);
}

json curve_to_json(const nn::TrainingCurve& curve, bool timings) {
  json epochs = json::array();
  for (const auto& e : curve.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
    if (timings) epochs.back()["cpu_seconds"] = e.cpu_seconds;
  }
  json j{{"initial_val_loss", curve.initial_val_loss},
         {"initial_val_accuracy", curve.initial_val_accuracy},
         {"epochs", std::move(epochs)}};
  if (timings) j["setup_cpu_seconds"] = curve.setup_cpu_seconds;
  return j;
}

nn::TrainingCurve curve_from_json(const json& j) {
  nn::TrainingCurve curve;
  curve.initial_val_loss = j.at("initial_val_loss").get<double>();
  curve.initial_val_accuracy = j.at("initial_val_accuracy").get<double>();
  curve.setup_cpu_seconds = j.value("setup_cpu_seconds", 0.0);
  for (const auto& e : j.at("epochs")) {
    nn::EpochStats s;
    s.epoch = e.at("epoch").get<std::size_t>();
    s.train_loss = e.at("train_loss").get<double>();
    s.val_loss = e.at("val_loss").get<double>();
    s.val_accuracy = e.at("val_accuracy").get<double>();
    s.cpu_seconds = e.value("cpu_seconds", 0.0);
    curve.epochs.push_back(s);
  }
  return curve;
}

namespace {

json depth_json(std::size_t depth) { return depth == kFullDepth ? json("full") : json(depth); }

std::size_t depth_from_json(const json& j) { return j.is_string() ? kFullDepth : j.get<std::size_t>(); }

}  // namespace

json outcome_to_json(const TransferOutcome& o, bool timings) {
  json j{{"source_model_id", o.source_model_id},
         {"target_uc", o.target_uc},
         {"fine_tune_depth", depth_json(o.fine_tune_depth)},
         {"reinitialized", o.reinitialized},
         {"baseline_accuracy", o.baseline_accuracy},
         {"tuned_accuracy", o.tuned_accuracy},
         {"scratch_accuracy", o.scratch_accuracy},
         {"trained_params", o.trained_params},
         {"total_params", o.total_params},
         {"trained_param_fraction", o.trained_param_fraction},
         {"starting_loss_tuning", o.starting_loss_tuning},
         {"starting_loss_scratch", o.starting_loss_scratch},
         {"plateau_epoch_tuning", o.plateau_epoch_tuning},
         {"plateau_epoch_scratch", o.plateau_epoch_scratch},
         {"tuning_curve", curve_to_json(o.tuning_curve, timings)},
         {"scratch_curve", curve_to_json(o.scratch_curve, timings)}};
  if (timings) {
    j["wall_clock_tuning"] = o.wall_clock_tuning;
    j["wall_clock_scratch"] = o.wall_clock_scratch;
    j["epoch_cpu_tuning"] = o.epoch_cpu_tuning;
    j["epoch_cpu_scratch"] = o.epoch_cpu_scratch;
    j["plateau_cpu_tuning"] = o.plateau_cpu_tuning;
    j["plateau_cpu_scratch"] = o.plateau_cpu_scratch;
    j["time_to_plateau_ratio"] = o.time_to_plateau_ratio();
  }
  return j;
}

TransferOutcome outcome_from_json(const json& j) {
  TransferOutcome o;
  o.source_model_id = j.at("source_model_id").get<std::string>();
  o.target_uc = j.at("target_uc").get<std::string>();
  o.fine_tune_depth = depth_from_json(j.at("fine_tune_depth"));
  o.reinitialized = j.at("reinitialized").get<bool>();
  o.baseline_accuracy = j.at("baseline_accuracy").get<double>();
  o.tuned_accuracy = j.at("tuned_accuracy").get<double>();
  o.scratch_accuracy = j.at("scratch_accuracy").get<double>();
  o.trained_params = j.at("trained_params").get<std::size_t>();
  o.total_params = j.at("total_params").get<std::size_t>();
  o.trained_param_fraction = j.at("trained_param_fraction").get<double>();
  o.starting_loss_tuning = j.at("starting_loss_tuning").get<double>();
  o.starting_loss_scratch = j.at("starting_loss_scratch").get<double>();
  o.plateau_epoch_tuning = j.at("plateau_epoch_tuning").get<std::size_t>();
  o.plateau_epoch_scratch = j.at("plateau_epoch_scratch").get<std::size_t>();
  o.tuning_curve = curve_from_json(j.at("tuning_curve"));
  o.scratch_curve = curve_from_json(j.at("scratch_curve"));
  o.wall_clock_tuning = j.value("wall_clock_tuning", 0.0);
  o.wall_clock_scratch = j.value("wall_clock_scratch", 0.0);
  o.epoch_cpu_tuning = j.value("epoch_cpu_tuning", 0.0);
  o.epoch_cpu_scratch = j.value("epoch_cpu_scratch", 0.0);
  o.plateau_cpu_tuning = j.value("plateau_cpu_tuning", 0.0);
  o.plateau_cpu_scratch = j.value("plateau_cpu_scratch", 0.0);
  return o;
}

json transfer_report_json(const std::vector<TransferOutcome>& outcomes, const std::string& train_config_hash,
                          const std::string& experiment_config_hash) {
  json arr = json::array();
  for (const auto& o : outcomes) arr.push_back(outcome_to_json(o, true));
  return json{{"train_config_hash", train_config_hash},
              {"experiment_config_hash", experiment_config_hash},
              {"outcomes", std::move(arr)}};
}

}  // namespace harlab::transfer
