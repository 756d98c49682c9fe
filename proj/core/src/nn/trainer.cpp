#include "harlab/nn/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <numeric>

#include "harlab/errors.hpp"
#include "harlab/rng.hpp"

namespace harlab::nn {

namespace {

using Index = Eigen::Index;
constexpr std::size_t kEvalChunk = 256;

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

/// Copies the row blocks of the selected samples; each sample owns
/// `rows_per_sample` consecutive rows of `src`.
Matrix gather(const Matrix& src, std::span<const std::size_t> samples, std::size_t rows_per_sample) {
  Matrix out(static_cast<Index>(samples.size() * rows_per_sample), src.cols());
  const auto block = static_cast<std::ptrdiff_t>(rows_per_sample * static_cast<std::size_t>(src.cols()));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const double* from = src.data() + static_cast<std::ptrdiff_t>(samples[k]) * block;
    std::copy(from, from + block, out.data() + static_cast<std::ptrdiff_t>(k) * block);
  }
  return out;
}

/// Eval-mode output of layers [0, end) for every sample, computed in chunks.
Matrix prefix_output(const CnnModel& model, const Matrix& features, std::size_t end) {
  const TensorShape& out_shape = model.output_shape(end - 1);
  const auto n = static_cast<std::size_t>(features.rows());
  Matrix out(static_cast<Index>(n * out_shape.positions()), static_cast<Index>(out_shape.channels));
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, n - start);
    ForwardOptions opts;
    opts.last_layer = end - 1;
    opts.keep_intermediates = false;
    const auto fwd = forward(model, features.middleRows(static_cast<Index>(start), static_cast<Index>(len)), opts);
    out.middleRows(static_cast<Index>(start * out_shape.positions()), static_cast<Index>(len * out_shape.positions())) =
        fwd.outputs[end - 1];
  }
  return out;
}

/// Eval-mode accuracy/loss/confusion starting from layer `first` with the
/// matching (possibly cached) input.
Evaluation evaluate_from(const CnnModel& model, const Matrix& input, std::size_t first, std::span<const int> labels) {
  const std::size_t C = model.num_classes();
  Evaluation ev;
  ev.confusion.assign(C, std::vector<std::size_t>(C, 0));
  const std::size_t n = labels.size();
  if (n == 0) return ev;
  // One row per sample (B x size) or the unrolled layout.
  const std::size_t rows_per_sample = static_cast<std::size_t>(input.rows()) / n;
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, n - start);
    ForwardOptions opts;
    opts.first_layer = first;
    opts.keep_intermediates = false;
    const auto fwd = forward(
        model,
        input.middleRows(static_cast<Index>(start * rows_per_sample), static_cast<Index>(len * rows_per_sample)),
        opts);
    const auto labels_chunk = labels.subspan(start, len);
    loss += cross_entropy(fwd, onehot_matrix(labels_chunk, C)) * static_cast<double>(len);
    const Matrix& p = fwd.probabilities();
    for (std::size_t r = 0; r < len; ++r) {
      Index pred = 0;
      p.row(static_cast<Index>(r)).maxCoeff(&pred);
      const auto truth = static_cast<std::size_t>(labels_chunk[r]);
      ++ev.confusion[truth][static_cast<std::size_t>(pred)];
      if (static_cast<std::size_t>(pred) == truth) ++correct;
    }
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  ev.loss = loss / static_cast<double>(n);
  return ev;
}

void check_set(const CnnModel& model, const LabeledSet& set, const char* what) {
  set.validate();
  if (set.empty()) throw DataError(fmt::format("train: {} split is empty", what));
  if (static_cast<std::size_t>(set.features.cols()) != model.input_shape().size()) {
    throw DataError(fmt::format("train: {} features have {} columns, model input {} needs {}", what,
                                set.features.cols(), model.input_shape().to_string(), model.input_shape().size()));
  }
  if (set.num_classes != model.num_classes()) {
    throw DataError(fmt::format("train: {} split has {} classes, model outputs {}", what, set.num_classes,
                                model.num_classes()));
  }
}

}  // namespace

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
  LabeledSet out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.features.row(static_cast<Index>(k)) = features.row(static_cast<Index>(indices[k]));
    out.labels.push_back(labels.at(indices[k]));
  }
  return out;
}

void LabeledSet::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw DataError(fmt::format("labeled set has {} feature rows but {} labels", features.rows(), labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError(fmt::format("label {} at row {} outside 0..{}", labels[i], i, num_classes));
    }
  }
}

double TrainingCurve::total_cpu_seconds() const {
  double t = setup_cpu_seconds;
  for (const auto& e : epochs) t += e.cpu_seconds;
  return t;
}

double TrainingCurve::mean_epoch_cpu_seconds() const {
  if (epochs.empty()) return 0.0;
  return total_cpu_seconds() / static_cast<double>(epochs.size());
}

std::size_t TrainingCurve::plateau_epoch(std::size_t patience, double threshold) const {
  for (std::size_t e = 0; e + patience < epochs.size(); ++e) {
    double best_after = -1.0;
    for (std::size_t k = 1; k <= patience; ++k) best_after = std::max(best_after, epochs[e + k].val_accuracy);
    if (best_after - epochs[e].val_accuracy < threshold) return e + 1;
  }
  return epochs.size();
}

double TrainingCurve::cpu_seconds_to_plateau(std::size_t patience, double threshold) const {
  const std::size_t end = plateau_epoch(patience, threshold);
  double t = setup_cpu_seconds;
  for (std::size_t e = 0; e < end && e < epochs.size(); ++e) t += epochs[e].cpu_seconds;
  return t;
}

TrainingCurve train(CnnModel& model, const LabeledSet& train_set, const LabeledSet& val_set, const TrainConfig& cfg) {
  cfg.validate();
  check_set(model, train_set, "training");
  check_set(model, val_set, "validation");

  // Leading layers that are frozen (or parameter-free) and deterministic are
  // evaluated once; training starts at the first layer past them.
  std::size_t start_layer = 0;
  while (start_layer < model.num_layers()) {
    const auto& spec = model.layer(start_layer);
    const bool trainable = model.has_params(start_layer) && !model.frozen(start_layer);
    const bool stochastic = spec.kind == LayerKind::Dropout && spec.rate > 0.0;
    if (trainable || stochastic || spec.kind == LayerKind::Softmax) break;
    ++start_layer;
  }
  bool any_trainable = false;
  for (std::size_t i = start_layer; i < model.num_layers(); ++i) {
    any_trainable = any_trainable || (model.has_params(i) && !model.frozen(i));
  }
  if (!any_trainable) start_layer = 0;

  TrainingCurve curve;
  const double setup_start = thread_cpu_seconds();
  Matrix train_input;
  Matrix val_input;
  if (start_layer > 0) {
    train_input = prefix_output(model, train_set.features, start_layer);
    val_input = prefix_output(model, val_set.features, start_layer);
  }
  curve.setup_cpu_seconds = thread_cpu_seconds() - setup_start;
  const Matrix& train_x = start_layer > 0 ? train_input : train_set.features;
  const Matrix& val_x = start_layer > 0 ? val_input : val_set.features;
  const std::size_t rows_per_sample = start_layer > 0 ? model.input_shape_of(start_layer).positions() : 1;

  const auto initial = evaluate_from(model, val_x, start_layer, val_set.labels);
  curve.initial_val_loss = initial.loss;
  curve.initial_val_accuracy = initial.accuracy;

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  AdadeltaState state = AdadeltaState::for_model(model);
  std::vector<std::size_t> order(train_set.size());
  std::vector<int> batch_labels;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double t0 = thread_cpu_seconds();
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      batch_labels.clear();
      for (auto i : idx) batch_labels.push_back(train_set.labels[i]);
      const Matrix onehot = onehot_matrix(batch_labels, model.num_classes());
      ForwardOptions opts;
      opts.mode = Mode::Train;
      opts.rng = &dropout_rng;
      opts.first_layer = start_layer;
      const auto fwd = forward(model, gather(train_x, idx, rows_per_sample), opts);
      const double loss = cross_entropy(fwd, onehot);
      if (!std::isfinite(loss)) {
        throw NumericalError(fmt::format("epoch {}: training loss became non-finite", epoch));
      }
      loss_sum += loss * static_cast<double>(len);
      const Gradients grads = backward(model, fwd, onehot);
      try {
        adadelta_step(model, grads, state, cfg);
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("epoch {}: {}", epoch, e.what()));
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.cpu_seconds = thread_cpu_seconds() - t0;
    const auto val = evaluate_from(model, val_x, start_layer, val_set.labels);
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    curve.epochs.push_back(stats);
  }
  return curve;
}

Evaluation evaluate(const CnnModel& model, const LabeledSet& data) {
  data.validate();
  if (static_cast<std::size_t>(data.features.cols()) != model.input_shape().size()) {
    throw DataError(fmt::format("evaluate: features have {} columns, model input {} needs {}", data.features.cols(),
                                model.input_shape().to_string(), model.input_shape().size()));
  }
  if (data.num_classes != model.num_classes()) {
    throw DataError(fmt::format("evaluate: data has {} classes, model outputs {}", data.num_classes,
                                model.num_classes()));
  }
  return evaluate_from(model, data.features, 0, data.labels);
}

Matrix predict(const CnnModel& model, const Matrix& features) {
  const auto n = static_cast<std::size_t>(features.rows());
  Matrix out(features.rows(), static_cast<Index>(model.num_classes()));
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t len = std::min(kEvalChunk, n - start);
    ForwardOptions opts;
    opts.keep_intermediates = false;
    const auto fwd = forward(model, features.middleRows(static_cast<Index>(start), static_cast<Index>(len)), opts);
    out.middleRows(static_cast<Index>(start), static_cast<Index>(len)) = fwd.probabilities();
  }
  return out;
}

}  // namespace harlab::nn
