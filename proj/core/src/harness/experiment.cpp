#include "harlab/harness/experiment.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <thread>

#include "harlab/errors.hpp"
#include "internal.hpp"
#include "harlab/nn/layer_spec.hpp"
#include "harlab/rng.hpp"

namespace harlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double thread_cpu_seconds() {
  timespec ts{};
  clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

std::string hex_digest(const std::string& text) {
  return fmt::format("{:016x}", mix64(hash_tag(text)));
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("{}: cannot open", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_file_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError(fmt::format("{}: cannot open for writing", tmp.string()));
    body(out);
    if (!out) throw DataError(fmt::format("{}: write failed", tmp.string()));
  }
  fs::rename(tmp, path, ec);
  if (ec) throw DataError(fmt::format("{}: rename failed: {}", path.string(), ec.message()));
}

void write_json_atomic(const fs::path& path, const json& j) {
  write_file_atomic(path, [&](std::ostream& out) { out << j.dump(1) << '\n'; });
}

json train_to_json(const nn::TrainConfig& t) {
  return json{{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr}, {"rho", t.rho}, {"epsilon", t.epsilon}};
}

nn::TrainConfig train_from_json(const json& j) {
  nn::TrainConfig t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.rho = j.value("rho", t.rho);
  t.epsilon = j.value("epsilon", t.epsilon);
  return t;
}

std::string uc_name(std::size_t c) { return fmt::format("UC{}", c + 1); }
std::string model_id(std::size_t c, std::size_t m) { return fmt::format("{}/m{:02}", uc_name(c), m); }

struct UcData {
  UcInfo info;
  nn::LabeledSet all;
  transfer::SplitData split;
  std::vector<int> train_classes;
  std::vector<int> all_classes;
};

std::vector<int> classes_of(const nn::LabeledSet& s) {
  std::vector<int> c(s.labels.begin(), s.labels.end());
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  return c;
}

std::vector<UcData> build_ucs(const Dataset& data, const clustering::ClusterAssignment& assignment,
                              std::uint64_t split_seed) {
  std::vector<UcData> ucs;
  for (std::size_t c = 0; c < assignment.k; ++c) {
    UcData uc;
    uc.info.name = uc_name(c);
    uc.info.users = assignment.members(static_cast<int>(c));
    std::sort(uc.info.users.begin(), uc.info.users.end(), clustering::window_id_less);
    const auto idx = data.indices_of_users(uc.info.users);
    if (idx.empty()) throw DataError(fmt::format("{} has no windows", uc.info.name));
    uc.all = data.labeled(idx);
    const auto split = split_60_20_20(uc.all.labels, derive_seed(split_seed, "split", {c}));
    uc.split.train = uc.all.subset(split.train);
    uc.split.val = uc.all.subset(split.val);
    uc.split.test = uc.all.subset(split.test);
    uc.info.n_windows = idx.size();
    uc.info.n_train = split.train.size();
    uc.info.n_val = split.val.size();
    uc.info.n_test = split.test.size();
    uc.train_classes = classes_of(uc.split.train);
    uc.all_classes = classes_of(uc.all);
    ucs.push_back(std::move(uc));
  }
  return ucs;
}

nn::CnnModel fresh_model(const Dataset& data, std::uint64_t seed) {
  return nn::CnnModel(data.image, nn::canonical_architecture(data.activities.size()), seed);
}

void save_model(const fs::path& path, const nn::CnnModel& model) {
  write_file_atomic(path, [&](std::ostream& out) { model.save(out); });
}

nn::CnnModel load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("{}: cannot open model", path.string()));
  return nn::CnnModel::load(in);
}

/// One independently computable unit of work whose result is a JSON
/// artifact on disk.
struct Cell {
  std::string id;
  fs::path artifact;
  std::vector<std::string> deps;
  std::function<json()> compute;
};

class CellRunner {
 public:
  CellRunner(fs::path dir, std::string hash, std::size_t jobs, std::optional<std::size_t> budget)
      : dir_(std::move(dir)), hash_(std::move(hash)), jobs_(std::max<std::size_t>(jobs, 1)), budget_(budget) {}

  void run(std::vector<Cell>& cells) {
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      auto& cell = cells[i];
      const auto failed_dep = std::find_if(cell.deps.begin(), cell.deps.end(),
                                           [&](const std::string& d) { return !results_.count(d); });
      if (failed_dep != cell.deps.end()) {
        if (skipped_.count(*failed_dep)) {
          skipped_.insert(cell.id);
        } else {
          failures_.push_back({cell.id, fmt::format("dependency {} failed", *failed_dep)});
        }
        continue;
      }
      if (auto cached = load(cell)) {
        results_[cell.id] = std::move(*cached);
        continue;
      }
      if (budget_ && computed_ >= *budget_) {
        skipped_.insert(cell.id);
        continue;
      }
      ++computed_;
      todo.push_back(i);
    }
    std::vector<std::optional<json>> out(todo.size());
    std::vector<std::string> errors(todo.size());
    std::vector<double> cpu(todo.size(), 0.0);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t n; (n = next.fetch_add(1)) < todo.size();) {
        auto& cell = cells[todo[n]];
        const double t0 = thread_cpu_seconds();
        try {
          spdlog::info("cell {} ...", cell.id);
          json j = cell.compute();
          j["cell"] = cell.id;
          j["config_hash"] = hash_;
          if (!cell.artifact.empty()) write_json_atomic(dir_ / cell.artifact, j);
          out[n] = std::move(j);
        } catch (const std::exception& e) {
          errors[n] = e.what();
          spdlog::error("cell {} failed: {}", cell.id, e.what());
        }
        cpu[n] = thread_cpu_seconds() - t0;
      }
    };
    const std::size_t threads = std::min(jobs_, todo.size());
    if (threads <= 1) {
      worker();
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (std::size_t n = 0; n < todo.size(); ++n) {
      const auto& id = cells[todo[n]].id;
      cpu_[id] = cpu[n];
      if (out[n]) {
        results_[id] = std::move(*out[n]);
      } else {
        failures_.push_back({id, errors[n]});
      }
    }
  }

  const json* result(const std::string& id) const {
    auto it = results_.find(id);
    return it == results_.end() ? nullptr : &it->second;
  }
  const std::vector<CellFailure>& failures() const { return failures_; }
  bool interrupted() const { return !skipped_.empty(); }
  const std::map<std::string, double>& cpu() const { return cpu_; }
  const fs::path& dir() const { return dir_; }

 private:
  std::optional<json> load(const Cell& cell) const {
    if (cell.artifact.empty()) return std::nullopt;
    const auto path = dir_ / cell.artifact;
    if (!fs::exists(path)) return std::nullopt;
    try {
      json j = read_json(path);
      if (j.value("config_hash", std::string{}) == hash_ && j.value("cell", std::string{}) == cell.id) return j;
      spdlog::info("cell {}: stale artifact (config changed), recomputing", cell.id);
    } catch (const std::exception& e) {
      spdlog::warn("cell {}: unreadable artifact ({}), recomputing", cell.id, e.what());
    }
    return std::nullopt;
  }

  fs::path dir_;
  std::string hash_;
  std::size_t jobs_;
  std::optional<std::size_t> budget_;
  std::size_t computed_ = 0;
  std::map<std::string, json> results_;
  std::set<std::string> skipped_;
  std::vector<CellFailure> failures_;
  std::map<std::string, double> cpu_;
};

double median_of(std::vector<double> v) { return summarize(std::move(v)).median; }

/// Trains models on each UC of a partition, then measures cross-UC accuracy
/// on target test splits before and after depth-1 fine-tuning.
SplitAccuracy evaluate_partition(const Dataset& data, const clustering::ClusterAssignment& assignment,
                                 const ExperimentConfig& cfg, std::size_t models_per_uc, std::uint64_t seed,
                                 const std::string& run_id) {
  const auto ucs = build_ucs(data, assignment, seed);
  const std::size_t k = ucs.size();
  std::vector<std::vector<double>> before(k, std::vector<double>(k, 0.0));
  std::vector<std::vector<double>> after(k, std::vector<double>(k, 0.0));
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t m = 0; m < models_per_uc; ++m) {
      auto model = fresh_model(data, derive_seed(seed, "init", {s, m}));
      auto tc = cfg.train;
      tc.seed = derive_seed(seed, "train", {s, m});
      nn::train(model, ucs[s].split.train, ucs[s].split.val, tc);
      for (std::size_t t = 0; t < k; ++t) {
        if (t == s) continue;
        transfer::TransferPlan plan;
        plan.source_model_id = model_id(s, m);
        plan.target_uc = ucs[t].info.name;
        plan.fine_tune_depth = 1;
        plan.source_classes = ucs[s].train_classes;
        plan.target_classes = ucs[t].all_classes;
        plan.init_seed = derive_seed(seed, "ft-init", {t});
        auto ft = cfg.train;
        ft.seed = derive_seed(seed, "ft", {t});
        before[s][t] += nn::evaluate(model, ucs[t].split.test).accuracy / static_cast<double>(models_per_uc);
        auto tuned = transfer::transfer_weights(model, plan);
        after[s][t] += transfer::fine_tune(tuned, plan, ucs[t].split, ft).accuracy / static_cast<double>(models_per_uc);
      }
    }
  }
  std::vector<double> b;
  std::vector<double> a;
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t t = 0; t < k; ++t) {
      if (s == t) continue;
      b.push_back(before[s][t]);
      a.push_back(after[s][t]);
    }
  }
  SplitAccuracy r;
  r.run_id = run_id;
  r.assignments = assignment.assignments;
  r.min_before = *std::min_element(b.begin(), b.end());
  r.median_before = median_of(b);
  r.min_after = *std::min_element(a.begin(), a.end());
  r.median_after = median_of(a);
  return r;
}

json split_accuracy_to_json(const SplitAccuracy& s) {
  return json{{"run_id", s.run_id},         {"assignments", s.assignments},     {"min_before", s.min_before},
              {"median_before", s.median_before}, {"min_after", s.min_after}, {"median_after", s.median_after}};
}

SplitAccuracy split_accuracy_from_json(const json& j) {
  SplitAccuracy s;
  s.run_id = j.at("run_id").get<std::string>();
  s.assignments = j.at("assignments").get<std::map<std::string, int>>();
  s.min_before = j.at("min_before").get<double>();
  s.median_before = j.at("median_before").get<double>();
  s.min_after = j.at("min_after").get<double>();
  s.median_after = j.at("median_after").get<double>();
  return s;
}

SweepSummary summarize_sweep(std::vector<SplitAccuracy> splits) {
  SweepSummary s;
  std::vector<double> mb, medb, ma, meda;
  for (const auto& x : splits) {
    mb.push_back(x.min_before);
    medb.push_back(x.median_before);
    ma.push_back(x.min_after);
    meda.push_back(x.median_after);
  }
  s.splits = std::move(splits);
  if (!s.splits.empty()) {
    s.min_before = summarize(mb);
    s.median_before = summarize(medb);
    s.min_after = summarize(ma);
    s.median_after = summarize(meda);
  }
  return s;
}

json curve_to_json(const cca::DistanceCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) {
    pts.push_back(
        {{"layer", cca::to_string(p.layer)}, {"mean_distance", p.mean_distance}, {"std", p.std}, {"n_pairs", p.n_pairs}});
  }
  return json{{"train_uc_a", c.train_uc_a}, {"train_uc_b", c.train_uc_b}, {"test_uc", c.test_uc}, {"points", pts}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (manifest.has_value() == synthetic.has_value()) {
    throw ConfigError("config: exactly one of dataset.manifest and dataset.synthetic is required");
  }
  if (manifest) manifest->validate();
  if (synthetic) synthetic->validate();
  if (clustering.method != "kmeans" && clustering.method != "random") {
    throw ConfigError(fmt::format("config: clustering.method must be kmeans or random, got '{}'", clustering.method));
  }
  if (clustering.k < 2) throw ConfigError("config: clustering.k must be at least 2");
  if (models_per_uc == 0) throw ConfigError("config: models_per_uc must be positive");
  if (cca.enabled && models_per_uc < 2) {
    throw ConfigError(fmt::format("config: CCA needs models_per_uc >= 2, got {}", models_per_uc));
  }
  if (cca.enabled && cca.probe_layers.empty()) throw ConfigError("config: cca.probe_layers is empty");
  if (cca.cross_models > models_per_uc) {
    throw ConfigError(fmt::format("config: cca.cross_models {} exceeds models_per_uc {}", cca.cross_models,
                                  models_per_uc));
  }
  for (auto d : transfer.depths) {
    if (d != 1 && d != 2) throw ConfigError(fmt::format("config: transfer depth must be 1 or 2, got {}", d));
  }
  if (transfer.sources_per_uc == 0 || transfer.sources_per_uc > models_per_uc) {
    throw ConfigError(fmt::format("config: transfer.sources_per_uc must be in [1, {}]", models_per_uc));
  }
  if (sweep.n_splits > 0 && sweep.models_per_uc == 0) throw ConfigError("config: sweep.models_per_uc must be positive");
  train.validate();
  if (seed == clustering.seed) {
    throw ConfigError(fmt::format("config: seed and clustering.seed must differ (both {})", seed));
  }
  if (sweep.n_splits > 0 && (sweep.seed == seed || sweep.seed == clustering.seed)) {
    throw ConfigError("config: sweep.seed must differ from seed and clustering.seed");
  }
}

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
  try {
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    const auto& ds = j.at("dataset");
    if (ds.contains("synthetic")) c.synthetic = ds.at("synthetic").get<SynthConfig>();
    if (ds.contains("manifest")) c.manifest = manifest_from_json(ds.at("manifest"), base_dir);
    if (ds.contains("manifest_file")) {
      fs::path p = ds.at("manifest_file").get<std::string>();
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      if (c.manifest) throw ConfigError("config: give dataset.manifest or dataset.manifest_file, not both");
      c.manifest = manifest_from_json(read_json(p), p.parent_path());
    }
    c.zscore = j.value("zscore", c.zscore);
    if (j.contains("clustering")) {
      const auto& cl = j.at("clustering");
      c.clustering.method = cl.value("method", c.clustering.method);
      c.clustering.k = cl.value("k", c.clustering.k);
      c.clustering.seed = cl.value("seed", c.clustering.seed);
    }
    c.models_per_uc = j.value("models_per_uc", c.models_per_uc);
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("transfer")) {
      const auto& t = j.at("transfer");
      c.transfer.depths = t.value("depths", c.transfer.depths);
      c.transfer.sources_per_uc = t.value("sources_per_uc", c.transfer.sources_per_uc);
      c.transfer.include_self = t.value("include_self", c.transfer.include_self);
    }
    if (j.contains("cca")) {
      const auto& k = j.at("cca");
      c.cca.enabled = k.value("enabled", c.cca.enabled);
      if (k.contains("probe_layers")) {
        c.cca.probe_layers.clear();
        for (const auto& l : k.at("probe_layers")) c.cca.probe_layers.push_back(cca::probe_layer_from_string(l));
      }
      c.cca.cross_models = k.value("cross_models", c.cca.cross_models);
      c.cca.min_probe_samples = k.value("min_probe_samples", c.cca.min_probe_samples);
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      c.sweep.n_splits = s.value("n_splits", c.sweep.n_splits);
      c.sweep.models_per_uc = s.value("models_per_uc", c.sweep.models_per_uc);
      c.sweep.seed = s.value("seed", c.sweep.seed);
    }
    if (j.contains("output_dir")) {
      fs::path p = j.at("output_dir").get<std::string>();
      c.output_dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }
}

json config_to_json(const ExperimentConfig& c) {
  json ds;
  if (c.synthetic) ds["synthetic"] = *c.synthetic;
  if (c.manifest) ds["manifest"] = manifest_to_json(*c.manifest);
  json layers = json::array();
  for (auto l : c.cca.probe_layers) layers.push_back(cca::to_string(l));
  return json{{"name", c.name},
              {"seed", c.seed},
              {"dataset", ds},
              {"zscore", c.zscore},
              {"clustering", {{"method", c.clustering.method}, {"k", c.clustering.k}, {"seed", c.clustering.seed}}},
              {"models_per_uc", c.models_per_uc},
              {"train", train_to_json(c.train)},
              {"transfer",
               {{"depths", c.transfer.depths},
                {"sources_per_uc", c.transfer.sources_per_uc},
                {"include_self", c.transfer.include_self}}},
              {"cca",
               {{"enabled", c.cca.enabled},
                {"probe_layers", layers},
                {"cross_models", c.cca.cross_models},
                {"min_probe_samples", c.cca.min_probe_samples}}},
              {"sweep",
               {{"n_splits", c.sweep.n_splits}, {"models_per_uc", c.sweep.models_per_uc}, {"seed", c.sweep.seed}}},
              {"output_dir", c.output_dir.generic_string()}};
}

ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("{}: cannot open config", path.string()));
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return config_from_json(j, path.parent_path());
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("output_dir");
  return hex_digest(j.dump());
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset data;
  if (cfg.synthetic) {
    const auto syn = synth_generate(*cfg.synthetic);
    data = dataset_from_windows(cfg.name, syn.windows, syn.activities, features::whar_like_config(),
                                nn::layout_by_name("w-HAR").input);
  } else {
    data = ingest(*cfg.manifest);
  }
  if (cfg.zscore) zscore_features(data);
  return data;
}

clustering::ClusterAssignment cluster_dataset(const Dataset& data, std::size_t k, std::uint64_t seed) {
  std::map<std::pair<std::string, std::string>, std::vector<clustering::WindowFeatures>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& act = data.activities.at(static_cast<std::size_t>(data.labels[i]));
    const auto row = data.features.row(static_cast<Eigen::Index>(i));
    groups[{data.samples[i].user_id, act}].push_back({data.samples[i].window_id, {row.begin(), row.end()}});
  }
  clustering::RepresentativeSet reps;
  for (auto& [key, windows] : groups) reps[key] = windows[clustering::representative_window(windows)].values;
  return clustering::cluster_users(clustering::user_distance_vectors(reps, data.activities), k, seed);
}

std::set<Stage> all_stages() { return {Stage::Cluster, Stage::Train, Stage::Cca, Stage::Transfer, Stage::Sweep}; }

std::vector<double> AccuracyMatrix::diagonal() const {
  std::vector<double> d;
  for (std::size_t i = 0; i < mean.size(); ++i) d.push_back(mean[i][i]);
  return d;
}

double AccuracyMatrix::mean_cross() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    for (std::size_t j = 0; j < mean[i].size(); ++j) {
      if (i != j) {
        sum += mean[i][j];
        ++n;
      }
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

Distribution summarize(std::vector<double> v) {
  Distribution d;
  if (v.empty()) return d;
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  d.min = v.front();
  d.q1 = q(0.25);
  d.median = q(0.5);
  d.q3 = q(0.75);
  d.max = v.back();
  return d;
}

const cca::DistanceCurve* ExperimentReport::find_curve(const std::string& a, const std::string& b,
                                                       const std::string& test) const {
  for (const auto& r : distance_curves) {
    if (r.curve.train_uc_a == a && r.curve.train_uc_b == b && r.curve.test_uc == test) return &r.curve;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Orchestration

ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const auto has = [&](Stage s) { return options.stages.count(s) > 0; };
  const bool need_train = has(Stage::Train) || has(Stage::Cca) || has(Stage::Transfer);
  const std::string hash = config_hash(cfg);
  const fs::path dir = cfg.output_dir;
  const fs::path cells_dir = dir / "cells";
  CellRunner runner(cells_dir, hash, options.jobs, options.max_new_cells);

  ExperimentReport report;
  report.config = config_to_json(cfg);
  report.config.erase("output_dir");
  report.config_hash = hash;
  report.versions = {{"harlab", HARLAB_VERSION},
                     {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR,
                                                   NLOHMANN_JSON_VERSION_MINOR, NLOHMANN_JSON_VERSION_PATCH)}};

  const Dataset data = load_dataset(cfg);
  report.dataset = {{"name", data.name},
                    {"source", cfg.synthetic ? "synthetic" : "manifest"},
                    {"windows", data.size()},
                    {"users", data.users().size()},
                    {"activities", data.activities},
                    {"feature_count", data.feature_count()},
                    {"image", {data.image.height, data.image.width, data.image.channels}},
                    {"zscore", cfg.zscore}};

  // Step 1: user clusters.
  std::vector<Cell> cluster_cells;
  cluster_cells.push_back({"cluster", "cluster.json", {}, [&] {
                             clustering::ClusterAssignment a =
                                 cfg.clustering.method == "kmeans"
                                     ? cluster_dataset(data, cfg.clustering.k, cfg.clustering.seed)
                                     : clustering::random_partition(data.users(), cfg.clustering.k, cfg.clustering.seed);
                             return json(a);
                           }});
  runner.run(cluster_cells);
  const auto finish = [&] {
    report.failures = runner.failures();
    report.complete = !runner.interrupted();
    report.cell_cpu_seconds = runner.cpu();
    if (!report.complete) {
      spdlog::warn("run stopped before all cells completed; rerun with the same config to resume");
    } else if (options.write_files) {
      export_report(report, dir);
    }
    return report;
  };
  const json* cl = runner.result("cluster");
  if (!cl) return finish();
  report.clusters = cl->get<clustering::ClusterAssignment>();
  if (cfg.synthetic) {
    const auto planted = synth_generate(*cfg.synthetic).planted;
    std::vector<int> truth;
    std::vector<int> found;
    for (const auto& [user, c] : planted) {
      truth.push_back(c);
      found.push_back(report.clusters->assignments.at(user));
    }
    report.planted_ari = clustering::adjusted_rand_index(truth, found);
  }
  const auto ucs = build_ucs(data, *report.clusters, cfg.seed);
  for (const auto& uc : ucs) report.ucs.push_back(uc.info);
  const std::size_t k = ucs.size();

  // Step 2: models per UC, evaluated on every UC.
  auto init_seed = [&](std::size_t c, std::size_t m) { return derive_seed(cfg.seed, "init", {c, m}); };
  auto train_seed = [&](std::size_t c, std::size_t m) { return derive_seed(cfg.seed, "train", {c, m}); };
  auto model_path = [&](std::size_t c, std::size_t m) {
    return cells_dir / "models" / fmt::format("{}_m{:02}.bin", uc_name(c), m);
  };
  if (need_train) {
    std::vector<Cell> cells;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t m = 0; m < cfg.models_per_uc; ++m) {
        const std::string id = "train/" + model_id(c, m);
        cells.push_back({id, fmt::format("train/{}_m{:02}.json", uc_name(c), m), {"cluster"}, [&, c, m, id] {
                           auto model = fresh_model(data, init_seed(c, m));
                           auto tc = cfg.train;
                           tc.seed = train_seed(c, m);
                           const auto curve = nn::train(model, ucs[c].split.train, ucs[c].split.val, tc);
                           std::vector<double> acc;
                           for (std::size_t t = 0; t < k; ++t) {
                             acc.push_back(nn::evaluate(model, t == c ? ucs[t].split.test : ucs[t].all).accuracy);
                           }
                           save_model(model_path(c, m), model);
                           return json{{"run_id", id},
                                       {"uc", c},
                                       {"index", m},
                                       {"init_seed", init_seed(c, m)},
                                       {"train_seed", train_seed(c, m)},
                                       {"curve", transfer::curve_to_json(curve)},
                                       {"accuracy", acc}};
                         }});
      }
    }
    runner.run(cells);
    AccuracyMatrix am;
    for (const auto& uc : ucs) am.ucs.push_back(uc.info.name);
    am.mean.assign(k, std::vector<double>(k, 0.0));
    am.std.assign(k, std::vector<double>(k, 0.0));
    am.run_ids.assign(k, {});
    bool full = true;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<std::vector<double>> acc;
      for (std::size_t m = 0; m < cfg.models_per_uc; ++m) {
        const json* r = runner.result("train/" + model_id(c, m));
        if (!r) continue;
        ModelRun run;
        run.run_id = r->at("run_id").get<std::string>();
        run.uc = c;
        run.index = m;
        run.init_seed = r->at("init_seed").get<std::uint64_t>();
        run.train_seed = r->at("train_seed").get<std::uint64_t>();
        run.curve = transfer::curve_from_json(r->at("curve"));
        run.accuracy = r->at("accuracy").get<std::vector<double>>();
        acc.push_back(run.accuracy);
        am.run_ids[c].push_back(run.run_id);
        report.models.push_back(std::move(run));
      }
      if (acc.empty()) {
        full = false;
        continue;
      }
      for (std::size_t t = 0; t < k; ++t) {
        double s = 0.0;
        for (const auto& a : acc) s += a[t];
        const double mean = s / static_cast<double>(acc.size());
        double ss = 0.0;
        for (const auto& a : acc) ss += (a[t] - mean) * (a[t] - mean);
        am.mean[c][t] = mean;
        am.std[c][t] = std::sqrt(ss / static_cast<double>(acc.size()));
      }
    }
    if (full) report.accuracy = std::move(am);
  }

  // Trained models, shared read-only by the CCA and transfer cells.
  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const nn::CnnModel>> models;
  auto model_ptr = [&](std::size_t c, std::size_t m) -> const nn::CnnModel& {
    const auto& p = models.at({c, m});
    return *p;
  };
  if (has(Stage::Cca) || has(Stage::Transfer)) {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t m = 0; m < cfg.models_per_uc; ++m) {
        if (runner.result("train/" + model_id(c, m))) {
          models[{c, m}] = std::make_shared<const nn::CnnModel>(load_model(model_path(c, m)));
        }
      }
    }
  }

  // Step 3: CCA curves, scratch baselines and the random-partition sweep.
  std::vector<Cell> cells;
  std::vector<std::string> curve_ids;
  if (has(Stage::Cca) && cfg.cca.enabled) {
    const auto& layers = cfg.cca.probe_layers;
    auto add_curve = [&](std::size_t a, std::size_t b, std::size_t t) {
      const std::size_t n = a == b ? cfg.models_per_uc : cfg.cca.cross_models;
      const std::string id = fmt::format("cca/{}-{}/{}", uc_name(a), uc_name(b), uc_name(t));
      std::vector<std::string> deps;
      for (std::size_t m = 0; m < n; ++m) {
        deps.push_back("train/" + model_id(a, m));
        if (b != a) deps.push_back("train/" + model_id(b, m));
      }
      curve_ids.push_back(id);
      cells.push_back({id, fmt::format("cca/{}-{}_{}.json", uc_name(a), uc_name(b), uc_name(t)), deps,
                       [&, a, b, t, n, id] {
                         cca::ModelSet set_a;
                         cca::ModelSet set_b;
                         for (std::size_t m = 0; m < n; ++m) {
                           set_a.push_back(&model_ptr(a, m));
                           set_b.push_back(&model_ptr(b, m));
                         }
                         auto curve = a == b ? cca::mean_pairwise_distance(set_a, ucs[t].all.features, layers,
                                                                           cfg.cca.min_probe_samples)
                                             : cca::cross_model_distance(set_a, set_b, ucs[t].all.features, layers,
                                                                         cfg.cca.min_probe_samples);
                         curve.train_uc_a = uc_name(a);
                         curve.train_uc_b = uc_name(b);
                         curve.test_uc = uc_name(t);
                         json j = curve_to_json(curve);
                         j["run_id"] = id;
                         return j;
                       }});
    };
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t t = 0; t < k; ++t) add_curve(a, a, t);
    }
    if (cfg.cca.cross_models > 0) {
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
          for (std::size_t t = 0; t < k; ++t) add_curve(a, b, t);
        }
      }
    }
  }
  auto scratch_init = [&](std::size_t t) { return derive_seed(cfg.seed, "scratch-init", {t}); };
  auto tune_seed = [&](std::size_t t) { return derive_seed(cfg.seed, "finetune", {t}); };
  const bool transfer_on = has(Stage::Transfer) && !cfg.transfer.depths.empty();
  if (transfer_on) {
    for (std::size_t t = 0; t < k; ++t) {
      const std::string id = "scratch/" + uc_name(t);
      cells.push_back({id, fmt::format("scratch/{}.json", uc_name(t)), {"cluster"}, [&, t] {
                         auto tc = cfg.train;
                         tc.seed = tune_seed(t);
                         const auto arm = transfer::train_scratch(fresh_model(data, 0), scratch_init(t), ucs[t].split, tc);
                         return json{{"accuracy", arm.accuracy},
                                     {"trained_params", arm.trained_params},
                                     {"total_params", arm.total_params},
                                     {"curve", transfer::curve_to_json(arm.curve)}};
                       }});
    }
  }
  const bool sweep_on = has(Stage::Sweep) && cfg.sweep.n_splits > 0;
  if (sweep_on) {
    const auto users = data.users();
    cells.push_back({"sweep/clustered", "sweep/clustered.json", {"cluster"}, [&] {
                       return split_accuracy_to_json(evaluate_partition(data, *report.clusters, cfg,
                                                                        cfg.sweep.models_per_uc,
                                                                        derive_seed(cfg.sweep.seed, "clustered"),
                                                                        "sweep/clustered"));
                     }});
    for (std::size_t i = 0; i < cfg.sweep.n_splits; ++i) {
      const std::string id = fmt::format("sweep/split{:03}", i);
      cells.push_back({id, fmt::format("sweep/split{:03}.json", i), {"cluster"}, [&, i, id, users] {
                         const auto part = clustering::random_partition(
                             users, cfg.clustering.k, derive_seed(cfg.sweep.seed, "partition", {i}));
                         return split_accuracy_to_json(evaluate_partition(
                             data, part, cfg, cfg.sweep.models_per_uc, derive_seed(cfg.sweep.seed, "split", {i}), id));
                       }});
    }
  }
  runner.run(cells);
  for (const auto& id : curve_ids) {
    const json* r = runner.result(id);
    if (!r) continue;
    CurveRecord rec;
    rec.run_id = id;
    rec.curve.train_uc_a = r->at("train_uc_a").get<std::string>();
    rec.curve.train_uc_b = r->at("train_uc_b").get<std::string>();
    rec.curve.test_uc = r->at("test_uc").get<std::string>();
    for (const auto& p : r->at("points")) {
      rec.curve.points.push_back({cca::probe_layer_from_string(p.at("layer").get<std::string>()),
                                  p.at("mean_distance").get<double>(), p.at("std").get<double>(),
                                  p.at("n_pairs").get<std::size_t>()});
    }
    report.distance_curves.push_back(std::move(rec));
  }
  if (sweep_on) {
    std::vector<SplitAccuracy> splits;
    for (std::size_t i = 0; i < cfg.sweep.n_splits; ++i) {
      if (const json* r = runner.result(fmt::format("sweep/split{:03}", i))) splits.push_back(split_accuracy_from_json(*r));
    }
    report.sweep = summarize_sweep(std::move(splits));
    if (const json* r = runner.result("sweep/clustered")) report.sweep->clustered = split_accuracy_from_json(*r);
  }

  // Step 4: transfer and fine-tune.
  if (transfer_on) {
    std::vector<Cell> tcells;
    std::vector<std::pair<std::size_t, std::string>> ids;
    for (auto depth : cfg.transfer.depths) {
      for (std::size_t s = 0; s < k; ++s) {
        for (std::size_t m = 0; m < cfg.transfer.sources_per_uc; ++m) {
          for (std::size_t t = 0; t < k; ++t) {
            if (t == s && !cfg.transfer.include_self) continue;
            const std::string id = fmt::format("transfer/d{}/{}->{}", depth, model_id(s, m), uc_name(t));
            ids.emplace_back(depth, id);
            tcells.push_back(
                {id,
                 fmt::format("transfer/d{}_{}_m{:02}_{}.json", depth, uc_name(s), m, uc_name(t)),
                 {"train/" + model_id(s, m), "scratch/" + uc_name(t)},
                 [&, depth, s, m, t] {
                   const nn::CnnModel& source = model_ptr(s, m);
                   transfer::TransferPlan plan;
                   plan.source_model_id = model_id(s, m);
                   plan.target_uc = uc_name(t);
                   plan.fine_tune_depth = depth;
                   plan.source_classes = ucs[s].train_classes;
                   plan.target_classes = ucs[t].all_classes;
                   plan.init_seed = scratch_init(t);
                   auto tc = cfg.train;
                   tc.seed = tune_seed(t);
                   const double baseline = nn::evaluate(source, ucs[t].split.test).accuracy;
                   auto model = transfer::transfer_weights(source, plan);
                   const auto tuned = transfer::fine_tune(model, plan, ucs[t].split, tc);
                   const json& sj = *runner.result("scratch/" + uc_name(t));
                   transfer::ArmResult scratch;
                   scratch.accuracy = sj.at("accuracy").get<double>();
                   scratch.trained_params = sj.at("trained_params").get<std::size_t>();
                   scratch.total_params = sj.at("total_params").get<std::size_t>();
                   scratch.curve = transfer::curve_from_json(sj.at("curve"));
                   return transfer::outcome_to_json(transfer::make_outcome(plan, baseline, tuned, scratch), true);
                 }});
          }
        }
      }
    }
    runner.run(tcells);
    for (const auto& [depth, id] : ids) {
      if (const json* r = runner.result(id)) report.fine_tune[depth].push_back(transfer::outcome_from_json(*r));
    }
  }
  return finish();
}

SweepSummary random_cluster_sweep(const ExperimentConfig& cfg, std::size_t n_splits, std::size_t jobs) {
  if (n_splits == 0) throw ConfigError("random_cluster_sweep: n_splits must be at least 1");
  const Dataset data = load_dataset(cfg);
  const auto users = data.users();
  std::vector<SplitAccuracy> splits(n_splits);
  std::vector<std::string> errors(n_splits);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n_splits;) {
      try {
        const auto part =
            clustering::random_partition(users, cfg.clustering.k, derive_seed(cfg.sweep.seed, "partition", {i}));
        splits[i] = evaluate_partition(data, part, cfg, cfg.sweep.models_per_uc,
                                       derive_seed(cfg.sweep.seed, "split", {i}), fmt::format("sweep/split{:03}", i));
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < std::min(jobs, n_splits); ++t) pool.emplace_back(worker);
    worker();
  }
  for (std::size_t i = 0; i < n_splits; ++i) {
    if (!errors[i].empty()) throw DataError(fmt::format("sweep split {}: {}", i, errors[i]));
  }
  return summarize_sweep(std::move(splits));
}

// Exposed for report.cpp.
json distance_curve_json(const cca::DistanceCurve& c) { return curve_to_json(c); }
json split_accuracy_json(const SplitAccuracy& s) { return split_accuracy_to_json(s); }
SplitAccuracy split_accuracy_parse(const json& j) { return split_accuracy_from_json(j); }
SweepSummary sweep_from_splits(std::vector<SplitAccuracy> splits) { return summarize_sweep(std::move(splits)); }

}  // namespace harlab::harness
