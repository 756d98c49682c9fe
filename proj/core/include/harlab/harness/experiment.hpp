#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harlab/cca/cca.hpp"
#include "harlab/clustering/clustering.hpp"
#include "harlab/harness/dataset.hpp"
#include "harlab/harness/synth.hpp"
#include "harlab/nn/adadelta.hpp"
#include "harlab/transfer/transfer.hpp"

namespace harlab::harness {

struct ClusteringConfig {
  std::string method = "kmeans";  // or "random"
  std::size_t k = 4;
  std::uint64_t seed = 0;
};

struct TransferGrid {
  std::vector<std::size_t> depths = {1, 2};
  /// Models of each source UC used as transfer sources (model 0, 1, ...).
  std::size_t sources_per_uc = 1;
  /// Also fine-tune a UC's model on its own data.
  bool include_self = false;
};

struct CcaConfig {
  bool enabled = true;
  std::vector<cca::ProbeLayer> probe_layers = cca::all_probe_layers();
  /// Curves between models of different UCs use the first `cross_models`
  /// models of each; 0 disables them.
  std::size_t cross_models = 5;
  std::size_t min_probe_samples = 0;
};

struct SweepConfig {
  std::size_t n_splits = 0;
  std::size_t models_per_uc = 5;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::optional<DatasetManifest> manifest;
  std::optional<SynthConfig> synthetic;
  /// Standardize feature columns over the whole dataset before use.
  bool zscore = true;
  ClusteringConfig clustering;
  std::size_t models_per_uc = 10;
  nn::TrainConfig train;  // train.seed is unused; run seeds derive from `seed`
  TransferGrid transfer;
  CcaConfig cca;
  SweepConfig sweep;
  std::filesystem::path output_dir = "out";

  /// Throws ConfigError: no or two data sources, k < 2, models_per_uc < 2
  /// with CCA on, depths outside {1, 2}, colliding seeds.
  void validate() const;
};

/// Parses the single JSON config document. Relative paths resolve against
/// base_dir.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Hex digest of the config fields that influence results (output_dir excluded).
std::string config_hash(const ExperimentConfig& cfg);

/// Loads (or generates) the dataset and applies the configured scaling.
Dataset load_dataset(const ExperimentConfig& cfg);

/// Representative window per (user, activity) -> per-user correlation
/// distance vectors -> k-means with k clusters.
clustering::ClusterAssignment cluster_dataset(const Dataset& data, std::size_t k, std::uint64_t seed);

enum class Stage { Cluster, Train, Cca, Transfer, Sweep };
std::set<Stage> all_stages();

struct RunOptions {
  std::size_t jobs = 1;
  std::set<Stage> stages = all_stages();
  /// Compute at most this many new cells, then stop as if interrupted.
  std::optional<std::size_t> max_new_cells;
  bool write_files = true;
};

struct UcInfo {
  std::string name;
  std::vector<std::string> users;
  std::size_t n_windows = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
};

struct ModelRun {
  std::string run_id;
  std::size_t uc = 0;
  std::size_t index = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
  nn::TrainingCurve curve;
  /// Accuracy on each UC: the test split for the training UC, all data for
  /// the others.
  std::vector<double> accuracy;
};

struct AccuracyMatrix {
  std::vector<std::string> ucs;
  std::vector<std::vector<double>> mean;  // [train][test]
  std::vector<std::vector<double>> std;
  std::vector<std::vector<std::string>> run_ids;  // per training UC

  /// Mean accuracy of each UC's models on its own test split.
  std::vector<double> diagonal() const;
  /// Mean over off-diagonal entries.
  double mean_cross() const;
};

struct CurveRecord {
  std::string run_id;
  cca::DistanceCurve curve;
};

struct Distribution {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};
Distribution summarize(std::vector<double> values);

/// Cross-UC accuracy of one user partition before (source model as is)
/// and after depth-1 fine-tuning, on target test splits.
struct SplitAccuracy {
  std::string run_id;
  std::map<std::string, int> assignments;
  double min_before = 0.0;
  double median_before = 0.0;
  double min_after = 0.0;
  double median_after = 0.0;
};

struct SweepSummary {
  std::vector<SplitAccuracy> splits;
  Distribution min_before;
  Distribution median_before;
  Distribution min_after;
  Distribution median_after;
  std::optional<SplitAccuracy> clustered;  // the configured clustering, for comparison
};

struct CellFailure {
  std::string cell;
  std::string error;
};

struct ExperimentReport {
  nlohmann::json config;
  std::string config_hash;
  nlohmann::json versions;
  nlohmann::json dataset;  // name, sizes, activities, image
  std::optional<clustering::ClusterAssignment> clusters;
  std::optional<double> planted_ari;
  std::vector<UcInfo> ucs;
  std::vector<ModelRun> models;
  std::optional<AccuracyMatrix> accuracy;
  std::map<std::size_t, std::vector<transfer::TransferOutcome>> fine_tune;  // by depth
  std::vector<CurveRecord> distance_curves;
  std::optional<SweepSummary> sweep;
  std::vector<CellFailure> failures;
  bool complete = true;
  /// CPU seconds per computed cell. Not part of report.json.
  std::map<std::string, double> cell_cpu_seconds;

  const cca::DistanceCurve* find_curve(const std::string& a, const std::string& b, const std::string& test) const;
};

/// report.json content. Timing fields are left out so that identical
/// configs produce identical documents.
nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);
nlohmann::json timings_to_json(const ExperimentReport& report);

/// Cluster, train per UC, evaluate across UCs, CCA curves, transfer and
/// fine-tune, random-partition sweep. Cells whose artifact already exists
/// in output_dir for the same config hash are loaded instead of rerun. A
/// failing cell is recorded and dependent cells fail with it; the rest
/// proceed.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

/// Cross-UC accuracy over `n_splits` random user partitions
/// (cfg.sweep.models_per_uc models per UC).
SweepSummary random_cluster_sweep(const ExperimentConfig& cfg, std::size_t n_splits, std::size_t jobs = 1);

/// Writes report.json, timings.json, clusters.json and transfer_report.json
/// (json), accuracy_matrix.csv, fine_tune_depth{d}.csv and cca_curves.csv
/// (csv) and SVG charts (svg) into `dir`. Throws DataError when dir is unwritable.
void export_report(const ExperimentReport& report, const std::filesystem::path& dir,
                   const std::set<std::string>& formats = {"json", "csv", "svg"});

}  // namespace harlab::harness
