#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "harlab/features/feature_builder.hpp"
#include "harlab/features/window.hpp"
#include "harlab/nn/shape.hpp"
#include "harlab/nn/trainer.hpp"

namespace harlab::harness {

struct SampleInfo {
  std::string user_id;
  std::string window_id;
};

/// Feature vectors of every window, with labels as indices into `activities`.
struct Dataset {
  std::string name;
  std::vector<std::string> activities;
  nn::TensorShape image;  // H x W x 1
  std::vector<SampleInfo> samples;
  std::vector<int> labels;
  nn::Matrix features;  // samples x F

  std::size_t size() const { return samples.size(); }
  std::size_t feature_count() const { return static_cast<std::size_t>(features.cols()); }
  /// Distinct user ids, numeric-aware order.
  std::vector<std::string> users() const;
  /// Sample indices (ascending) belonging to any of `users`.
  std::vector<std::size_t> indices_of_users(const std::vector<std::string>& users) const;
  nn::LabeledSet labeled(std::span<const std::size_t> indices) const;
  /// Throws DataError on inconsistent sizes, labels out of range, duplicate
  /// (user, window) or non-finite features.
  void validate() const;
};

/// Standardizes every feature column to zero mean and unit variance over
/// the whole dataset; constant columns become zero.
void zscore_features(Dataset& data);

enum class DataMode { RawWindows, PrecomputedFeatures };

struct DatasetManifest {
  std::string name;
  DataMode mode = DataMode::PrecomputedFeatures;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> activities;
  std::optional<features::FeatureConfig> feature_config;  // raw mode
  std::size_t feature_count = 0;                          // feature mode
  nn::TensorShape image;
  /// Name of a known layout, or "custom" to accept any dims.
  std::string layout;
  double sample_rate_hz = 0.0;  // raw mode: window duration = samples / rate

  std::size_t features() const { return feature_config ? feature_config->feature_count : feature_count; }
  /// Throws ConfigError: empty label set, H*W != F, dims that match no known
  /// layout without "custom", missing files or feature config.
  void validate() const;
};

/// Relative file paths are resolved against `base_dir`.
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json manifest_to_json(const DatasetManifest& m);

/// Long format: user_id,window_id,activity,channel,sample_index,value.
/// Windows come back in first-appearance order. Throws DataError with
/// file:line for schema violations, unknown labels (listing the allowed
/// ones), duplicate samples, gaps in sample indices, and windows that
/// reappear after another window started.
std::vector<features::ActivityWindow> read_raw_windows(const std::filesystem::path& path,
                                                       const std::vector<std::string>& activities,
                                                       double sample_rate_hz);
void write_raw_windows(const std::filesystem::path& path, const std::vector<features::ActivityWindow>& windows);

/// Wide format: user_id,window_id,activity,f0..f{F-1}.
Dataset read_feature_csv(const std::filesystem::path& path, const std::vector<std::string>& activities,
                         std::size_t feature_count);
void write_feature_csv(const std::filesystem::path& path, const Dataset& data);

/// Feature vectors of raw windows.
Dataset dataset_from_windows(const std::string& name, const std::vector<features::ActivityWindow>& windows,
                             const std::vector<std::string>& activities, const features::FeatureConfig& cfg,
                             const nn::TensorShape& image);

/// Loads every file of the manifest and logs per-user, per-activity counts.
Dataset ingest(const DatasetManifest& manifest);

}  // namespace harlab::harness
