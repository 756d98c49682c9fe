#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "harlab/features/window.hpp"

namespace harlab::harness {

/// Population of users whose activity signals depend on a planted cluster.
/// Every activity has its own posture offsets, oscillation frequency and
/// stretch-sensor level; users in cluster c perform the activities a with
/// a % n_clusters == c differently, blended toward activity a+1 by
/// `separation` (0 = no cluster effect, 1 = fully borrowed posture).
struct SynthConfig {
  std::size_t n_users = 24;
  std::size_t n_activities = 8;
  std::size_t windows_per_pair = 21;
  std::size_t n_clusters = 4;
  double separation = 1.0;
  double noise = 0.25;        // per-sample Gaussian noise
  double user_jitter = 0.1;   // per-user perturbation of the signal parameters
  double phase_jitter = 0.5;  // radians; windows start near a common phase
  double sample_rate_hz = 25.0;
  std::size_t min_samples = 28;
  std::size_t max_samples = 40;
  std::uint64_t seed = 1;

  /// Throws ConfigError on zero counts, more clusters than users or
  /// activities, negative noise, or an empty length range.
  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthDataset {
  std::vector<std::string> activities;
  /// Four channels per window: three accelerometer axes, then stretch.
  std::vector<features::ActivityWindow> windows;
  std::map<std::string, int> planted;  // user -> cluster
  bool degenerate = false;             // separation == 0
};

/// Deterministic in the seed. A zero separation is allowed and logged.
SynthDataset synth_generate(const SynthConfig& cfg);

/// Train/validation/test positions into a label array.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Stratified by label: each class contributes round(0.2 n) validation and
/// round(0.2 n) test samples chosen by a seeded shuffle, the rest train.
/// Index lists are ascending. Throws DataError on empty input; warns when a
/// class has fewer than five samples.
SplitIndices split_60_20_20(std::span<const int> labels, std::uint64_t seed);

}  // namespace harlab::harness
