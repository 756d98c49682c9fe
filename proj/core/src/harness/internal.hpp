#pragma once

#include <nlohmann/json.hpp>
#include <vector>

#include "harlab/harness/experiment.hpp"

namespace harlab::harness {

nlohmann::json distance_curve_json(const cca::DistanceCurve& c);
nlohmann::json split_accuracy_json(const SplitAccuracy& s);
SplitAccuracy split_accuracy_parse(const nlohmann::json& j);
SweepSummary sweep_from_splits(std::vector<SplitAccuracy> splits);

}  // namespace harlab::harness
