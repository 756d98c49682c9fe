#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "harlab/features/window.hpp"
#include "harlab/nn/shape.hpp"

namespace harlab::features {

enum class Transform { Dwt, Fft };
enum class Summary { Min, Max, Mean, Std, Duration };

struct ChannelBlock {
  std::size_t channel = 0;  // index into ActivityWindow::channels
  Transform transform = Transform::Dwt;
  std::size_t length = 32;  // pad/truncate length, power of two
  std::size_t levels = 1;   // DWT only
  std::size_t keep = 0;     // leading coefficients kept; 0 keeps all

  std::size_t output_size() const;
};

struct SummaryBlock {
  Summary stat = Summary::Duration;
  std::size_t channel = 0;  // ignored for Duration
};

/// Declares how a window becomes a fixed-length feature vector: transform
/// blocks in channel order, then scalar summaries.
struct FeatureConfig {
  std::vector<ChannelBlock> blocks;
  std::vector<SummaryBlock> summaries;
  std::size_t feature_count = 0;

  /// Throws ConfigError when the block arithmetic does not add up to
  /// feature_count, listing each term.
  void validate() const;
  std::size_t computed_size() const;
};

/// Accelerometer x/y/z as 32-sample, 3-level Haar blocks (96), stretch
/// channel as the first 21 FFT bins of a 64-sample pad, then stretch min,
/// stretch max and duration: 120 features.
FeatureConfig whar_like_config();

void to_json(nlohmann::json& j, const FeatureConfig& cfg);
void from_json(const nlohmann::json& j, FeatureConfig& cfg);

struct BlockTag {
  std::string kind;  // "dwt", "fft", "min", "max", "mean", "std", "duration"
  std::size_t channel = 0;
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct FeatureVector {
  std::vector<double> values;
  std::vector<BlockTag> provenance;
};

/// Pure function of (window, cfg). Summaries use the raw, unpadded samples.
FeatureVector build_features(const ActivityWindow& window, const FeatureConfig& cfg);

/// H x W x 1 grid holding a feature vector in row-major order.
class FeatureImage {
 public:
  FeatureImage(std::size_t height, std::size_t width, std::vector<double> values);
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  double at(std::size_t row, std::size_t col) const { return values_.at(row * width_ + col); }
  const std::vector<double>& flatten() const { return values_; }

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
};

/// Throws DataError unless dims.height * dims.width equals the vector length
/// (dims.channels must be 1).
FeatureImage reshape_to_image(const std::vector<double>& values, const nn::TensorShape& dims);

}  // namespace harlab::features
