#include "harlab/features/feature_builder.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "harlab/errors.hpp"
#include "harlab/features/transforms.hpp"

namespace harlab::features {

namespace {

const char* transform_name(Transform t) { return t == Transform::Dwt ? "dwt" : "fft"; }

const char* summary_name(Summary s) {
  switch (s) {
    case Summary::Min: return "min";
    case Summary::Max: return "max";
    case Summary::Mean: return "mean";
    case Summary::Std: return "std";
    case Summary::Duration: return "duration";
  }
  return "?";
}

Summary summary_from(const std::string& s) {
  if (s == "min") return Summary::Min;
  if (s == "max") return Summary::Max;
  if (s == "mean") return Summary::Mean;
  if (s == "std") return Summary::Std;
  if (s == "duration") return Summary::Duration;
  throw ConfigError(fmt::format("unknown summary statistic '{}'", s));
}

}  // namespace

void ActivityWindow::validate() const {
  if (channels.empty()) throw DataError(fmt::format("window {}/{} has no channels", user_id, window_id));
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].empty()) throw DataError(fmt::format("window {}/{}: channel {} is empty", user_id, window_id, c));
    for (double v : channels[c]) {
      if (!std::isfinite(v)) throw DataError(fmt::format("window {}/{}: non-finite sample", user_id, window_id));
    }
  }
  if (!(duration > 0.0)) throw DataError(fmt::format("window {}/{}: duration must be positive", user_id, window_id));
}

std::size_t ChannelBlock::output_size() const {
  const std::size_t full = transform == Transform::Dwt ? length : length / 2 + 1;
  return keep == 0 ? full : std::min(keep, full);
}

std::size_t FeatureConfig::computed_size() const {
  std::size_t n = summaries.size();
  for (const auto& b : blocks) n += b.output_size();
  return n;
}

void FeatureConfig::validate() const {
  for (const auto& b : blocks) {
    if (!is_power_of_two(b.length)) {
      throw ConfigError(fmt::format("channel {}: pad length {} is not a power of two", b.channel, b.length));
    }
    if (b.transform == Transform::Dwt && (b.levels == 0 || (b.length >> b.levels) == 0)) {
      throw ConfigError(fmt::format("channel {}: {} DWT levels do not fit length {}", b.channel, b.levels, b.length));
    }
    const std::size_t full = b.transform == Transform::Dwt ? b.length : b.length / 2 + 1;
    if (b.keep > full) {
      throw ConfigError(fmt::format("channel {}: keep={} exceeds the {} available coefficients", b.channel, b.keep,
                                    full));
    }
  }
  if (computed_size() != feature_count) {
    std::vector<std::string> terms;
    for (const auto& b : blocks) {
      terms.push_back(fmt::format("{} ({} ch{})", b.output_size(), transform_name(b.transform), b.channel));
    }
    terms.push_back(fmt::format("{} (scalars)", summaries.size()));
    throw ConfigError(fmt::format("feature blocks sum to {} = {}, but feature_count is {}", computed_size(),
                                  fmt::join(terms, " + "), feature_count));
  }
}

FeatureConfig whar_like_config() {
  FeatureConfig cfg;
  for (std::size_t c = 0; c < 3; ++c) cfg.blocks.push_back({c, Transform::Dwt, 32, 3, 0});
  cfg.blocks.push_back({3, Transform::Fft, 64, 0, 21});
  cfg.summaries = {{Summary::Min, 3}, {Summary::Max, 3}, {Summary::Duration, 0}};
  cfg.feature_count = 120;
  return cfg;
}

void to_json(nlohmann::json& j, const FeatureConfig& cfg) {
  j = nlohmann::json::object();
  auto& blocks = j["blocks"] = nlohmann::json::array();
  for (const auto& b : cfg.blocks) {
    nlohmann::json e{{"channel", b.channel}, {"transform", transform_name(b.transform)}, {"length", b.length}};
    if (b.transform == Transform::Dwt) e["levels"] = b.levels;
    if (b.keep != 0) e["keep"] = b.keep;
    blocks.push_back(std::move(e));
  }
  auto& sums = j["summaries"] = nlohmann::json::array();
  for (const auto& s : cfg.summaries) {
    nlohmann::json e{{"stat", summary_name(s.stat)}};
    if (s.stat != Summary::Duration) e["channel"] = s.channel;
    sums.push_back(std::move(e));
  }
  j["feature_count"] = cfg.feature_count;
}

void from_json(const nlohmann::json& j, FeatureConfig& cfg) {
  cfg = {};
  try {
    for (const auto& e : j.at("blocks")) {
      ChannelBlock b;
      b.channel = e.at("channel").get<std::size_t>();
      const auto t = e.at("transform").get<std::string>();
      if (t == "dwt") {
        b.transform = Transform::Dwt;
      } else if (t == "fft") {
        b.transform = Transform::Fft;
      } else {
        throw ConfigError(fmt::format("unknown transform '{}' (expected dwt or fft)", t));
      }
      b.length = e.at("length").get<std::size_t>();
      b.levels = e.value("levels", std::size_t{1});
      b.keep = e.value("keep", std::size_t{0});
      cfg.blocks.push_back(b);
    }
    for (const auto& e : j.value("summaries", nlohmann::json::array())) {
      SummaryBlock s;
      s.stat = summary_from(e.at("stat").get<std::string>());
      s.channel = e.value("channel", std::size_t{0});
      cfg.summaries.push_back(s);
    }
    cfg.feature_count = j.at("feature_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("feature config: {}", e.what()));
  }
}

FeatureVector build_features(const ActivityWindow& window, const FeatureConfig& cfg) {
  cfg.validate();
  window.validate();
  FeatureVector fv;
  fv.values.reserve(cfg.feature_count);
  auto channel = [&](std::size_t c) -> const std::vector<double>& {
    if (c >= window.channels.size()) {
      throw DataError(fmt::format("window {}/{} has {} channels, feature config references channel {}",
                                  window.user_id, window.window_id, window.channels.size(), c));
    }
    return window.channels[c];
  };
  for (const auto& b : cfg.blocks) {
    const auto padded = fit_to_length(channel(b.channel), b.length);
    std::vector<double> coeffs =
        b.transform == Transform::Dwt ? haar_dwt(padded, b.levels).coefficients() : fft_magnitude(padded);
    coeffs.resize(b.output_size());
    fv.provenance.push_back({transform_name(b.transform), b.channel, fv.values.size(), coeffs.size()});
    fv.values.insert(fv.values.end(), coeffs.begin(), coeffs.end());
  }
  for (const auto& s : cfg.summaries) {
    double v = window.duration;
    if (s.stat != Summary::Duration) {
      const auto& x = channel(s.channel);
      const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
      switch (s.stat) {
        case Summary::Min: v = *std::min_element(x.begin(), x.end()); break;
        case Summary::Max: v = *std::max_element(x.begin(), x.end()); break;
        case Summary::Mean: v = mean; break;
        case Summary::Std: {
          double ss = 0.0;
          for (double e : x) ss += (e - mean) * (e - mean);
          v = std::sqrt(ss / static_cast<double>(x.size()));
          break;
        }
        case Summary::Duration: break;
      }
    }
    fv.provenance.push_back({summary_name(s.stat), s.channel, fv.values.size(), 1});
    fv.values.push_back(v);
  }
  return fv;
}

FeatureImage::FeatureImage(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height_ * width_ != values_.size()) {
    throw DataError(fmt::format("image {}x{} cannot hold {} values", height_, width_, values_.size()));
  }
}

FeatureImage reshape_to_image(const std::vector<double>& values, const nn::TensorShape& dims) {
  if (dims.flat || dims.channels != 1) {
    throw DataError(fmt::format("feature images are H x W x 1, got {}", dims.to_string()));
  }
  if (dims.height * dims.width != values.size()) {
    throw DataError(fmt::format("cannot reshape {} features into ({}, {}): {} cells", values.size(), dims.height,
                                dims.width, dims.height * dims.width));
  }
  return FeatureImage(dims.height, dims.width, values);
}

}  // namespace harlab::features
