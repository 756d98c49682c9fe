#include "harlab/harness/dataset.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "csv.hpp"
#include "harlab/clustering/clustering.hpp"
#include "harlab/errors.hpp"
#include "harlab/nn/layer_spec.hpp"

namespace harlab::harness {

using nlohmann::json;

std::vector<std::string> Dataset::users() const {
  std::set<std::string> seen;
  for (const auto& s : samples) seen.insert(s.user_id);
  std::vector<std::string> out(seen.begin(), seen.end());
  std::sort(out.begin(), out.end(), clustering::window_id_less);
  return out;
}

std::vector<std::size_t> Dataset::indices_of_users(const std::vector<std::string>& users) const {
  const std::set<std::string> wanted(users.begin(), users.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (wanted.count(samples[i].user_id)) out.push_back(i);
  }
  return out;
}

nn::LabeledSet Dataset::labeled(std::span<const std::size_t> indices) const {
  nn::LabeledSet set;
  set.num_classes = activities.size();
  set.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  set.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    set.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(indices[r]));
    set.labels.push_back(labels.at(indices[r]));
  }
  return set;
}

void Dataset::validate() const {
  if (activities.empty()) throw DataError(fmt::format("dataset '{}': empty activity label set", name));
  if (labels.size() != samples.size() || static_cast<std::size_t>(features.rows()) != samples.size()) {
    throw DataError(fmt::format("dataset '{}': {} samples, {} labels, {} feature rows", name, samples.size(),
                                labels.size(), features.rows()));
  }
  if (image.size() != feature_count()) {
    throw DataError(fmt::format("dataset '{}': image {} holds {} values but there are {} features", name,
                                image.to_string(), image.size(), feature_count()));
  }
  std::set<std::pair<std::string, std::string>> keys;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= activities.size()) {
      throw DataError(fmt::format("dataset '{}': sample {} has label {} outside [0, {})", name, i, labels[i],
                                  activities.size()));
    }
    if (!keys.emplace(samples[i].user_id, samples[i].window_id).second) {
      throw DataError(fmt::format("dataset '{}': duplicate window ({}, {})", name, samples[i].user_id,
                                  samples[i].window_id));
    }
  }
  if (!features.allFinite()) throw DataError(fmt::format("dataset '{}': non-finite feature values", name));
}

void zscore_features(Dataset& data) {
  const auto n = data.features.rows();
  if (n == 0) return;
  for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
    auto col = data.features.col(c);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(n);
    if (var <= 0.0) {
      col.setZero();
    } else {
      col = (col.array() - mean) / std::sqrt(var);
    }
  }
}

void DatasetManifest::validate() const {
  if (name.empty()) throw ConfigError("manifest: name is empty");
  if (activities.empty()) throw ConfigError(fmt::format("manifest '{}': activity label set is empty", name));
  if (std::set<std::string>(activities.begin(), activities.end()).size() != activities.size()) {
    throw ConfigError(fmt::format("manifest '{}': duplicate activity labels", name));
  }
  if (files.empty()) throw ConfigError(fmt::format("manifest '{}': no data files", name));
  if (mode == DataMode::RawWindows) {
    if (!feature_config) throw ConfigError(fmt::format("manifest '{}': raw-windows mode needs a feature_config", name));
    feature_config->validate();
    if (!(sample_rate_hz > 0.0)) {
      throw ConfigError(fmt::format("manifest '{}': raw-windows mode needs sample_rate_hz > 0", name));
    }
  } else if (feature_count == 0) {
    throw ConfigError(fmt::format("manifest '{}': feature_count must be positive", name));
  }
  image.validate();
  if (image.channels != 1 || image.flat) {
    throw ConfigError(fmt::format("manifest '{}': image must be (H, W, 1), got {}", name, image.to_string()));
  }
  if (image.height * image.width != features()) {
    throw ConfigError(fmt::format("manifest '{}': image {}x{} = {} but F = {}", name, image.height, image.width,
                                  image.height * image.width, features()));
  }
  if (layout == "custom") return;
  if (!layout.empty()) {
    const auto& known = nn::layout_by_name(layout);
    if (!(known.input == image)) {
      throw ConfigError(fmt::format("manifest '{}': layout {} expects input {} but image is {}", name, layout,
                                    known.input.to_string(), image.to_string()));
    }
    return;
  }
  for (const auto& l : nn::known_layouts()) {
    if (l.input == image) return;
  }
  throw ConfigError(fmt::format("manifest '{}': image {} matches no known layout; set \"layout\": \"custom\"", name,
                                image.to_string()));
}

DatasetManifest manifest_from_json(const json& j, const std::filesystem::path& base_dir) {
  try {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "raw-windows") {
      m.mode = DataMode::RawWindows;
    } else if (mode == "precomputed-features") {
      m.mode = DataMode::PrecomputedFeatures;
    } else {
      throw ConfigError(fmt::format("manifest: mode must be raw-windows or precomputed-features, got '{}'", mode));
    }
    for (const auto& f : j.at("files")) {
      std::filesystem::path p = f.get<std::string>();
      m.files.push_back(p.is_relative() && !base_dir.empty() ? base_dir / p : p);
    }
    m.activities = j.at("activities").get<std::vector<std::string>>();
    if (j.contains("feature_config")) {
      const auto& fc = j.at("feature_config");
      if (fc.is_string()) {
        if (fc.get<std::string>() != "whar-like") {
          throw ConfigError(fmt::format("manifest: unknown feature_config preset '{}'", fc.get<std::string>()));
        }
        m.feature_config = features::whar_like_config();
      } else {
        m.feature_config = fc.get<features::FeatureConfig>();
      }
    }
    m.feature_count = j.value("feature_count", std::size_t{0});
    const auto dims = j.at("image").get<std::vector<std::size_t>>();
    if (dims.size() != 2 && dims.size() != 3) throw ConfigError("manifest: image must be [H, W] or [H, W, 1]");
    m.image = nn::TensorShape::spatial(dims[0], dims[1], dims.size() == 3 ? dims[2] : 1);
    m.layout = j.value("layout", std::string{});
    m.sample_rate_hz = j.value("sample_rate_hz", 0.0);
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("manifest: {}", e.what()));
  }
}

json manifest_to_json(const DatasetManifest& m) {
  json files = json::array();
  for (const auto& f : m.files) files.push_back(f.generic_string());
  json j{{"name", m.name},
         {"mode", m.mode == DataMode::RawWindows ? "raw-windows" : "precomputed-features"},
         {"files", files},
         {"activities", m.activities},
         {"image", {m.image.height, m.image.width, m.image.channels}}};
  if (m.feature_config) j["feature_config"] = *m.feature_config;
  if (m.feature_count) j["feature_count"] = m.feature_count;
  if (!m.layout.empty()) j["layout"] = m.layout;
  if (m.sample_rate_hz > 0.0) j["sample_rate_hz"] = m.sample_rate_hz;
  return j;
}

namespace {

int label_index(const detail::CsvReader& csv, const std::vector<std::string>& activities, const std::string& label) {
  const auto it = std::find(activities.begin(), activities.end(), label);
  if (it == activities.end()) {
    csv.fail(fmt::format("unknown activity '{}'; allowed labels: {}", label, fmt::join(activities, ", ")));
  }
  return static_cast<int>(it - activities.begin());
}

struct PendingWindow {
  features::ActivityWindow window;
  std::size_t first_line = 0;
  std::map<std::size_t, std::map<std::size_t, double>> samples;  // channel -> index -> value
};

features::ActivityWindow finish(PendingWindow& p, const std::filesystem::path& path, double rate) {
  auto& w = p.window;
  std::size_t expected = 0;
  std::size_t longest = 0;
  for (auto& [ch, values] : p.samples) {
    if (ch != expected++) {
      throw DataError(fmt::format("{}:{}: window ({}, {}) is missing channel {}", path.string(), p.first_line,
                                  w.user_id, w.window_id, expected - 1));
    }
    std::vector<double> seq;
    seq.reserve(values.size());
    std::size_t idx = 0;
    for (auto& [i, v] : values) {
      if (i != idx++) {
        throw DataError(fmt::format("{}:{}: window ({}, {}) channel {} has no sample {}", path.string(), p.first_line,
                                    w.user_id, w.window_id, ch, idx - 1));
      }
      seq.push_back(v);
    }
    longest = std::max(longest, seq.size());
    w.channels.push_back(std::move(seq));
  }
  w.duration = static_cast<double>(longest) / rate;
  return std::move(w);
}

}  // namespace

std::vector<features::ActivityWindow> read_raw_windows(const std::filesystem::path& path,
                                                       const std::vector<std::string>& activities,
                                                       double sample_rate_hz) {
  detail::CsvReader csv(path);
  const std::vector<std::string> expected = {"user_id", "window_id", "activity", "channel", "sample_index", "value"};
  if (csv.header() != expected) {
    csv.fail(fmt::format("header must be '{}', got '{}'", fmt::join(expected, ","), fmt::join(csv.header(), ",")));
  }
  std::vector<features::ActivityWindow> out;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;  // key -> first line
  std::optional<PendingWindow> cur;
  while (csv.next()) {
    const auto& f = csv.fields();
    if (f.size() != expected.size()) csv.fail(fmt::format("expected {} fields, got {}", expected.size(), f.size()));
    if (f[0].empty() || f[1].empty()) csv.fail("empty user_id or window_id");
    const int label = label_index(csv, activities, f[2]);
    const auto channel = static_cast<std::size_t>(csv.integer(3));
    const auto index = static_cast<std::size_t>(csv.integer(4));
    const double value = csv.number(5);
    if (!cur || cur->window.user_id != f[0] || cur->window.window_id != f[1]) {
      if (cur) out.push_back(finish(*cur, path, sample_rate_hz));
      const auto [it, fresh] = seen.emplace(std::make_pair(f[0], f[1]), csv.line());
      if (!fresh) {
        csv.fail(fmt::format("duplicate window ({}, {}): already defined starting at line {}", f[0], f[1],
                             it->second));
      }
      cur.emplace();
      cur->window.user_id = f[0];
      cur->window.window_id = f[1];
      cur->window.activity = activities[static_cast<std::size_t>(label)];
      cur->first_line = csv.line();
    } else if (cur->window.activity != f[2]) {
      csv.fail(fmt::format("window ({}, {}) changes activity from '{}' to '{}'", f[0], f[1], cur->window.activity,
                           f[2]));
    }
    if (!cur->samples[channel].emplace(index, value).second) {
      csv.fail(fmt::format("duplicate sample {} of channel {} in window ({}, {})", index, channel, f[0], f[1]));
    }
  }
  if (cur) out.push_back(finish(*cur, path, sample_rate_hz));
  for (const auto& w : out) w.validate();
  return out;
}

void write_raw_windows(const std::filesystem::path& path, const std::vector<features::ActivityWindow>& windows) {
  auto out = detail::open_for_write(path);
  out << "user_id,window_id,activity,channel,sample_index,value\n";
  std::string buf;
  for (const auto& w : windows) {
    const std::string prefix = fmt::format("{},{},{},", detail::csv_field(w.user_id), detail::csv_field(w.window_id),
                                           detail::csv_field(w.activity));
    for (std::size_t c = 0; c < w.channels.size(); ++c) {
      for (std::size_t i = 0; i < w.channels[c].size(); ++i) {
        buf.clear();
        fmt::format_to(std::back_inserter(buf), "{}{},{},{}\n", prefix, c, i, w.channels[c][i]);
        out << buf;
      }
    }
  }
  if (!out) throw DataError(fmt::format("{}: write failed", path.string()));
}

Dataset read_feature_csv(const std::filesystem::path& path, const std::vector<std::string>& activities,
                         std::size_t feature_count) {
  detail::CsvReader csv(path);
  std::vector<std::string> expected = {"user_id", "window_id", "activity"};
  for (std::size_t i = 0; i < feature_count; ++i) expected.push_back(fmt::format("f{}", i));
  if (csv.header() != expected) {
    csv.fail(fmt::format("header must be user_id,window_id,activity,f0..f{} ({} columns), got {} columns",
                         feature_count - 1, expected.size(), csv.header().size()));
  }
  Dataset data;
  data.activities = activities;
  std::vector<double> values;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  while (csv.next()) {
    const auto& f = csv.fields();
    if (f.size() != expected.size()) csv.fail(fmt::format("expected {} fields, got {}", expected.size(), f.size()));
    if (f[0].empty() || f[1].empty()) csv.fail("empty user_id or window_id");
    const auto [it, fresh] = seen.emplace(std::make_pair(f[0], f[1]), csv.line());
    if (!fresh) csv.fail(fmt::format("duplicate window ({}, {}): first seen at line {}", f[0], f[1], it->second));
    data.labels.push_back(label_index(csv, activities, f[2]));
    data.samples.push_back({f[0], f[1]});
    for (std::size_t i = 0; i < feature_count; ++i) values.push_back(csv.number(3 + i));
  }
  data.features = Eigen::Map<const nn::Matrix>(values.data(), static_cast<Eigen::Index>(data.samples.size()),
                                               static_cast<Eigen::Index>(feature_count));
  return data;
}

void write_feature_csv(const std::filesystem::path& path, const Dataset& data) {
  auto out = detail::open_for_write(path);
  out << "user_id,window_id,activity";
  for (std::size_t i = 0; i < data.feature_count(); ++i) out << ",f" << i;
  out << '\n';
  std::string buf;
  for (std::size_t r = 0; r < data.size(); ++r) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{},{},{}", detail::csv_field(data.samples[r].user_id),
                   detail::csv_field(data.samples[r].window_id),
                   detail::csv_field(data.activities.at(static_cast<std::size_t>(data.labels[r]))));
    for (Eigen::Index c = 0; c < data.features.cols(); ++c) {
      fmt::format_to(std::back_inserter(buf), ",{}", data.features(static_cast<Eigen::Index>(r), c));
    }
    buf += '\n';
    out << buf;
  }
  if (!out) throw DataError(fmt::format("{}: write failed", path.string()));
}

Dataset dataset_from_windows(const std::string& name, const std::vector<features::ActivityWindow>& windows,
                             const std::vector<std::string>& activities, const features::FeatureConfig& cfg,
                             const nn::TensorShape& image) {
  cfg.validate();
  Dataset data;
  data.name = name;
  data.activities = activities;
  data.image = image;
  data.features.resize(static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(cfg.feature_count));
  for (std::size_t r = 0; r < windows.size(); ++r) {
    const auto& w = windows[r];
    const auto it = std::find(activities.begin(), activities.end(), w.activity);
    if (it == activities.end()) {
      throw DataError(fmt::format("window ({}, {}): unknown activity '{}'; allowed labels: {}", w.user_id,
                                  w.window_id, w.activity, fmt::join(activities, ", ")));
    }
    const auto fv = features::build_features(w, cfg);
    for (std::size_t c = 0; c < fv.values.size(); ++c) {
      data.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = fv.values[c];
    }
    data.samples.push_back({w.user_id, w.window_id});
    data.labels.push_back(static_cast<int>(it - activities.begin()));
  }
  data.validate();
  return data;
}

namespace {

void append(Dataset& into, Dataset&& part) {
  if (into.samples.empty()) {
    into.samples = std::move(part.samples);
    into.labels = std::move(part.labels);
    into.features = std::move(part.features);
    return;
  }
  const auto old = into.features.rows();
  into.features.conservativeResize(old + part.features.rows(), Eigen::NoChange);
  into.features.bottomRows(part.features.rows()) = part.features;
  into.samples.insert(into.samples.end(), part.samples.begin(), part.samples.end());
  into.labels.insert(into.labels.end(), part.labels.begin(), part.labels.end());
}

void log_counts(const Dataset& data) {
  std::map<std::string, std::vector<std::size_t>> counts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& c = counts[data.samples[i].user_id];
    c.resize(data.activities.size());
    ++c[static_cast<std::size_t>(data.labels[i])];
  }
  spdlog::info("dataset '{}': {} windows, {} users, {} activities, F = {}", data.name, data.size(), counts.size(),
               data.activities.size(), data.feature_count());
  for (const auto& [user, c] : counts) spdlog::info("  user {}: {}", user, fmt::join(c, " "));
}

}  // namespace

Dataset ingest(const DatasetManifest& manifest) {
  manifest.validate();
  Dataset data;
  data.name = manifest.name;
  data.activities = manifest.activities;
  data.image = manifest.image;
  for (const auto& file : manifest.files) {
    if (manifest.mode == DataMode::RawWindows) {
      const auto windows = read_raw_windows(file, manifest.activities, manifest.sample_rate_hz);
      append(data,
             dataset_from_windows(manifest.name, windows, manifest.activities, *manifest.feature_config, manifest.image));
    } else {
      append(data, read_feature_csv(file, manifest.activities, manifest.feature_count));
    }
  }
  data.validate();
  log_counts(data);
  return data;
}

}  // namespace harlab::harness
