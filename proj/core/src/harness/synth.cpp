#include "harlab/harness/synth.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <nlohmann/json.hpp>

#include "harlab/errors.hpp"
#include "harlab/rng.hpp"

namespace harlab::harness {

using nlohmann::json;

void SynthConfig::validate() const {
  if (n_users == 0 || n_activities == 0 || windows_per_pair == 0 || n_clusters == 0) {
    throw ConfigError("synthetic: n_users, n_activities, windows_per_pair and n_clusters must be positive");
  }
  if (n_clusters > n_users) {
    throw ConfigError(fmt::format("synthetic: {} clusters but only {} users", n_clusters, n_users));
  }
  if (n_activities < 2) throw ConfigError("synthetic: need at least 2 activities");
  if (!(noise >= 0.0) || !(user_jitter >= 0.0) || !(separation >= 0.0) || !(phase_jitter >= 0.0)) {
    throw ConfigError("synthetic: noise, user_jitter, phase_jitter and separation must be non-negative");
  }
  if (!(sample_rate_hz > 0.0)) throw ConfigError("synthetic: sample_rate_hz must be positive");
  if (min_samples < 2 || min_samples > max_samples) {
    throw ConfigError(fmt::format("synthetic: bad window length range [{}, {}]", min_samples, max_samples));
  }
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"n_users", c.n_users},
           {"n_activities", c.n_activities},
           {"windows_per_pair", c.windows_per_pair},
           {"n_clusters", c.n_clusters},
           {"separation", c.separation},
           {"noise", c.noise},
           {"user_jitter", c.user_jitter},
           {"phase_jitter", c.phase_jitter},
           {"sample_rate_hz", c.sample_rate_hz},
           {"min_samples", c.min_samples},
           {"max_samples", c.max_samples},
           {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  const SynthConfig d;
  c.n_users = j.value("n_users", d.n_users);
  c.n_activities = j.value("n_activities", d.n_activities);
  c.windows_per_pair = j.value("windows_per_pair", d.windows_per_pair);
  c.n_clusters = j.value("n_clusters", d.n_clusters);
  c.separation = j.value("separation", d.separation);
  c.noise = j.value("noise", d.noise);
  c.user_jitter = j.value("user_jitter", d.user_jitter);
  c.phase_jitter = j.value("phase_jitter", d.phase_jitter);
  c.sample_rate_hz = j.value("sample_rate_hz", d.sample_rate_hz);
  c.min_samples = j.value("min_samples", d.min_samples);
  c.max_samples = j.value("max_samples", d.max_samples);
  c.seed = j.value("seed", d.seed);
}

namespace {

constexpr std::size_t kAxes = 3;

struct ActivitySignal {
  std::array<double, kAxes> offset{};
  std::array<double, kAxes> amplitude{};
  double frequency = 1.0;  // Hz
  double stretch_level = 0.0;
  double stretch_amplitude = 0.0;
  double stretch_frequency = 1.0;
  double mean_length = 0.0;
};

ActivitySignal blend(const ActivitySignal& a, const ActivitySignal& b, double t) {
  ActivitySignal r = a;
  for (std::size_t k = 0; k < kAxes; ++k) {
    r.offset[k] += t * (b.offset[k] - a.offset[k]);
    r.amplitude[k] += t * (b.amplitude[k] - a.amplitude[k]);
  }
  r.stretch_level += t * (b.stretch_level - a.stretch_level);
  r.stretch_amplitude += t * (b.stretch_amplitude - a.stretch_amplitude);
  return r;
}

std::string padded(const char* prefix, std::size_t i, std::size_t count) {
  const auto digits = std::to_string(count).size();
  return fmt::format("{}{:0{}}", prefix, i + 1, digits);
}

}  // namespace

SynthDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset out;
  out.degenerate = cfg.separation == 0.0;
  if (out.degenerate) spdlog::warn("synthetic profile has zero separation: clusters are indistinguishable");
  for (std::size_t a = 0; a < cfg.n_activities; ++a) out.activities.push_back(padded("A", a, cfg.n_activities));

  Rng prof(derive_seed(cfg.seed, "profile"));
  std::vector<ActivitySignal> base(cfg.n_activities);
  for (std::size_t a = 0; a < cfg.n_activities; ++a) {
    auto& s = base[a];
    for (std::size_t k = 0; k < kAxes; ++k) {
      s.offset[k] = prof.uniform(-1.0, 1.0);
      s.amplitude[k] = prof.uniform(0.4, 1.0);
    }
    s.frequency = 0.8 + 0.75 * static_cast<double>(a);
    s.stretch_level = prof.uniform(0.0, 2.0);
    s.stretch_amplitude = prof.uniform(0.3, 0.8);
    s.stretch_frequency = 0.4 + 0.5 * static_cast<double>(a);
    s.mean_length = prof.uniform(static_cast<double>(cfg.min_samples), static_cast<double>(cfg.max_samples));
  }
  // Cluster-specific variants.
  std::vector<std::vector<ActivitySignal>> cluster(cfg.n_clusters, base);
  for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
    for (std::size_t a = 0; a < cfg.n_activities; ++a) {
      if (a % cfg.n_clusters == c) {
        cluster[c][a] = blend(base[a], base[(a + 1) % cfg.n_activities], cfg.separation);
      }
    }
  }

  const double lo = static_cast<double>(cfg.min_samples);
  const double hi = static_cast<double>(cfg.max_samples);
  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    const std::string user = padded("u", u, cfg.n_users);
    const int c = static_cast<int>(u * cfg.n_clusters / cfg.n_users);
    out.planted[user] = c;
    Rng urng(derive_seed(cfg.seed, "user", {u}));
    std::vector<ActivitySignal> mine = cluster[static_cast<std::size_t>(c)];
    for (auto& s : mine) {
      for (std::size_t k = 0; k < kAxes; ++k) {
        s.offset[k] += cfg.user_jitter * urng.normal();
        s.amplitude[k] *= std::max(0.1, 1.0 + cfg.user_jitter * urng.normal());
      }
      s.stretch_level += cfg.user_jitter * urng.normal();
    }
    std::size_t wid = 0;
    for (std::size_t a = 0; a < cfg.n_activities; ++a) {
      const auto& s = mine[a];
      for (std::size_t w = 0; w < cfg.windows_per_pair; ++w) {
        Rng wrng(derive_seed(cfg.seed, "window", {u, a, w}));
        const double len = std::clamp(std::round(s.mean_length + 3.0 * wrng.normal()), lo, hi);
        const auto n = static_cast<std::size_t>(len);
        features::ActivityWindow win;
        win.user_id = user;
        win.window_id = fmt::format("w{}", ++wid);
        win.activity = out.activities[a];
        win.channels.assign(kAxes + 1, std::vector<double>(n));
        const double phase = cfg.phase_jitter * wrng.uniform(-1.0, 1.0);
        const double stretch_phase = cfg.phase_jitter * wrng.uniform(-1.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double t = static_cast<double>(i) / cfg.sample_rate_hz;
          for (std::size_t k = 0; k < kAxes; ++k) {
            const double arg = 2.0 * std::numbers::pi * s.frequency * t + phase + 0.7 * static_cast<double>(k);
            win.channels[k][i] = s.offset[k] + s.amplitude[k] * std::sin(arg) + cfg.noise * wrng.normal();
          }
          const double sarg = 2.0 * std::numbers::pi * s.stretch_frequency * t + stretch_phase;
          win.channels[kAxes][i] =
              s.stretch_level + s.stretch_amplitude * std::sin(sarg) + cfg.noise * wrng.normal();
        }
        win.duration = static_cast<double>(n) / cfg.sample_rate_hz;
        out.windows.push_back(std::move(win));
      }
    }
  }
  return out;
}

SplitIndices split_60_20_20(std::span<const int> labels, std::uint64_t seed) {
  if (labels.empty()) throw DataError("cannot split an empty user cluster");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  SplitIndices out;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 5) {
      spdlog::warn("class {} has only {} windows; the stratified split degrades", label, idx.size());
    }
    Rng rng(derive_seed(seed, "split", {static_cast<std::uint64_t>(label)}));
    rng.shuffle(idx);
    const double n = static_cast<double>(idx.size());
    const auto n_val = static_cast<std::size_t>(std::floor(0.2 * n + 0.5));
    const auto n_test = n_val;
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val),
                    idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace harlab::harness
