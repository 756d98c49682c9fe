#include "harlab/clustering/clustering.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <set>

#include "harlab/errors.hpp"
#include "harlab/rng.hpp"

namespace harlab::clustering {

namespace {

std::optional<long long> as_integer(const std::string& s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) return std::nullopt;
  return v;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

bool window_id_less(const std::string& a, const std::string& b) {
  const auto ia = as_integer(a);
  const auto ib = as_integer(b);
  if (ia && ib && *ia != *ib) return *ia < *ib;
  return a < b;
}

std::size_t representative_window(std::span<const WindowFeatures> windows) {
  if (windows.empty()) throw DataError("representative_window: no windows");
  const std::size_t n = windows.size();
  for (const auto& w : windows) {
    if (w.values.size() != windows[0].values.size()) {
      throw DataError(fmt::format("representative_window: window {} has {} features, expected {}", w.window_id,
                                  w.values.size(), windows[0].values.size()));
    }
  }
  if (n == 1) return 0;
  std::vector<double> mean_dist(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::sqrt(squared_distance(windows[i].values, windows[j].values));
      mean_dist[i] += d;
      mean_dist[j] += d;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    // Sums share the divisor n-1, so compare sums directly.
    if (mean_dist[i] < mean_dist[best] ||
        (mean_dist[i] == mean_dist[best] && window_id_less(windows[i].window_id, windows[best].window_id))) {
      best = i;
    }
  }
  return best;
}

double correlation_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DataError(fmt::format("correlation_distance: lengths differ ({} vs {})", u.size(), v.size()));
  }
  if (u.size() < 2) throw DataError("correlation_distance: vectors need at least two entries");
  const double n = static_cast<double>(u.size());
  const double mu = std::accumulate(u.begin(), u.end(), 0.0) / n;
  const double mv = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double suv = 0.0;
  double suu = 0.0;
  double svv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i] - mu;
    const double b = v[i] - mv;
    suv += a * b;
    suu += a * a;
    svv += b * b;
  }
  if (suu == 0.0 || svv == 0.0) {
    spdlog::warn("correlation_distance: zero-variance vector, using distance 1");
    return 1.0;
  }
  const double r = suv / std::sqrt(suu * svv);
  return std::clamp(1.0 - r, 0.0, 2.0);
}

std::vector<UserDistanceVector> user_distance_vectors(const RepresentativeSet& reps,
                                                      const std::vector<std::string>& activities) {
  std::set<std::string> user_set;
  for (const auto& [key, _] : reps) user_set.insert(key.first);
  if (user_set.size() < 2) throw DataError("user_distance_vectors: need at least two users");
  const std::vector<std::string> users(user_set.begin(), user_set.end());

  std::vector<UserDistanceVector> out;
  out.reserve(users.size());
  for (const auto& u : users) {
    UserDistanceVector vec{u, {}};
    vec.distances.reserve(activities.size());
    for (const auto& a : activities) {
      const auto mine = reps.find({u, a});
      if (mine == reps.end()) {
        spdlog::info("user {} has no '{}' windows; distance set to 1", u, a);
        vec.distances.push_back(1.0);
        continue;
      }
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& other : users) {
        if (other == u) continue;
        const auto theirs = reps.find({other, a});
        if (theirs == reps.end()) continue;
        sum += correlation_distance(mine->second, theirs->second);
        ++count;
      }
      if (count == 0) {
        spdlog::info("no other user has '{}' windows; distance for {} set to 1", a, u);
        vec.distances.push_back(1.0);
      } else {
        vec.distances.push_back(sum / static_cast<double>(count));
      }
    }
    out.push_back(std::move(vec));
  }
  return out;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter) {
  const std::size_t n = points.size();
  if (k == 0) throw DataError("kmeans: k must be at least 1");
  if (n < k) throw DataError(fmt::format("kmeans: {} points cannot form {} clusters", n, k));
  const std::size_t dim = points[0].size();
  for (const auto& p : points) {
    if (p.size() != dim) throw DataError("kmeans: points have different dimensions");
  }

  Rng rng(derive_seed(seed, "kmeans++"));
  KMeansResult res;
  // k-means++ seeding.
  res.centroids.push_back(points[static_cast<std::size_t>(rng.below(n))]);
  std::vector<double> d2(n);
  while (res.centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : res.centroids) best = std::min(best, squared_distance(points[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = res.centroids.size() % n;  // all points already coincide with centroids
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cumulative = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        cumulative += d2[i];
        if (r < cumulative) break;
      }
    }
    res.centroids.push_back(points[pick]);
  }

  res.labels.assign(n, -1);
  auto assign = [&](std::vector<int>& labels) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(points[i], res.centroids[c]);
        if (d < best) {
          best = d;
          arg = static_cast<int>(c);
        }
      }
      labels[i] = arg;
    }
  };
  auto update = [&](const std::vector<int>& labels) {
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto c = static_cast<std::size_t>(labels[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) res.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
    }
    return counts;
  };
  auto inertia = [&](const std::vector<int>& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += squared_distance(points[i], res.centroids[static_cast<std::size_t>(labels[i])]);
    return s;
  };

  std::vector<int> labels(n, -1);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iter, 1); ++iter) {
    std::vector<int> next(n);
    assign(next);
    auto counts = update(next);
    // Repair empty clusters with the point farthest from its centroid.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(next[i])] <= 1) continue;
        const double d = squared_distance(points[i], res.centroids[static_cast<std::size_t>(next[i])]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[static_cast<std::size_t>(next[far])];
      next[far] = static_cast<int>(c);
      counts = update(next);
    }
    res.iterations = iter + 1;
    res.inertia_history.push_back(inertia(next));
    const bool stable = next == labels;
    labels = std::move(next);
    if (stable) break;
  }
  res.labels = std::move(labels);
  res.inertia = res.inertia_history.back();
  return res;
}

std::vector<std::string> ClusterAssignment::members(int cluster) const {
  std::vector<std::string> out;
  for (const auto& [user, c] : assignments) {
    if (c == cluster) out.push_back(user);
  }
  return out;
}

ClusterAssignment random_partition(const std::vector<std::string>& user_ids, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw DataError("random_partition: k must be at least 1");
  if (user_ids.size() < k) {
    throw DataError(fmt::format("random_partition: {} users cannot form {} clusters", user_ids.size(), k));
  }
  Rng rng(derive_seed(seed, "random-partition"));
  std::vector<int> labels(user_ids.size());
  // Rejection sampling keeps the draw uniform over surjective assignments.
  while (true) {
    std::vector<std::size_t> counts(k, 0);
    for (auto& l : labels) {
      l = static_cast<int>(rng.below(k));
      ++counts[static_cast<std::size_t>(l)];
    }
    if (std::find(counts.begin(), counts.end(), 0u) == counts.end()) break;
  }
  ClusterAssignment a;
  a.method = "random";
  a.k = k;
  a.seed = seed;
  for (std::size_t i = 0; i < user_ids.size(); ++i) a.assignments[user_ids[i]] = labels[i];
  return a;
}

ClusterAssignment cluster_users(const std::vector<UserDistanceVector>& vectors, std::size_t k, std::uint64_t seed,
                                std::size_t max_iter) {
  std::vector<std::vector<double>> points;
  points.reserve(vectors.size());
  for (const auto& v : vectors) points.push_back(v.distances);
  const auto km = kmeans(points, k, seed, max_iter);
  ClusterAssignment a;
  a.method = "kmeans";
  a.k = k;
  a.seed = seed;
  a.centroids = km.centroids;
  a.inertia = km.inertia;
  for (std::size_t i = 0; i < vectors.size(); ++i) a.assignments[vectors[i].user_id] = km.labels[i];
  return a;
}

void to_json(nlohmann::json& j, const ClusterAssignment& a) {
  j = nlohmann::json{{"method", a.method}, {"k", a.k}, {"seed", a.seed}, {"assignments", a.assignments}};
  if (!a.centroids.empty()) {
    j["centroids"] = a.centroids;
    j["inertia"] = a.inertia;
  }
}

void from_json(const nlohmann::json& j, ClusterAssignment& a) {
  try {
    a.method = j.at("method").get<std::string>();
    a.k = j.at("k").get<std::size_t>();
    a.seed = j.at("seed").get<std::uint64_t>();
    a.assignments = j.at("assignments").get<std::map<std::string, int>>();
    a.centroids = j.value("centroids", std::vector<std::vector<double>>{});
    a.inertia = j.value("inertia", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("clusters.json: {}", e.what()));
  }
  for (const auto& [user, c] : a.assignments) {
    if (c < 0 || static_cast<std::size_t>(c) >= a.k) {
      throw DataError(fmt::format("clusters.json: user {} assigned to cluster {} outside 0..{}", user, c, a.k - 1));
    }
  }
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw DataError("adjusted_rand_index: labelings differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra;
  std::map<int, double> rb;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_joint = 0.0;
  for (const auto& [_, v] : joint) sum_joint += c2(v);
  double sum_a = 0.0;
  for (const auto& [_, v] : ra) sum_a += c2(v);
  double sum_b = 0.0;
  for (const auto& [_, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

}  // namespace harlab::clustering
