#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "harlab/clustering/clustering.hpp"
#include "harlab/errors.hpp"
#include "harlab/rng.hpp"

using namespace harlab;
using namespace harlab::clustering;

TEST(Representative, HandExample) {
  const std::vector<WindowFeatures> w = {{"A", {0, 0}}, {"B", {1, 1}}, {"C", {10, 10}}};
  EXPECT_EQ(representative_window(w), 1u);
}

TEST(Representative, SingleAndTie) {
  const std::vector<WindowFeatures> one = {{"7", {3, 4}}};
  EXPECT_EQ(representative_window(one), 0u);
  const std::vector<WindowFeatures> two = {{"10", {0, 0}}, {"2", {1, 1}}};
  EXPECT_EQ(two[representative_window(two)].window_id, "2");
  EXPECT_THROW(representative_window(std::vector<WindowFeatures>{}), DataError);
  const std::vector<WindowFeatures> ragged = {{"1", {0, 0}}, {"2", {1}}};
  EXPECT_THROW(representative_window(ragged), DataError);
}

TEST(Representative, InvariantToOrdering) {
  Rng rng(3);
  std::vector<WindowFeatures> w;
  for (int i = 0; i < 9; ++i) w.push_back({std::to_string(i), {rng.normal(), rng.normal(), rng.normal()}});
  w.push_back({"9", w[4].values});  // exact tie with window 4
  const auto chosen = w[representative_window(w)].window_id;
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(w);
    EXPECT_EQ(w[representative_window(w)].window_id, chosen);
  }
}

TEST(WindowIds, NumericAwareOrder) {
  EXPECT_TRUE(window_id_less("2", "10"));
  EXPECT_FALSE(window_id_less("10", "2"));
  EXPECT_TRUE(window_id_less("a10", "a2"));
}

TEST(CorrelationDistance, HandExamples) {
  const std::vector<double> u = {1, 2, 4, 3};
  std::vector<double> neg(u.size());
  std::transform(u.begin(), u.end(), neg.begin(), [](double v) { return -v; });
  EXPECT_NEAR(correlation_distance(u, u), 0.0, 1e-12);
  EXPECT_NEAR(correlation_distance(u, neg), 2.0, 1e-12);
  EXPECT_NEAR(correlation_distance(std::vector<double>{1, -1, 0, 0}, std::vector<double>{0, 0, 1, -1}), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(correlation_distance(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}), 1.0);
}

TEST(CorrelationDistance, PositiveAffineInvariance) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> u(12);
    std::vector<double> v(12);
    for (auto& x : u) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const double a = rng.uniform(0.1, 10.0);
    const double b = rng.uniform(-5.0, 5.0);
    std::vector<double> w(u.size());
    std::transform(u.begin(), u.end(), w.begin(), [&](double x) { return a * x + b; });
    const double d = correlation_distance(u, v);
    EXPECT_NEAR(correlation_distance(w, v), d, 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
}

TEST(UserVectors, HandExamples) {
  const std::vector<std::string> acts = {"a", "b"};
  RepresentativeSet same;
  same[{"u1", "a"}] = {1, 2, 3};
  same[{"u2", "a"}] = {1, 2, 3};
  same[{"u1", "b"}] = {3, 1, 2};
  same[{"u2", "b"}] = {3, 1, 2};
  for (const auto& v : user_distance_vectors(same, acts)) {
    for (double d : v.distances) EXPECT_NEAR(d, 0.0, 1e-12);
  }

  RepresentativeSet opposite;
  opposite[{"u1", "a"}] = {1, 2, 3};
  opposite[{"u2", "a"}] = {-1, -2, -3};
  const auto vo = user_distance_vectors(opposite, {"a"});
  ASSERT_EQ(vo.size(), 2u);
  EXPECT_NEAR(vo[0].distances[0], 2.0, 1e-12);
  EXPECT_NEAR(vo[1].distances[0], 2.0, 1e-12);

  RepresentativeSet three;
  three[{"u1", "a"}] = {1, -1, 0, 0};
  three[{"u2", "a"}] = {1, -1, 0, 0};
  three[{"u3", "a"}] = {0, 0, 1, -1};
  const auto v3 = user_distance_vectors(three, {"a"});
  ASSERT_EQ(v3.size(), 3u);
  EXPECT_NEAR(v3[0].distances[0], 0.5, 1e-12);
  EXPECT_NEAR(v3[1].distances[0], 0.5, 1e-12);
  EXPECT_NEAR(v3[2].distances[0], 1.0, 1e-12);
}

TEST(UserVectors, MissingActivityIsNeutralAndFewUsersRejected) {
  RepresentativeSet r;
  r[{"u1", "a"}] = {1, 2, 3};
  r[{"u2", "a"}] = {1, 2, 3};
  r[{"u1", "b"}] = {1, 2, 3};
  const auto v = user_distance_vectors(r, {"a", "b"});
  EXPECT_NEAR(v[0].distances[1], 1.0, 1e-12);  // no peer has b
  EXPECT_NEAR(v[1].distances[1], 1.0, 1e-12);  // u2 lacks b
  RepresentativeSet single;
  single[{"u1", "a"}] = {1, 2, 3};
  EXPECT_THROW(user_distance_vectors(single, {"a"}), DataError);
}

TEST(UserVectors, RelabelingUsersPermutesVectors) {
  Rng rng(4);
  RepresentativeSet r;
  RepresentativeSet renamed;
  const std::vector<std::string> names = {"u1", "u2", "u3", "u4"};
  const std::vector<std::string> other = {"z9", "a0", "m5", "b7"};
  for (std::size_t u = 0; u < names.size(); ++u) {
    for (const std::string act : {"a", "b"}) {
      std::vector<double> v(6);
      for (auto& x : v) x = rng.normal();
      r[{names[u], act}] = v;
      renamed[{other[u], act}] = v;
    }
  }
  const auto va = user_distance_vectors(r, {"a", "b"});
  const auto vb = user_distance_vectors(renamed, {"a", "b"});
  for (std::size_t u = 0; u < names.size(); ++u) {
    const auto it = std::find_if(vb.begin(), vb.end(), [&](const auto& x) { return x.user_id == other[u]; });
    ASSERT_NE(it, vb.end());
    const auto jt = std::find_if(va.begin(), va.end(), [&](const auto& x) { return x.user_id == names[u]; });
    ASSERT_EQ(it->distances.size(), jt->distances.size());
    for (std::size_t a = 0; a < jt->distances.size(); ++a) EXPECT_NEAR(it->distances[a], jt->distances[a], 1e-12);
  }
}

TEST(KMeans, OneDimensionalExample) {
  const std::vector<std::vector<double>> pts = {{0}, {0.1}, {10}, {10.1}};
  const auto r = kmeans(pts, 2, 1);
  EXPECT_EQ(r.labels[0], r.labels[1]);
  EXPECT_EQ(r.labels[2], r.labels[3]);
  EXPECT_NE(r.labels[0], r.labels[2]);
}

TEST(KMeans, SingleClusterIsMean) {
  const std::vector<std::vector<double>> pts = {{0, 1}, {2, 3}, {4, 8}};
  const auto r = kmeans(pts, 1, 1);
  EXPECT_NEAR(r.centroids[0][0], 2.0, 1e-12);
  EXPECT_NEAR(r.centroids[0][1], 4.0, 1e-12);
}

TEST(KMeans, BlobsRecoveredAndInertiaMonotone) {
  Rng rng(10);
  std::vector<std::vector<double>> pts;
  std::vector<int> truth;
  for (int b = 0; b < 4; ++b) {
    for (int i = 0; i < 15; ++i) {
      pts.push_back({10.0 * b + 0.3 * rng.normal(), (b % 2) * 20.0 + 0.3 * rng.normal(), 0.3 * rng.normal()});
      truth.push_back(b);
    }
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = kmeans(pts, 4, seed);
    EXPECT_DOUBLE_EQ(adjusted_rand_index(truth, r.labels), 1.0);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-12);
    }
    std::set<int> used(r.labels.begin(), r.labels.end());
    EXPECT_EQ(used.size(), 4u);
  }
}

TEST(KMeans, InertiaMonotoneOnUnstructuredData) {
  Rng rng(11);
  std::vector<std::vector<double>> pts(80, std::vector<double>(5));
  for (auto& p : pts) {
    for (auto& x : p) x = rng.normal();
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = kmeans(pts, 6, seed);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-12);
    }
  }
}

TEST(KMeans, DuplicatePointsStillFillEveryCluster) {
  const std::vector<std::vector<double>> pts = {{0}, {0}, {0}, {0}, {1}};
  const auto r = kmeans(pts, 3, 2);
  std::set<int> used(r.labels.begin(), r.labels.end());
  EXPECT_EQ(used.size(), 3u);
}

TEST(KMeans, Errors) {
  EXPECT_THROW(kmeans({{0}, {1}}, 3, 1), DataError);
  EXPECT_THROW(kmeans({{0}, {1}}, 0, 1), DataError);
}

TEST(RandomPartition, Properties) {
  const std::vector<std::string> four = {"a", "b", "c", "d"};
  const auto p = random_partition(four, 4, 3);
  std::set<int> seen;
  for (const auto& [u, c] : p.assignments) seen.insert(c);
  EXPECT_EQ(seen.size(), 4u);

  std::vector<std::string> users;
  for (int i = 1; i <= 22; ++i) users.push_back("u" + std::to_string(i));
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = random_partition(users, 4, seed);
    EXPECT_EQ(r.assignments.size(), 22u);
    for (int c = 0; c < 4; ++c) EXPECT_FALSE(r.members(c).empty()) << "seed " << seed;
  }
  EXPECT_EQ(random_partition(users, 4, 5).assignments, random_partition(users, 4, 5).assignments);
  EXPECT_NE(random_partition(users, 4, 5).assignments, random_partition(users, 4, 6).assignments);
  EXPECT_THROW(random_partition(four, 5, 1), DataError);
}

TEST(RandomPartition, RoughlyUniformOverSurjections) {
  // 4 users into 2 nonempty clusters: 14 labeled assignments, so user 0
  // shares a cluster with user 1 in 6 of 14.
  const std::vector<std::string> users = {"a", "b", "c", "d"};
  int together = 0;
  const int n = 7000;
  for (int s = 0; s < n; ++s) {
    const auto r = random_partition(users, 2, static_cast<std::uint64_t>(s));
    together += r.assignments.at("a") == r.assignments.at("b");
  }
  EXPECT_NEAR(static_cast<double>(together) / n, 6.0 / 14.0, 0.025);
}

TEST(ClusterAssignment, JsonRoundTrip) {
  const std::vector<UserDistanceVector> v = {{"u1", {0.1, 0.2}}, {"u2", {0.9, 0.8}}, {"u3", {0.15, 0.2}}};
  const auto a = cluster_users(v, 2, 7);
  const nlohmann::json j = a;
  EXPECT_EQ(j.at("method"), "kmeans");
  EXPECT_EQ(j.at("k"), 2);
  const auto back = j.get<ClusterAssignment>();
  EXPECT_EQ(back.assignments, a.assignments);
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.members(a.assignments.at("u1")), (std::vector<std::string>{"u1", "u3"}));
}

TEST(Ari, KnownValues) {
  const std::vector<int> a = {0, 0, 1, 1};
  const std::vector<int> b = {1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(adjusted_rand_index(a, b), 1.0);
  const std::vector<int> c = {0, 1, 0, 1};
  EXPECT_NEAR(adjusted_rand_index(a, c), -0.5, 1e-12);
}
