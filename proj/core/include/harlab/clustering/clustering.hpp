#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace harlab::clustering {

/// A window's id and its feature vector, as seen by representative selection.
struct WindowFeatures {
  std::string window_id;
  std::vector<double> values;
};

/// "2" < "10" when both ids are integers, plain lexicographic otherwise.
bool window_id_less(const std::string& a, const std::string& b);

/// Index of the window with the smallest mean Euclidean distance to the
/// other windows of the same (user, activity). Ties go to the smallest
/// window id. Throws DataError on an empty input or ragged vectors.
std::size_t representative_window(std::span<const WindowFeatures> windows);

/// (user, activity) -> representative feature vector.
using RepresentativeSet = std::map<std::pair<std::string, std::string>, std::vector<double>>;

/// 1 - Pearson correlation, in [0, 2]. A zero-variance argument gives 1
/// and a warning in the log.
double correlation_distance(std::span<const double> u, std::span<const double> v);

struct UserDistanceVector {
  std::string user_id;
  std::vector<double> distances;  // one per activity
};

/// Entry a for user u is the mean correlation distance between u's
/// representative for activity a and every other user's. Users lacking an
/// activity (or with no peer that has it) get 1 in that coordinate.
/// Throws DataError with fewer than two users.
std::vector<UserDistanceVector> user_distance_vectors(const RepresentativeSet& reps,
                                                      const std::vector<std::string>& activities);

struct KMeansResult {
  std::vector<int> labels;
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each Lloyd iteration
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding and Euclidean distance. Empty
/// clusters are refilled with the point farthest from its centroid. Throws
/// DataError when there are fewer points than clusters or k is zero.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 300);

struct ClusterAssignment {
  std::string method;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignments;
  std::vector<std::vector<double>> centroids;  // empty for random partitions
  double inertia = 0.0;

  /// Users of cluster c in sorted order.
  std::vector<std::string> members(int cluster) const;
};

/// Uniformly random assignment of users to k nonempty clusters; uniform
/// over all surjective assignments and deterministic per seed.
ClusterAssignment random_partition(const std::vector<std::string>& user_ids, std::size_t k, std::uint64_t seed);

/// k-means over the user distance vectors.
ClusterAssignment cluster_users(const std::vector<UserDistanceVector>& vectors, std::size_t k, std::uint64_t seed,
                                std::size_t max_iter = 300);

/// clusters.json: {method, k, seed, assignments: {user: cluster}} plus
/// centroids and inertia when present.
void to_json(nlohmann::json& j, const ClusterAssignment& a);
void from_json(const nlohmann::json& j, ClusterAssignment& a);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace harlab::clustering
