#pragma once

// Weight-space proximity matrices, agglomerative hierarchical clustering,
// newcomer assignment and clustering scores.

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "fedclust/nn.hpp"

namespace fedclust::clustering {

/// Symmetric m x m matrix of pairwise Euclidean distances.
class ProximityMatrix {
 public:
  ProximityMatrix() = default;
  /// Adopts `entries`; throws ShapeError unless square, symmetric, zero on the
  /// diagonal and nonnegative.
  explicit ProximityMatrix(Eigen::MatrixXd entries);

  std::size_t size() const { return static_cast<std::size_t>(entries_.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Eigen::MatrixXd& entries() const { return entries_; }

 private:
  Eigen::MatrixXd entries_;
};

enum class Linkage { Single, Complete, Average };

struct FixedK {
  std::size_t k = 1;
};
struct DistanceThreshold {
  double tau = 1.0;
};
struct LargestGap {};

using CutCriterion = std::variant<FixedK, DistanceThreshold, LargestGap>;

struct Merge {
  std::size_t left = 0;   // smaller node id
  std::size_t right = 0;  // larger node id
  double distance = 0.0;
  std::size_t node = 0;   // id of the merged node; leaves are 0..m-1
};

struct Dendrogram {
  std::size_t num_leaves = 0;
  std::vector<Merge> merges;
};

/// Flat clustering indexed by client position. Cluster ids are contiguous from
/// 0 and numbered in order of each cluster's smallest member.
struct ClusterAssignment {
  std::vector<std::size_t> labels;
  std::size_t num_clusters = 0;

  std::size_t size() const { return labels.size(); }
  std::vector<std::vector<std::size_t>> members() const;
  bool operator==(const ClusterAssignment&) const = default;
};

/// Renumbers arbitrary labels into canonical form (first-appearance order).
ClusterAssignment canonicalize(std::span<const std::size_t> raw_labels);

/// Pairwise Euclidean distances between equal-length vectors.
ProximityMatrix proximity_matrix(std::span<const Eigen::VectorXd> vectors);

/// proximity_matrix over flatten_layer(model, layer_index) of every model.
ProximityMatrix per_layer_proximity(std::span<const nn::Model> models, std::size_t layer_index);

/// Full merge tree. Ties on distance go to the smallest (left id, right id).
Dendrogram build_dendrogram(const ProximityMatrix& matrix, Linkage linkage);

/// Flat clustering from a dendrogram under the given cut.
ClusterAssignment cut_dendrogram(const Dendrogram& dendrogram, const CutCriterion& cut);

struct HierarchicalResult {
  ClusterAssignment assignment;
  Dendrogram dendrogram;
};

HierarchicalResult agglomerative_cluster(const ProximityMatrix& matrix, Linkage linkage,
                                         const CutCriterion& cut);

enum class NewcomerRule { Centroid, NearestMember };

/// Cluster whose representative (member centroid, or nearest single member) is
/// closest to `vector`; ties go to the smallest cluster id.
std::size_t assign_newcomer(const Eigen::VectorXd& vector,
                            const std::map<std::size_t, std::vector<Eigen::VectorXd>>& members,
                            NewcomerRule rule = NewcomerRule::Centroid);

/// Chance-corrected pair-counting agreement; 1.0 for identical partitions.
double adjusted_rand_index(const ClusterAssignment& a, const ClusterAssignment& b);

/// mean(inter-group distance) / mean(intra-group distance) over client pairs.
double block_contrast(const ProximityMatrix& matrix, std::span<const std::size_t> groups);

Linkage parse_linkage(std::string_view name);
std::string_view to_string(Linkage linkage);

}  // namespace fedclust::clustering
