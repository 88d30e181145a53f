#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <utility>
#include <vector>

namespace fedclust::data {

using ClientId = std::size_t;

/// Row-per-sample feature matrix with integer class labels.
struct LabeledDataset {
  Eigen::MatrixXd features;  // [n x dim]
  std::vector<int> labels;   // [n], each in [0, num_classes)
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Throws DataError when the invariants do not hold.
  void validate() const;

  /// Rows `indices` as a standalone dataset (same num_classes).
  LabeledDataset subset(const std::vector<std::size_t>& indices) const;

  /// Sample count per class id.
  std::vector<std::size_t> class_counts() const;
};

/// A client's slice of a LabeledDataset, by row index.
struct ClientShard {
  ClientId client_id = 0;
  std::vector<std::size_t> indices;

  std::size_t n() const { return indices.size(); }
};

/// Known client grouping for label-shard partitions.
struct PartitionGroundTruth {
  std::map<ClientId, std::size_t> client_to_group;
};

/// One label-shard group: which clients, and which classes they split.
struct ShardGroup {
  std::vector<ClientId> clients;
  std::set<int> classes;
};

/// Balanced Gaussian blobs, one isotropic blob of std `spread` per class
/// around a center drawn uniformly from [-1, 1]^dim.
LabeledDataset synth_blobs(int num_classes, Eigen::Index dim, std::size_t samples_per_class,
                           double spread, std::uint64_t seed);

/// Dirichlet(alpha, ..., alpha) draw of length `k` via normalized gamma variates.
std::vector<double> sample_dirichlet(double alpha, std::size_t k, std::uint64_t seed);

/// Largest-remainder apportionment of `total` items by `proportions`
/// (ties in remainder go to the smaller index).
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& proportions);

/// Per-class Dirichlet split across clients 0..num_clients-1. Empty shards are
/// repaired by moving one sample from the currently largest shard.
std::vector<ClientShard> dirichlet_partition(const LabeledDataset& dataset,
                                             std::size_t num_clients, double alpha,
                                             std::uint64_t seed);

/// Uniform random split of all samples into near-equal shards.
std::vector<ClientShard> iid_partition(const LabeledDataset& dataset, std::size_t num_clients,
                                       std::uint64_t seed);

struct LabelShardResult {
  std::vector<ClientShard> shards;  // ordered by client id
  PartitionGroundTruth ground_truth;
};

/// Each group's clients split that group's class samples as evenly as possible.
LabelShardResult label_shard_partition(const LabeledDataset& dataset,
                                       const std::vector<ShardGroup>& groups,
                                       std::uint64_t seed);

/// Stratified split of row indices: per class, round(test_fraction * n_c) go to test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    const std::vector<int>& labels, const std::vector<std::size_t>& indices,
    double test_fraction, std::uint64_t seed);

/// Seeded stratified train/test split of a whole dataset.
std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& dataset,
                                                           double test_fraction,
                                                           std::uint64_t seed);

/// Loads a CSV with header `f0,...,f{dim-1},label`.
LabeledDataset load_csv(const std::filesystem::path& path);

/// Checks that shards are pairwise disjoint and cover [0, n) exactly.
bool is_exact_cover(const std::vector<ClientShard>& shards, std::size_t n);

}  // namespace fedclust::data
