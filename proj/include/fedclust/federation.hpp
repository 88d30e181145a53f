#pragma once

// FedClust protocol simulation plus the FedAvg / FedProx baselines.
//
// Round numbering is 1-based. In a FedClust run round 1 is the clustering
// round: every client trains `clustering_round_epochs` from the broadcast
// model, uploads its final-layer vector once, the server clusters, and each
// cluster model starts as the FedAvg of its members' full local models.
// Rounds 2..total_rounds are per-cluster FedAvg rounds. Baselines run
// total_rounds ordinary rounds with `per_round_epochs`.
//
// Client RNG streams are derived from (seed, client id, round) so parallel and
// sequential execution produce identical models.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedclust/clustering.hpp"
#include "fedclust/data.hpp"
#include "fedclust/nn.hpp"

namespace fedclust::federation {

using data::ClientId;

/// Data visible to the simulation: every client shard indexes `pool`.
struct FederatedData {
  data::LabeledDataset pool;
  data::LabeledDataset global_test;
};

struct ClientRecord {
  ClientId client_id = 0;
  data::ClientShard shard;       // local training rows of FederatedData::pool
  data::ClientShard local_test;  // local held-out rows (may be empty)
  std::optional<std::size_t> cluster;
  nn::Model local_model;
};

/// Emitted once per aggregation: which clients were mixed into which model.
struct AggregationEvent {
  std::size_t round = 0;
  std::size_t cluster_id = 0;
  std::vector<ClientId> clients;
};

struct RoundConfig {
  std::size_t total_rounds = 30;
  std::size_t clustering_round_epochs = 5;
  std::size_t per_round_epochs = 1;
  double participation_fraction = 1.0;
  nn::TrainConfig train;  // local_epochs and seed are overridden per call
  std::uint64_t seed = 0;
  bool parallel = false;
  std::function<void(const AggregationEvent&)> on_aggregate;

  void validate() const;
};

struct ServerState {
  nn::Model global_model;  // the broadcast, pre-clustering model
  std::map<std::size_t, nn::Model> cluster_models;
  std::optional<clustering::ClusterAssignment> assignment;
  std::map<std::size_t, std::vector<Eigen::VectorXd>> weight_registry;
  std::size_t round = 0;
  std::size_t clustering_uploads = 0;  // weight-vector upload events on the clustering path
  std::size_t newcomer_uploads = 0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::size_t cluster_id = 0;
  double train_loss = 0.0;
  double test_acc_global = 0.0;
  double test_acc_local = 0.0;  // NaN when no member has local test data
  std::size_t num_clients = 0;
  std::size_t train_samples = 0;
  std::size_t local_test_samples = 0;
  std::size_t local_test_correct = 0;

  bool operator==(const RoundRecord&) const = default;
};

struct ExperimentReport {
  std::vector<RoundRecord> records;
  std::optional<clustering::ClusterAssignment> assignment;
  std::optional<clustering::ProximityMatrix> proximity;
  std::size_t clustering_uploads = 0;
  std::vector<std::string> warnings;

  /// Records for the last round present.
  std::vector<RoundRecord> final_round() const;
  /// Sample-weighted local test accuracy over all clusters in the last round.
  double final_local_accuracy() const;
  /// Client-weighted global test accuracy over clusters in the last round.
  double final_global_accuracy() const;
};

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::size_t samples = 0;
};

/// Every parameter becomes sum_i (n_i / N) * theta_i.
nn::Model fedavg_aggregate(std::span<const std::pair<nn::Model, std::size_t>> updates);

/// Argmax accuracy (ties to the smallest class) and mean cross-entropy.
Evaluation evaluate(const nn::Model& model, const data::LabeledDataset& testset);
Evaluation evaluate(const nn::Model& model, const data::LabeledDataset& dataset,
                    std::span<const std::size_t> rows);

/// Local training of one client shard for a given round.
nn::Model train_client(const nn::Model& start, const FederatedData& fed,
                       const ClientRecord& client, const RoundConfig& cfg, std::size_t epochs,
                       std::size_t round, const nn::Model* anchor = nullptr);

/// Fresh server state around an initial global model.
ServerState make_server(nn::Model initial_model);

struct ClusteringOutcome {
  clustering::ClusterAssignment assignment;
  clustering::ProximityMatrix proximity;
  clustering::Dendrogram dendrogram;
  std::vector<RoundRecord> records;  // round-1 metrics, one per cluster
};

struct ClusteringKnobs {
  clustering::Linkage linkage = clustering::Linkage::Average;
  clustering::CutCriterion cut = clustering::LargestGap{};
  std::optional<std::size_t> layer_index;  // default: final layer
};

/// Round 1 of FedClust. Mutates `server` and every client's cluster/local model.
ClusteringOutcome one_shot_clustering_round(ServerState& server, std::span<ClientRecord> clients,
                                            const FederatedData& fed, const RoundConfig& cfg,
                                            const ClusteringKnobs& knobs);

/// Per-cluster FedAvg for rounds server.round+1 .. cfg.total_rounds.
ExperimentReport run_cluster_rounds(ServerState& server, std::span<ClientRecord> clients,
                                    const FederatedData& fed, const RoundConfig& cfg);

struct FedClustResult {
  ServerState server;
  std::vector<ClientRecord> clients;
  ExperimentReport report;
  clustering::Dendrogram dendrogram;
};

/// Clustering round followed by per-cluster rounds; report covers all rounds.
FedClustResult run_fedclust(const nn::Model& initial_model, std::vector<ClientRecord> clients,
                            const FederatedData& fed, const RoundConfig& cfg,
                            const ClusteringKnobs& knobs);

ExperimentReport run_fedavg(const nn::Model& initial_model, std::span<const ClientRecord> clients,
                            const FederatedData& fed, const RoundConfig& cfg,
                            nn::Model* final_model = nullptr);

/// FedAvg with the proximal term anchored at each round's global model.
/// cfg.train.prox_mu == 0 is accepted and degenerates to FedAvg.
ExperimentReport run_fedprox(const nn::Model& initial_model,
                             std::span<const ClientRecord> clients, const FederatedData& fed,
                             const RoundConfig& cfg, nn::Model* final_model = nullptr);

struct NewcomerOutcome {
  std::size_t cluster_id = 0;
  nn::Model model;
};

/// Trains the newcomer from the broadcast model for clustering_round_epochs,
/// assigns it by nearest registry centroid, and registers its vector.
NewcomerOutcome accommodate_newcomer(ServerState& server, ClientRecord& newcomer,
                                     const FederatedData& fed, const RoundConfig& cfg,
                                     const ClusteringKnobs& knobs = {},
                                     clustering::NewcomerRule rule =
                                         clustering::NewcomerRule::Centroid);

/// Client records from shards, with a stratified local test split of each shard
/// when local_test_fraction > 0.
std::vector<ClientRecord> make_clients(const data::LabeledDataset& pool,
                                       const std::vector<data::ClientShard>& shards,
                                       double local_test_fraction, std::uint64_t seed);

}  // namespace fedclust::federation
