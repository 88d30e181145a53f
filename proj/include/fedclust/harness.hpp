#pragma once

// Experiment configuration, end-to-end runs and result files.
//
// Config files are INI: `[section]` headers followed by `key = value` lines,
// `;` or `#` comments. See configs/ for complete examples.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedclust/clustering.hpp"
#include "fedclust/data.hpp"
#include "fedclust/federation.hpp"
#include "fedclust/nn.hpp"

namespace fedclust::harness {

enum class Method { FedClust, FedAvg, FedProx, LayerAnalysis };

std::string to_string(Method method);

struct DatasetSpec {
  std::string source = "blobs";  // blobs | csv
  std::filesystem::path csv_path;
  int num_classes = 10;
  Eigen::Index dim = 16;
  std::size_t samples_per_class = 200;
  double spread = 1.0;
  double test_fraction = 0.2;
  double local_test_fraction = 0.25;
};

struct PartitionSpec {
  std::string scheme = "dirichlet";  // dirichlet | label_shard | iid
  std::size_t num_clients = 10;
  double alpha = 0.1;
  std::vector<data::ShardGroup> groups;  // label_shard only
};

struct ExperimentConfig {
  std::string name = "experiment";
  Method method = Method::FedClust;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // compare: one run per seed; defaults to {seed}
  bool parallel = false;

  DatasetSpec dataset;
  PartitionSpec partition;
  std::vector<Eigen::Index> hidden_dims{32};
  nn::Activation activation = nn::Activation::ReLU;
  federation::RoundConfig rounds;
  federation::ClusteringKnobs clustering;
  std::filesystem::path output_dir = "out";

  /// [input dim, hidden..., num_classes] once the dataset is known.
  std::vector<Eigen::Index> layer_dims(Eigen::Index input_dim, int num_classes) const;

  /// Cross-field consistency checks; throws ConfigError naming the field.
  void validate() const;

  /// Canonical INI text covering every field; parse(to_ini()) reproduces the config.
  std::string to_ini() const;

  /// Echo used to compare dataset/partition between configs.
  std::string data_signature() const;

  static ExperimentConfig parse(std::istream& in, const std::string& source_name,
                                const std::filesystem::path& base_dir = {});
  static ExperimentConfig parse_string(const std::string& text,
                                       const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// Dataset, clients and initial model, all derived from the config seed.
struct PreparedExperiment {
  federation::FederatedData fed;
  std::vector<federation::ClientRecord> clients;
  nn::Model initial_model;
  std::optional<clustering::ClusterAssignment> ground_truth;  // by client position
};

PreparedExperiment prepare(const ExperimentConfig& cfg);

struct LayerMatrix {
  std::size_t layer_index = 0;
  clustering::ProximityMatrix matrix;
  std::optional<double> block_contrast;  // with ground truth only
};

struct RunResult {
  federation::ExperimentReport report;
  std::optional<double> ari;  // vs ground truth
  std::vector<LayerMatrix> layers;  // layer_analysis: every layer; fedclust: the clustering layer
  double wall_clock_seconds = 0.0;
};

/// Runs the configured method in memory.
RunResult run_experiment(const ExperimentConfig& cfg);

/// Per-layer proximity after one broadcast + local-training round.
std::vector<LayerMatrix> layer_analysis(const PreparedExperiment& prepared,
                                        const ExperimentConfig& cfg);

/// Header `round,cluster_id,train_loss,test_acc_global,test_acc_local,num_clients`.
std::string metrics_csv(const federation::ExperimentReport& report);

/// Writes metrics.csv, report.json and, when present, proximity matrices.
void write_outputs(const ExperimentConfig& cfg, const RunResult& result,
                   const std::filesystem::path& out_dir);

/// Loads a report.json and rebuilds the config from its echo.
ExperimentConfig config_from_report(const std::filesystem::path& report_path);

struct ComparisonRow {
  std::string name;
  Method method = Method::FedAvg;
  std::size_t num_seeds = 0;
  double local_mean = 0.0;
  double local_std = 0.0;
  double global_mean = 0.0;
  double global_std = 0.0;
};

/// Runs each config once per configured seed. Configs must share dataset,
/// partition and seed list.
std::vector<ComparisonRow> compare(const std::vector<ExperimentConfig>& configs);

std::string comparison_table(const std::vector<ComparisonRow>& rows);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace fedclust::harness
