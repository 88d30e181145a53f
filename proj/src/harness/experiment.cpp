#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fedclust/errors.hpp"
#include "fedclust/harness.hpp"
#include "fedclust/io.hpp"
#include "fedclust/random.hpp"

namespace fedclust::harness {

using nlohmann::json;

PreparedExperiment prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  const data::LabeledDataset full =
      cfg.dataset.source == "csv"
          ? data::load_csv(cfg.dataset.csv_path)
          : data::synth_blobs(cfg.dataset.num_classes, cfg.dataset.dim,
                              cfg.dataset.samples_per_class, cfg.dataset.spread, cfg.seed);

  PreparedExperiment prep;
  auto [pool, test] = data::train_test_split(full, cfg.dataset.test_fraction, cfg.seed);
  prep.fed.pool = std::move(pool);
  prep.fed.global_test = std::move(test);

  std::vector<data::ClientShard> shards;
  const auto& part = cfg.partition;
  if (part.scheme == "dirichlet") {
    shards = data::dirichlet_partition(prep.fed.pool, part.num_clients, part.alpha, cfg.seed);
  } else if (part.scheme == "iid") {
    shards = data::iid_partition(prep.fed.pool, part.num_clients, cfg.seed);
  } else {
    auto result = data::label_shard_partition(prep.fed.pool, part.groups, cfg.seed);
    shards = std::move(result.shards);
    std::vector<std::size_t> groups;
    for (const auto& s : shards) groups.push_back(result.ground_truth.client_to_group.at(s.client_id));
    prep.ground_truth = clustering::canonicalize(groups);
  }
  prep.clients =
      federation::make_clients(prep.fed.pool, shards, cfg.dataset.local_test_fraction, cfg.seed);
  for (const auto& c : prep.clients)
    if (c.shard.indices.empty())
      throw DataError(fmt::format("client {} received no training samples", c.client_id));

  const auto dims = cfg.layer_dims(prep.fed.pool.dim(), prep.fed.pool.num_classes);
  prep.initial_model = nn::init_model<double>(std::span<const Eigen::Index>(dims),
                                              derive_seed(cfg.seed, {stream::kModelInit}),
                                              cfg.activation);
  return prep;
}

std::vector<LayerMatrix> layer_analysis(const PreparedExperiment& prepared,
                                        const ExperimentConfig& cfg) {
  const auto& rc = cfg.rounds;
  std::vector<nn::Model> models(prepared.clients.size());
  for (std::size_t i = 0; i < prepared.clients.size(); ++i)
    models[i] = federation::train_client(prepared.initial_model, prepared.fed,
                                         prepared.clients[i], rc, rc.clustering_round_epochs, 1);
  std::vector<LayerMatrix> out;
  for (std::size_t layer = 0; layer < prepared.initial_model.num_layers(); ++layer) {
    LayerMatrix lm;
    lm.layer_index = layer;
    lm.matrix = clustering::per_layer_proximity(models, layer);
    if (prepared.ground_truth && prepared.ground_truth->num_clusters > 1)
      lm.block_contrast = clustering::block_contrast(lm.matrix, prepared.ground_truth->labels);
    out.push_back(std::move(lm));
  }
  return out;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  auto prepared = prepare(cfg);
  federation::RoundConfig rc = cfg.rounds;
  rc.seed = cfg.seed;
  rc.parallel = cfg.parallel;

  RunResult result;
  switch (cfg.method) {
    case Method::FedClust: {
      auto run = federation::run_fedclust(prepared.initial_model, std::move(prepared.clients),
                                          prepared.fed, rc, cfg.clustering);
      result.report = std::move(run.report);
      LayerMatrix lm;
      lm.layer_index =
          cfg.clustering.layer_index.value_or(prepared.initial_model.num_layers() - 1);
      lm.matrix = *result.report.proximity;
      if (prepared.ground_truth && prepared.ground_truth->num_clusters > 1)
        lm.block_contrast = clustering::block_contrast(lm.matrix, prepared.ground_truth->labels);
      result.layers.push_back(std::move(lm));
      if (prepared.ground_truth)
        result.ari = clustering::adjusted_rand_index(*result.report.assignment,
                                                     *prepared.ground_truth);
      break;
    }
    case Method::FedAvg:
      result.report = federation::run_fedavg(prepared.initial_model, prepared.clients,
                                             prepared.fed, rc);
      break;
    case Method::FedProx:
      result.report = federation::run_fedprox(prepared.initial_model, prepared.clients,
                                              prepared.fed, rc);
      break;
    case Method::LayerAnalysis:
      result.layers = layer_analysis(prepared, cfg);
      break;
  }
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

namespace {

std::string fmt_metric(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.10g}", v);
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace

std::string metrics_csv(const federation::ExperimentReport& report) {
  std::string out = "round,cluster_id,train_loss,test_acc_global,test_acc_local,num_clients\n";
  for (const auto& r : report.records)
    out += fmt::format("{},{},{},{},{},{}\n", r.round, r.cluster_id, fmt_metric(r.train_loss),
                       fmt_metric(r.test_acc_global), fmt_metric(r.test_acc_local),
                       r.num_clients);
  return out;
}

void write_outputs(const ExperimentConfig& cfg, const RunResult& result,
                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream csv(out_dir / "metrics.csv", std::ios::binary);
    if (!csv) throw Error("cannot write " + (out_dir / "metrics.csv").string());
    csv << metrics_csv(result.report);
  }

  json report;
  report["name"] = cfg.name;
  report["method"] = to_string(cfg.method);
  report["seed"] = cfg.seed;
  report["config_ini"] = cfg.to_ini();
  report["wall_clock_seconds"] = result.wall_clock_seconds;
  report["clustering_uploads"] = result.report.clustering_uploads;
  report["warnings"] = result.report.warnings;
  if (!result.report.records.empty()) {
    report["final_local_accuracy"] = number_or_null(result.report.final_local_accuracy());
    report["final_global_accuracy"] = number_or_null(result.report.final_global_accuracy());
  }
  if (result.report.assignment) {
    report["final_assignment"] = result.report.assignment->labels;
    report["num_clusters"] = result.report.assignment->num_clusters;
  }
  if (result.ari) report["ari_vs_ground_truth"] = *result.ari;

  json records = json::array();
  for (const auto& r : result.report.records)
    records.push_back({{"round", r.round},
                       {"cluster_id", r.cluster_id},
                       {"train_loss", r.train_loss},
                       {"test_acc_global", r.test_acc_global},
                       {"test_acc_local", number_or_null(r.test_acc_local)},
                       {"num_clients", r.num_clients},
                       {"train_samples", r.train_samples},
                       {"local_test_samples", r.local_test_samples}});
  report["records"] = std::move(records);

  json layers = json::array();
  for (const auto& lm : result.layers) {
    const auto stem = fmt::format("layer_{}", lm.layer_index);
    io::write_matrix_csv(lm.matrix.entries(), out_dir / (stem + ".csv"));
    io::export_heatmap(lm.matrix, out_dir / (stem + ".pgm"));
    json entry{{"layer_index", lm.layer_index}, {"csv", stem + ".csv"}, {"pgm", stem + ".pgm"}};
    if (lm.block_contrast) entry["block_contrast"] = *lm.block_contrast;
    layers.push_back(std::move(entry));
  }
  report["matrices"] = std::move(layers);

  std::ofstream out(out_dir / "report.json");
  if (!out) throw Error("cannot write " + (out_dir / "report.json").string());
  out << report.dump(2) << '\n';
}

ExperimentConfig config_from_report(const std::filesystem::path& report_path) {
  std::ifstream in(report_path);
  if (!in) throw ConfigError("cannot open report " + report_path.string());
  json report;
  try {
    in >> report;
  } catch (const json::exception& e) {
    throw ConfigError(report_path.string() + ": " + e.what());
  }
  if (!report.contains("config_ini")) throw ConfigError(report_path.string() + ": no config echo");
  return ExperimentConfig::parse_string(report["config_ini"].get<std::string>());
}

std::vector<ComparisonRow> compare(const std::vector<ExperimentConfig>& configs) {
  if (configs.size() < 2) throw ConfigError("compare needs at least two configs");
  const auto signature = configs.front().data_signature();
  for (const auto& c : configs) {
    if (c.data_signature() != signature)
      throw ConfigError("config '" + c.name + "' uses a different dataset or partition");
    if (c.seeds != configs.front().seeds)
      throw ConfigError("config '" + c.name + "' uses a different seed list");
    if (c.method == Method::LayerAnalysis)
      throw ConfigError("layer_analysis configs cannot be compared");
  }

  std::vector<ComparisonRow> rows;
  for (const auto& base : configs) {
    std::vector<double> local;
    std::vector<double> global;
    for (auto seed : base.seeds) {
      ExperimentConfig cfg = base;
      cfg.seed = seed;
      const auto result = run_experiment(cfg);
      local.push_back(result.report.final_local_accuracy());
      global.push_back(result.report.final_global_accuracy());
    }
    auto stats = [](const std::vector<double>& v) {
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      // sample standard deviation; a single seed reports 0
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      return std::pair{mean, sd};
    };
    ComparisonRow row;
    row.name = base.name;
    row.method = base.method;
    row.num_seeds = base.seeds.size();
    std::tie(row.local_mean, row.local_std) = stats(local);
    std::tie(row.global_mean, row.global_std) = stats(global);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string comparison_table(const std::vector<ComparisonRow>& rows) {
  std::string out = fmt::format("{:<24} {:<15} {:>6} {:>22} {:>22}\n", "config", "method",
                                "seeds", "local acc (%)", "global acc (%)");
  for (const auto& r : rows)
    out += fmt::format("{:<24} {:<15} {:>6} {:>14.2f} ± {:<5.2f} {:>14.2f} ± {:<5.2f}\n", r.name,
                       to_string(r.method), r.num_seeds, 100.0 * r.local_mean,
                       100.0 * r.local_std, 100.0 * r.global_mean, 100.0 * r.global_std);
  return out;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out =
      "config,method,num_seeds,final_acc_local_mean,final_acc_local_std,final_acc_global_mean,"
      "final_acc_global_std\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{},{}\n", r.name, to_string(r.method), r.num_seeds,
                       fmt_metric(r.local_mean), fmt_metric(r.local_std),
                       fmt_metric(r.global_mean), fmt_metric(r.global_std));
  return out;
}

}  // namespace fedclust::harness
