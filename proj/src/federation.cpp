#include "fedclust/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "fedclust/errors.hpp"
#include "fedclust/random.hpp"

namespace fedclust::federation {

namespace {

template <typename Fn>
void for_each_index(std::size_t n, bool parallel, Fn&& fn) {
  const std::size_t workers =
      parallel ? std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency())) : 1;
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::size_t final_layer(const nn::Model& model, const ClusteringKnobs& knobs) {
  return knobs.layer_index.value_or(model.num_layers() - 1);
}

/// Metrics of `model` over the members at `positions`.
RoundRecord measure(const nn::Model& model, std::span<const ClientRecord> clients,
                    std::span<const std::size_t> positions, const FederatedData& fed,
                    std::size_t round, std::size_t cluster_id) {
  RoundRecord rec;
  rec.round = round;
  rec.cluster_id = cluster_id;
  rec.num_clients = positions.size();

  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  for (std::size_t p : positions) {
    const auto& c = clients[p];
    train_rows.insert(train_rows.end(), c.shard.indices.begin(), c.shard.indices.end());
    test_rows.insert(test_rows.end(), c.local_test.indices.begin(), c.local_test.indices.end());
  }
  rec.train_samples = train_rows.size();
  rec.train_loss = evaluate(model, fed.pool, train_rows).mean_loss;
  rec.test_acc_global = evaluate(model, fed.global_test).accuracy;
  if (test_rows.empty()) {
    rec.test_acc_local = std::numeric_limits<double>::quiet_NaN();
  } else {
    const auto local = evaluate(model, fed.pool, test_rows);
    rec.test_acc_local = local.accuracy;
    rec.local_test_samples = local.samples;
    rec.local_test_correct = local.correct;
  }
  return rec;
}

/// Seeded subset of `members` (sorted) of size ceil(fraction * |members|).
std::vector<std::size_t> sample_participants(std::vector<std::size_t> members, double fraction,
                                             std::uint64_t seed, std::size_t cluster_id,
                                             std::size_t round) {
  if (fraction >= 1.0 || members.size() <= 1) return members;
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size()))));
  Rng rng(derive_seed(seed, {stream::kParticipation, cluster_id, round}));
  fisher_yates(members, rng);
  members.resize(count);
  std::sort(members.begin(), members.end());
  return members;
}

struct GroupJob {
  std::size_t cluster_id = 0;
  const nn::Model* start = nullptr;
  std::vector<std::size_t> participants;
};

/// Trains every participant of every group, then aggregates per group in
/// participant order. Returns the new model per group.
std::vector<nn::Model> train_and_aggregate(const std::vector<GroupJob>& jobs,
                                           std::span<const ClientRecord> clients,
                                           const FederatedData& fed, const RoundConfig& cfg,
                                           std::size_t epochs, std::size_t round, bool proximal,
                                           std::vector<std::pair<std::size_t, nn::Model>>* trained) {
  struct Task {
    std::size_t job;
    std::size_t position;
  };
  std::vector<Task> tasks;
  for (std::size_t j = 0; j < jobs.size(); ++j)
    for (std::size_t p : jobs[j].participants) tasks.push_back({j, p});

  std::vector<nn::Model> results(tasks.size());
  for_each_index(tasks.size(), cfg.parallel, [&](std::size_t t) {
    const auto& job = jobs[tasks[t].job];
    results[t] = train_client(*job.start, fed, clients[tasks[t].position], cfg, epochs, round,
                              proximal ? job.start : nullptr);
  });

  std::vector<nn::Model> aggregated;
  aggregated.reserve(jobs.size());
  std::size_t t = 0;
  for (const auto& job : jobs) {
    std::vector<std::pair<nn::Model, std::size_t>> updates;
    AggregationEvent event{round, job.cluster_id, {}};
    for (std::size_t p : job.participants) {
      updates.emplace_back(results[t], clients[p].shard.n());
      event.clients.push_back(clients[p].client_id);
      if (trained) trained->emplace_back(p, std::move(results[t]));
      ++t;
    }
    if (cfg.on_aggregate) cfg.on_aggregate(event);
    aggregated.push_back(fedavg_aggregate(updates));
  }
  return aggregated;
}

void check_clients(std::span<const ClientRecord> clients) {
  if (clients.empty()) throw ConfigError("federation needs at least one client");
  for (const auto& c : clients)
    if (c.shard.indices.empty())
      throw DataError("client " + std::to_string(c.client_id) + " has an empty training shard");
}

ExperimentReport run_global_rounds(const nn::Model& initial_model,
                                   std::span<const ClientRecord> clients,
                                   const FederatedData& fed, const RoundConfig& cfg, bool proximal,
                                   nn::Model* final_model) {
  cfg.validate();
  check_clients(clients);
  initial_model.validate();
  RoundConfig local_cfg = cfg;
  if (!proximal) local_cfg.train.prox_mu = 0.0;

  std::vector<std::size_t> everyone(clients.size());
  std::iota(everyone.begin(), everyone.end(), std::size_t{0});

  ExperimentReport report;
  nn::Model global = initial_model;
  for (std::size_t round = 1; round <= cfg.total_rounds; ++round) {
    GroupJob job{0, &global,
                 sample_participants(everyone, cfg.participation_fraction, cfg.seed, 0, round)};
    auto next = train_and_aggregate({job}, clients, fed, local_cfg, cfg.per_round_epochs, round,
                                    proximal, nullptr);
    global = std::move(next.front());
    report.records.push_back(measure(global, clients, everyone, fed, round, 0));
  }
  if (final_model) *final_model = global;
  return report;
}

}  // namespace

void RoundConfig::validate() const {
  if (total_rounds < 1) throw ConfigError("total_rounds must be >= 1");
  if (!(participation_fraction > 0.0 && participation_fraction <= 1.0))
    throw ConfigError("participation_fraction must lie in (0, 1]");
  train.validate();
}

std::vector<RoundRecord> ExperimentReport::final_round() const {
  std::vector<RoundRecord> out;
  if (records.empty()) return out;
  const std::size_t last = records.back().round;
  for (const auto& r : records)
    if (r.round == last) out.push_back(r);
  return out;
}

double ExperimentReport::final_local_accuracy() const {
  std::size_t correct = 0;
  std::size_t samples = 0;
  for (const auto& r : final_round()) {
    correct += r.local_test_correct;
    samples += r.local_test_samples;
  }
  return samples == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(correct) / static_cast<double>(samples);
}

double ExperimentReport::final_global_accuracy() const {
  double weighted = 0.0;
  std::size_t total = 0;
  for (const auto& r : final_round()) {
    weighted += r.test_acc_global * static_cast<double>(r.train_samples);
    total += r.train_samples;
  }
  return total == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : weighted / static_cast<double>(total);
}

nn::Model fedavg_aggregate(std::span<const std::pair<nn::Model, std::size_t>> updates) {
  if (updates.empty()) throw AggregationError("cannot aggregate an empty update list");
  const nn::Model& first = updates.front().first;
  double total = 0.0;
  for (const auto& [model, n] : updates) {
    if (!model.same_shape(first)) throw AggregationError("updates differ in architecture");
    if (n < 1) throw AggregationError("every update needs n_i >= 1");
    total += static_cast<double>(n);
  }

  // theta_1 + sum_{i>1} w_i (theta_i - theta_1): identical inputs come back bit-exact
  nn::Model out = first;
  for (std::size_t i = 1; i < updates.size(); ++i) {
    const double w = static_cast<double>(updates[i].second) / total;
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
      out.layers[k].weights += w * (updates[i].first.layers[k].weights - first.layers[k].weights);
      out.layers[k].biases += w * (updates[i].first.layers[k].biases - first.layers[k].biases);
    }
  }
  if (updates.size() > 1) {
    // rounding can step outside the convex hull by an ulp
    for (std::size_t k = 0; k < out.layers.size(); ++k) {
      nn::Layer lo = first.layers[k];
      nn::Layer hi = first.layers[k];
      for (const auto& [model, n] : updates) {
        lo.weights = lo.weights.cwiseMin(model.layers[k].weights);
        hi.weights = hi.weights.cwiseMax(model.layers[k].weights);
        lo.biases = lo.biases.cwiseMin(model.layers[k].biases);
        hi.biases = hi.biases.cwiseMax(model.layers[k].biases);
      }
      out.layers[k].weights = out.layers[k].weights.cwiseMax(lo.weights).cwiseMin(hi.weights);
      out.layers[k].biases = out.layers[k].biases.cwiseMax(lo.biases).cwiseMin(hi.biases);
    }
  }
  return out;
}

Evaluation evaluate(const nn::Model& model, const data::LabeledDataset& dataset,
                    std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("cannot evaluate on an empty test set");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), dataset.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= dataset.size()) throw DataError("evaluation row out of range");
    x.row(static_cast<Eigen::Index>(i)) = dataset.features.row(static_cast<Eigen::Index>(rows[i]));
  }
  const Eigen::MatrixXd logits = nn::forward(model, x);
  const auto predicted = nn::argmax_rows(logits);

  Evaluation ev;
  ev.samples = rows.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int y = dataset.labels[rows[i]];
    if (y < 0 || y >= logits.cols()) throw DataError("label out of range for model");
    if (predicted[i] == y) ++ev.correct;
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const double mx = row.maxCoeff();
    loss += std::log((row.array() - mx).exp().sum()) + mx - row(y);
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.samples);
  ev.mean_loss = loss / static_cast<double>(ev.samples);
  return ev;
}

Evaluation evaluate(const nn::Model& model, const data::LabeledDataset& testset) {
  std::vector<std::size_t> rows(testset.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return evaluate(model, testset, rows);
}

nn::Model train_client(const nn::Model& start, const FederatedData& fed,
                       const ClientRecord& client, const RoundConfig& cfg, std::size_t epochs,
                       std::size_t round, const nn::Model* anchor) {
  nn::TrainConfig tc = cfg.train;
  tc.local_epochs = epochs;
  tc.seed = derive_seed(cfg.seed, {stream::kLocalTrain, client.client_id, round});
  return nn::local_train(start, fed.pool.features, std::span<const int>(fed.pool.labels),
                         std::span<const std::size_t>(client.shard.indices), tc, anchor);
}

ServerState make_server(nn::Model initial_model) {
  initial_model.validate();
  ServerState s;
  s.global_model = std::move(initial_model);
  return s;
}

ClusteringOutcome one_shot_clustering_round(ServerState& server, std::span<ClientRecord> clients,
                                            const FederatedData& fed, const RoundConfig& cfg,
                                            const ClusteringKnobs& knobs) {
  if (server.assignment) throw StateError("server is already clustered; reset before re-clustering");
  cfg.validate();
  check_clients(clients);
  const std::size_t layer = final_layer(server.global_model, knobs);
  if (layer >= server.global_model.num_layers())
    throw ConfigError("clustering layer_index out of range");

  const std::size_t round = 1;
  RoundConfig local_cfg = cfg;
  local_cfg.train.prox_mu = 0.0;

  // broadcast + local training
  for_each_index(clients.size(), cfg.parallel, [&](std::size_t i) {
    clients[i].local_model = train_client(server.global_model, fed, clients[i], local_cfg,
                                          cfg.clustering_round_epochs, round);
  });

  // the single upload of weight vectors onto the clustering path
  std::vector<Eigen::VectorXd> uploads;
  uploads.reserve(clients.size());
  for (const auto& c : clients) uploads.push_back(nn::flatten_layer(c.local_model, layer));
  ++server.clustering_uploads;

  ClusteringOutcome out;
  out.proximity = clustering::proximity_matrix(uploads);
  auto hc = clustering::agglomerative_cluster(out.proximity, knobs.linkage, knobs.cut);
  out.assignment = std::move(hc.assignment);
  out.dendrogram = std::move(hc.dendrogram);

  const auto groups = out.assignment.members();
  for (std::size_t c = 0; c < groups.size(); ++c) {
    std::vector<std::pair<nn::Model, std::size_t>> updates;
    AggregationEvent event{round, c, {}};
    for (std::size_t p : groups[c]) {
      updates.emplace_back(clients[p].local_model, clients[p].shard.n());
      event.clients.push_back(clients[p].client_id);
      clients[p].cluster = c;
      server.weight_registry[c].push_back(uploads[p]);
    }
    if (cfg.on_aggregate) cfg.on_aggregate(event);
    server.cluster_models[c] = fedavg_aggregate(updates);
    out.records.push_back(measure(server.cluster_models[c], clients, groups[c], fed, round, c));
  }
  server.assignment = out.assignment;
  server.round = round;
  return out;
}

ExperimentReport run_cluster_rounds(ServerState& server, std::span<ClientRecord> clients,
                                    const FederatedData& fed, const RoundConfig& cfg) {
  if (!server.assignment) throw StateError("run_cluster_rounds requires a clustered server");
  cfg.validate();
  if (server.assignment->size() != clients.size())
    throw StateError("client list does not match the clustered population");
  const auto groups = server.assignment->members();
  RoundConfig local_cfg = cfg;
  local_cfg.train.prox_mu = 0.0;

  ExperimentReport report;
  for (std::size_t round = server.round + 1; round <= cfg.total_rounds; ++round) {
    std::vector<GroupJob> jobs;
    for (std::size_t c = 0; c < groups.size(); ++c)
      jobs.push_back({c, &server.cluster_models.at(c),
                      sample_participants(groups[c], cfg.participation_fraction, cfg.seed, c,
                                          round)});
    std::vector<std::pair<std::size_t, nn::Model>> trained;
    auto next = train_and_aggregate(jobs, clients, fed, local_cfg, cfg.per_round_epochs, round,
                                    false, &trained);
    for (auto& [p, model] : trained) clients[p].local_model = std::move(model);
    for (std::size_t c = 0; c < groups.size(); ++c) {
      server.cluster_models[c] = std::move(next[c]);
      report.records.push_back(
          measure(server.cluster_models[c], clients, groups[c], fed, round, c));
    }
    server.round = round;
  }
  report.assignment = server.assignment;
  report.clustering_uploads = server.clustering_uploads;
  return report;
}

FedClustResult run_fedclust(const nn::Model& initial_model, std::vector<ClientRecord> clients,
                            const FederatedData& fed, const RoundConfig& cfg,
                            const ClusteringKnobs& knobs) {
  FedClustResult result;
  result.server = make_server(initial_model);
  result.clients = std::move(clients);
  auto outcome = one_shot_clustering_round(result.server, result.clients, fed, cfg, knobs);
  auto rest = run_cluster_rounds(result.server, result.clients, fed, cfg);

  result.report.records = std::move(outcome.records);
  result.report.records.insert(result.report.records.end(), rest.records.begin(),
                               rest.records.end());
  result.report.assignment = outcome.assignment;
  result.report.proximity = std::move(outcome.proximity);
  result.report.clustering_uploads = result.server.clustering_uploads;
  result.dendrogram = std::move(outcome.dendrogram);
  return result;
}

ExperimentReport run_fedavg(const nn::Model& initial_model, std::span<const ClientRecord> clients,
                            const FederatedData& fed, const RoundConfig& cfg,
                            nn::Model* final_model) {
  return run_global_rounds(initial_model, clients, fed, cfg, false, final_model);
}

ExperimentReport run_fedprox(const nn::Model& initial_model,
                             std::span<const ClientRecord> clients, const FederatedData& fed,
                             const RoundConfig& cfg, nn::Model* final_model) {
  auto report = run_global_rounds(initial_model, clients, fed, cfg, true, final_model);
  if (cfg.train.prox_mu == 0.0)
    report.warnings.emplace_back("fedprox with prox_mu = 0 is identical to fedavg");
  return report;
}

NewcomerOutcome accommodate_newcomer(ServerState& server, ClientRecord& newcomer,
                                     const FederatedData& fed, const RoundConfig& cfg,
                                     const ClusteringKnobs& knobs, clustering::NewcomerRule rule) {
  if (!server.assignment) throw StateError("newcomers can only join a clustered server");
  if (newcomer.cluster) throw StateError("newcomer already belongs to a cluster");
  if (newcomer.shard.indices.empty()) throw DataError("newcomer has an empty training shard");
  cfg.validate();

  RoundConfig local_cfg = cfg;
  local_cfg.train.prox_mu = 0.0;
  const nn::Model trained = train_client(server.global_model, fed, newcomer, local_cfg,
                                         cfg.clustering_round_epochs, 1);
  Eigen::VectorXd vec = nn::flatten_layer(trained, final_layer(server.global_model, knobs));
  ++server.newcomer_uploads;

  const std::size_t cluster_id = clustering::assign_newcomer(vec, server.weight_registry, rule);
  server.weight_registry[cluster_id].push_back(std::move(vec));
  newcomer.cluster = cluster_id;
  newcomer.local_model = server.cluster_models.at(cluster_id);
  return {cluster_id, newcomer.local_model};
}

std::vector<ClientRecord> make_clients(const data::LabeledDataset& pool,
                                       const std::vector<data::ClientShard>& shards,
                                       double local_test_fraction, std::uint64_t seed) {
  std::vector<ClientRecord> clients;
  clients.reserve(shards.size());
  for (const auto& shard : shards) {
    ClientRecord rec;
    rec.client_id = shard.client_id;
    rec.shard.client_id = shard.client_id;
    rec.local_test.client_id = shard.client_id;
    if (local_test_fraction > 0.0 && shard.n() >= 2) {
      auto [train, test] = data::stratified_split_indices(
          pool.labels, shard.indices, local_test_fraction,
          derive_seed(seed, {stream::kLocalSplit, shard.client_id}));
      if (train.empty()) {
        train.push_back(test.back());
        test.pop_back();
      }
      rec.shard.indices = std::move(train);
      rec.local_test.indices = std::move(test);
    } else {
      rec.shard.indices = shard.indices;
    }
    clients.push_back(std::move(rec));
  }
  return clients;
}

}  // namespace fedclust::federation
