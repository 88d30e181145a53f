#include "fedclust/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "fedclust/errors.hpp"
#include "fedclust/random.hpp"

namespace fedclust::data {

void LabeledDataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (num_classes < 1) throw DataError("num_classes must be >= 1");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DataError("feature rows and label count differ");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw DataError("label " + std::to_string(y) + " out of range");
  if (!features.allFinite()) throw DataError("features contain non-finite values");
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= labels.size()) throw DataError("subset index out of range");
    out.features.row(static_cast<Eigen::Index>(i)) =
        features.row(static_cast<Eigen::Index>(indices[i]));
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

LabeledDataset synth_blobs(int num_classes, Eigen::Index dim, std::size_t samples_per_class,
                           double spread, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1 || samples_per_class < 1)
    throw ConfigError("synth_blobs: counts must be >= 1");
  if (!(spread >= 0.0) || !std::isfinite(spread))
    throw ConfigError("synth_blobs: spread must be finite and >= 0");

  Rng rng(derive_seed(seed, {stream::kBlobs}));
  Eigen::MatrixXd centers(num_classes, dim);
  for (int c = 0; c < num_classes; ++c)
    for (Eigen::Index d = 0; d < dim; ++d) centers(c, d) = 2.0 * uniform01(rng) - 1.0;

  std::normal_distribution<double> noise(0.0, 1.0);
  LabeledDataset ds;
  ds.num_classes = num_classes;
  const auto n = static_cast<Eigen::Index>(samples_per_class) * num_classes;
  ds.features.resize(n, dim);
  ds.labels.reserve(static_cast<std::size_t>(n));
  Eigen::Index row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t s = 0; s < samples_per_class; ++s, ++row) {
      for (Eigen::Index d = 0; d < dim; ++d)
        ds.features(row, d) = centers(c, d) + spread * noise(rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

std::vector<double> sample_dirichlet(double alpha, std::size_t k, std::uint64_t seed) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
  if (k < 1) throw ConfigError("Dirichlet dimension must be >= 1");
  Rng rng(seed);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    total += v;
  }
  // tiny alpha can underflow every variate; fall back to one-hot at a uniform index
  if (!(total > 0.0)) {
    std::fill(p.begin(), p.end(), 0.0);
    p[uniform_below(rng, k)] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& proportions) {
  const std::size_t k = proportions.size();
  std::vector<std::size_t> counts(k, 0);
  if (k == 0) return counts;
  std::vector<double> remainder(k);
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double exact = proportions[j] * static_cast<double>(total);
    counts[j] = static_cast<std::size_t>(std::floor(exact));
    remainder[j] = exact - static_cast<double>(counts[j]);
    assigned += counts[j];
  }
  // floating error can leave floor sums above total in degenerate cases
  while (assigned > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % k, ++assigned) ++counts[order[i]];
  return counts;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const LabeledDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return by_class;
}

void repair_empty_shards(std::vector<ClientShard>& shards) {
  for (auto& shard : shards) {
    if (!shard.indices.empty()) continue;
    auto largest = std::max_element(
        shards.begin(), shards.end(),
        [](const ClientShard& a, const ClientShard& b) { return a.n() < b.n(); });
    shard.indices.push_back(largest->indices.back());
    largest->indices.pop_back();
  }
}

}  // namespace

std::vector<ClientShard> dirichlet_partition(const LabeledDataset& dataset,
                                             std::size_t num_clients, double alpha,
                                             std::uint64_t seed) {
  dataset.validate();
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
  if (dataset.size() < num_clients)
    throw DataError("dataset has fewer samples than clients");

  std::vector<ClientShard> shards(num_clients);
  for (std::size_t j = 0; j < num_clients; ++j) shards[j].client_id = j;

  auto by_class = indices_by_class(dataset);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    Rng rng(derive_seed(seed, {stream::kPartition, c, 0}));
    fisher_yates(members, rng);
    const auto proportions =
        sample_dirichlet(alpha, num_clients, derive_seed(seed, {stream::kPartition, c, 1}));
    const auto counts = apportion(members.size(), proportions);
    std::size_t cursor = 0;
    for (std::size_t j = 0; j < num_clients; ++j)
      for (std::size_t t = 0; t < counts[j]; ++t) shards[j].indices.push_back(members[cursor++]);
  }
  repair_empty_shards(shards);
  return shards;
}

std::vector<ClientShard> iid_partition(const LabeledDataset& dataset, std::size_t num_clients,
                                       std::uint64_t seed) {
  dataset.validate();
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (dataset.size() < num_clients)
    throw DataError("dataset has fewer samples than clients");
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);
  Rng rng(derive_seed(seed, {stream::kPartition}));
  fisher_yates(all, rng);
  std::vector<ClientShard> shards(num_clients);
  const std::size_t base = all.size() / num_clients;
  const std::size_t extra = all.size() % num_clients;
  std::size_t cursor = 0;
  for (std::size_t j = 0; j < num_clients; ++j) {
    shards[j].client_id = j;
    const std::size_t len = base + (j < extra ? 1 : 0);
    shards[j].indices.assign(all.begin() + static_cast<std::ptrdiff_t>(cursor),
                             all.begin() + static_cast<std::ptrdiff_t>(cursor + len));
    cursor += len;
  }
  return shards;
}

LabelShardResult label_shard_partition(const LabeledDataset& dataset,
                                       const std::vector<ShardGroup>& groups,
                                       std::uint64_t seed) {
  dataset.validate();
  if (groups.empty()) throw ConfigError("label_shard_partition needs at least one group");
  std::set<int> seen_classes;
  std::set<ClientId> seen_clients;
  for (const auto& g : groups) {
    if (g.clients.empty()) throw ConfigError("label-shard group has no clients");
    for (int c : g.classes) {
      if (c < 0 || c >= dataset.num_classes)
        throw ConfigError("label-shard class " + std::to_string(c) + " out of range");
      if (!seen_classes.insert(c).second)
        throw ConfigError("class " + std::to_string(c) + " appears in more than one group");
    }
    for (ClientId id : g.clients)
      if (!seen_clients.insert(id).second)
        throw ConfigError("client " + std::to_string(id) + " appears in more than one group");
  }

  const auto by_class = indices_by_class(dataset);
  LabelShardResult result;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    std::vector<std::size_t> pool;
    for (int c : g.classes) {
      const auto& members = by_class[static_cast<std::size_t>(c)];
      pool.insert(pool.end(), members.begin(), members.end());
    }
    Rng rng(derive_seed(seed, {stream::kPartition, gi}));
    fisher_yates(pool, rng);
    const std::size_t k = g.clients.size();
    const std::size_t base = pool.size() / k;
    const std::size_t extra = pool.size() % k;
    std::size_t cursor = 0;
    for (std::size_t j = 0; j < k; ++j) {
      ClientShard shard;
      shard.client_id = g.clients[j];
      const std::size_t len = base + (j < extra ? 1 : 0);
      shard.indices.assign(pool.begin() + static_cast<std::ptrdiff_t>(cursor),
                           pool.begin() + static_cast<std::ptrdiff_t>(cursor + len));
      cursor += len;
      result.ground_truth.client_to_group[shard.client_id] = gi;
      result.shards.push_back(std::move(shard));
    }
  }
  std::sort(result.shards.begin(), result.shards.end(),
            [](const ClientShard& a, const ClientShard& b) { return a.client_id < b.client_id; });
  return result;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    const std::vector<int>& labels, const std::vector<std::size_t>& indices,
    double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t idx : indices) {
    if (idx >= labels.size()) throw DataError("split index out of range");
    by_class[labels[idx]].push_back(idx);
  }
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (auto& [cls, members] : by_class) {
    Rng rng(derive_seed(seed, {stream::kSplit, static_cast<std::uint64_t>(cls)}));
    fisher_yates(members, rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test),
                 members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& dataset,
                                                           double test_fraction,
                                                           std::uint64_t seed) {
  dataset.validate();
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), 0);
  auto [train, test] = stratified_split_indices(dataset.labels, all, test_fraction, seed);
  if (train.empty() || test.empty())
    throw ConfigError("test_fraction leaves one side of the split empty");
  return {dataset.subset(train), dataset.subset(test)};
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path.string());

  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
    }
    return cells;
  };

  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header row");
  const auto header = split(line);
  if (header.size() < 2 || header.back() != "label")
    throw DataError(path.string() + ":1: header must be f0,...,f{dim-1},label");
  const std::size_t dim = header.size() - 1;
  for (std::size_t d = 0; d < dim; ++d)
    if (header[d] != "f" + std::to_string(d))
      throw DataError(path.string() + ":1: expected column f" + std::to_string(d));

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != dim + 1) throw DataError(where + ": expected " + std::to_string(dim + 1) + " cells");
    try {
      for (std::size_t d = 0; d < dim; ++d) {
        std::size_t used = 0;
        values.push_back(std::stod(cells[d], &used));
        if (used != cells[d].size()) throw std::invalid_argument(cells[d]);
      }
      std::size_t used = 0;
      const int y = std::stoi(cells[dim], &used);
      if (used != cells[dim].size() || y < 0) throw std::invalid_argument(cells[dim]);
      labels.push_back(y);
    } catch (const std::logic_error&) {
      throw DataError(where + ": unparseable value");
    }
  }
  if (labels.empty()) throw DataError(path.string() + ": no samples");

  LabeledDataset ds;
  ds.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                               Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(dim));
  ds.labels = std::move(labels);
  ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.validate();
  return ds;
}

bool is_exact_cover(const std::vector<ClientShard>& shards, std::size_t n) {
  std::vector<char> seen(n, 0);
  std::size_t total = 0;
  for (const auto& s : shards) {
    for (std::size_t idx : s.indices) {
      if (idx >= n || seen[idx]) return false;
      seen[idx] = 1;
      ++total;
    }
  }
  return total == n;
}

}  // namespace fedclust::data
