#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "fedclust/errors.hpp"
#include "fedclust/harness.hpp"

namespace fedclust::harness {

namespace pt = boost::property_tree;

std::string to_string(Method method) {
  switch (method) {
    case Method::FedClust:
      return "fedclust";
    case Method::FedAvg:
      return "fedavg";
    case Method::FedProx:
      return "fedprox";
    case Method::LayerAnalysis:
      return "layer_analysis";
  }
  return "fedclust";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

ConfigError field_error(const std::string& section, const std::string& key,
                        const std::string& message) {
  return ConfigError("[" + section + "] " + key + ": " + message);
}

template <typename T>
T parse_integer(const std::string& text, const std::string& section, const std::string& key) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty())
    throw field_error(section, key, "expected a non-negative integer, got '" + text + "'");
  return value;
}

double parse_real(const std::string& text, const std::string& section, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw field_error(section, key, "expected a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& text, const std::string& section, const std::string& key) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw field_error(section, key, "expected true/false, got '" + text + "'");
}

/// Expands "0-4,7" into {0,1,2,3,4,7}.
std::vector<std::size_t> parse_id_list(const std::string& text, const std::string& section,
                                       const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& item : split(text, ',')) {
    if (item.empty()) throw field_error(section, key, "empty list item in '" + text + "'");
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(parse_integer<std::size_t>(item, section, key));
    } else {
      const auto lo = parse_integer<std::size_t>(trim(item.substr(0, dash)), section, key);
      const auto hi = parse_integer<std::size_t>(trim(item.substr(dash + 1)), section, key);
      if (hi < lo) throw field_error(section, key, "descending range '" + item + "'");
      for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
    }
  }
  return out;
}

std::string format_id_list(const std::vector<std::size_t>& ids) {
  std::string out;
  std::size_t i = 0;
  while (i < ids.size()) {
    std::size_t j = i;
    while (j + 1 < ids.size() && ids[j + 1] == ids[j] + 1) ++j;
    if (!out.empty()) out += ',';
    out += j > i ? fmt::format("{}-{}", ids[i], ids[j]) : fmt::format("{}", ids[i]);
    i = j + 1;
  }
  return out;
}

// shortest representation that parses back to the same double
std::string fmt_real(double v) { return fmt::format("{}", v); }

class Reader {
 public:
  explicit Reader(const pt::ptree& root) : root_(root) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    seen_.insert(section + "." + key);
    const auto sec = root_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto value = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!value) return std::nullopt;
    return trim(*value);
  }

  std::string str(const std::string& section, const std::string& key, std::string fallback) {
    return raw(section, key).value_or(std::move(fallback));
  }

  template <typename T>
  T integer(const std::string& section, const std::string& key, T fallback) {
    const auto v = raw(section, key);
    return v ? parse_integer<T>(*v, section, key) : fallback;
  }

  double real(const std::string& section, const std::string& key, double fallback) {
    const auto v = raw(section, key);
    return v ? parse_real(*v, section, key) : fallback;
  }

  bool boolean(const std::string& section, const std::string& key, bool fallback) {
    const auto v = raw(section, key);
    return v ? parse_bool(*v, section, key) : fallback;
  }

  void reject_unknown() const {
    for (const auto& [section, body] : root_) {
      if (body.empty() && !body.data().empty())
        throw ConfigError("key '" + section + "' must live inside a [section]");
      for (const auto& [key, value] : body)
        if (!seen_.count(section + "." + key))
          throw field_error(section, key, "unknown field");
    }
  }

 private:
  const pt::ptree& root_;
  std::set<std::string> seen_;
};

}  // namespace

std::vector<Eigen::Index> ExperimentConfig::layer_dims(Eigen::Index input_dim,
                                                       int num_classes) const {
  std::vector<Eigen::Index> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(num_classes);
  return dims;
}

void ExperimentConfig::validate() const {
  if (dataset.source != "blobs" && dataset.source != "csv")
    throw field_error("dataset", "source", "expected blobs or csv");
  if (dataset.source == "csv" && dataset.csv_path.empty())
    throw field_error("dataset", "path", "required when source = csv");
  if (dataset.source == "blobs") {
    if (dataset.num_classes < 1) throw field_error("dataset", "num_classes", "must be >= 1");
    if (dataset.dim < 1) throw field_error("dataset", "dim", "must be >= 1");
    if (dataset.samples_per_class < 1)
      throw field_error("dataset", "samples_per_class", "must be >= 1");
    if (!(dataset.spread >= 0.0)) throw field_error("dataset", "spread", "must be >= 0");
  }
  if (!(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0))
    throw field_error("dataset", "test_fraction", "must lie in (0, 1)");
  if (!(dataset.local_test_fraction >= 0.0 && dataset.local_test_fraction < 1.0))
    throw field_error("dataset", "local_test_fraction", "must lie in [0, 1)");

  if (partition.scheme == "dirichlet") {
    if (!(partition.alpha > 0.0)) throw field_error("partition", "alpha", "must be > 0");
  } else if (partition.scheme == "label_shard") {
    if (partition.groups.empty()) throw field_error("partition", "groups", "required for label_shard");
    std::vector<std::size_t> ids;
    for (const auto& g : partition.groups) ids.insert(ids.end(), g.clients.begin(), g.clients.end());
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] != i)
        throw field_error("partition", "groups", "client ids must be exactly 0..num_clients-1");
    if (ids.size() != partition.num_clients)
      throw field_error("partition", "num_clients", "does not match the clients listed in groups");
  } else if (partition.scheme != "iid") {
    throw field_error("partition", "scheme", "expected dirichlet, label_shard or iid");
  }
  if (partition.num_clients < 1) throw field_error("partition", "num_clients", "must be >= 1");

  for (auto h : hidden_dims)
    if (h < 1) throw field_error("model", "hidden", "hidden widths must be >= 1");

  if (rounds.total_rounds < 1) throw field_error("rounds", "total_rounds", "must be >= 1");
  if (!(rounds.participation_fraction > 0.0 && rounds.participation_fraction <= 1.0))
    throw field_error("rounds", "participation_fraction", "must lie in (0, 1]");
  if (rounds.train.batch_size < 1) throw field_error("train", "batch_size", "must be >= 1");
  if (!(rounds.train.learning_rate > 0.0))
    throw field_error("train", "learning_rate", "must be > 0");
  if (!(rounds.train.prox_mu >= 0.0)) throw field_error("train", "prox_mu", "must be >= 0");

  if (const auto* k = std::get_if<clustering::FixedK>(&clustering.cut)) {
    if (k->k < 1) throw field_error("clustering", "k", "must be >= 1");
    if (k->k > partition.num_clients)
      throw field_error("clustering", "k", "exceeds the number of clients");
  }
  if (const auto* t = std::get_if<clustering::DistanceThreshold>(&clustering.cut))
    if (!(t->tau > 0.0)) throw field_error("clustering", "threshold", "must be > 0");
  if (clustering.layer_index && *clustering.layer_index > hidden_dims.size())
    throw field_error("clustering", "layer_index",
                      fmt::format("model has {} layers", hidden_dims.size() + 1));
  if (seeds.empty()) throw field_error("experiment", "seeds", "must list at least one seed");
}

ExperimentConfig ExperimentConfig::parse(std::istream& in, const std::string& source_name,
                                         const std::filesystem::path& base_dir) {
  pt::ptree root;
  try {
    pt::ini_parser::read_ini(in, root);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source_name, e.line(), e.message()));
  }

  Reader r(root);
  ExperimentConfig cfg;
  cfg.name = r.str("experiment", "name", cfg.name);
  const auto method = r.str("experiment", "method", "fedclust");
  if (method == "fedclust") cfg.method = Method::FedClust;
  else if (method == "fedavg") cfg.method = Method::FedAvg;
  else if (method == "fedprox") cfg.method = Method::FedProx;
  else if (method == "layer_analysis") cfg.method = Method::LayerAnalysis;
  else throw field_error("experiment", "method", "unknown method '" + method + "'");
  cfg.seed = r.integer<std::uint64_t>("experiment", "seed", cfg.seed);
  if (auto seeds = r.raw("experiment", "seeds"); seeds && !seeds->empty()) {
    for (const auto& s : split(*seeds, ','))
      cfg.seeds.push_back(parse_integer<std::uint64_t>(s, "experiment", "seeds"));
  } else {
    cfg.seeds = {cfg.seed};
  }
  cfg.parallel = r.boolean("experiment", "parallel", false);

  auto& ds = cfg.dataset;
  ds.source = r.str("dataset", "source", ds.source);
  if (auto p = r.raw("dataset", "path")) {
    std::filesystem::path path(*p);
    ds.csv_path = path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  }
  ds.num_classes = r.integer<int>("dataset", "num_classes", ds.num_classes);
  ds.dim = r.integer<Eigen::Index>("dataset", "dim", ds.dim);
  ds.samples_per_class = r.integer<std::size_t>("dataset", "samples_per_class", ds.samples_per_class);
  ds.spread = r.real("dataset", "spread", ds.spread);
  ds.test_fraction = r.real("dataset", "test_fraction", ds.test_fraction);
  ds.local_test_fraction = r.real("dataset", "local_test_fraction", ds.local_test_fraction);

  auto& part = cfg.partition;
  part.scheme = r.str("partition", "scheme", part.scheme);
  part.alpha = r.real("partition", "alpha", part.alpha);
  const auto explicit_clients = r.raw("partition", "num_clients");
  if (explicit_clients) part.num_clients = parse_integer<std::size_t>(*explicit_clients, "partition", "num_clients");
  if (auto groups = r.raw("partition", "groups"); groups && !groups->empty()) {
    std::size_t total = 0;
    for (const auto& chunk : split(*groups, ';')) {
      const auto colon = chunk.find(':');
      if (colon == std::string::npos)
        throw field_error("partition", "groups", "expected 'clients:classes' in '" + chunk + "'");
      data::ShardGroup g;
      g.clients = parse_id_list(trim(chunk.substr(0, colon)), "partition", "groups");
      for (auto c : parse_id_list(trim(chunk.substr(colon + 1)), "partition", "groups"))
        g.classes.insert(static_cast<int>(c));
      total += g.clients.size();
      part.groups.push_back(std::move(g));
    }
    if (!explicit_clients) part.num_clients = total;
  }

  if (auto hidden = r.raw("model", "hidden")) {
    cfg.hidden_dims.clear();
    if (!hidden->empty())
      for (const auto& h : split(*hidden, ','))
        cfg.hidden_dims.push_back(parse_integer<Eigen::Index>(h, "model", "hidden"));
  }
  const auto act = r.str("model", "activation", "relu");
  if (act == "relu") cfg.activation = nn::Activation::ReLU;
  else if (act == "tanh") cfg.activation = nn::Activation::Tanh;
  else throw field_error("model", "activation", "expected relu or tanh");

  auto& rc = cfg.rounds;
  rc.total_rounds = r.integer<std::size_t>("rounds", "total_rounds", rc.total_rounds);
  rc.clustering_round_epochs =
      r.integer<std::size_t>("rounds", "clustering_round_epochs", rc.clustering_round_epochs);
  rc.per_round_epochs = r.integer<std::size_t>("rounds", "per_round_epochs", rc.per_round_epochs);
  rc.participation_fraction =
      r.real("rounds", "participation_fraction", rc.participation_fraction);
  rc.train.learning_rate = r.real("train", "learning_rate", rc.train.learning_rate);
  rc.train.batch_size = r.integer<std::size_t>("train", "batch_size", rc.train.batch_size);
  rc.train.prox_mu = r.real("train", "prox_mu", rc.train.prox_mu);

  auto& ck = cfg.clustering;
  ck.linkage = [&] {
    const auto name = r.str("clustering", "linkage", "average");
    try {
      return clustering::parse_linkage(name);
    } catch (const ConfigError&) {
      throw field_error("clustering", "linkage", "expected single, complete or average");
    }
  }();
  const auto cut = r.str("clustering", "cut", "largest_gap");
  const auto k = r.integer<std::size_t>("clustering", "k", 2);
  const auto tau = r.real("clustering", "threshold", 1.0);
  if (cut == "largest_gap") ck.cut = clustering::LargestGap{};
  else if (cut == "fixed_k") ck.cut = clustering::FixedK{k};
  else if (cut == "distance_threshold") ck.cut = clustering::DistanceThreshold{tau};
  else throw field_error("clustering", "cut", "expected largest_gap, fixed_k or distance_threshold");
  if (auto li = r.raw("clustering", "layer_index"); li && *li != "last")
    ck.layer_index = parse_integer<std::size_t>(*li, "clustering", "layer_index");

  cfg.output_dir = r.str("output", "dir", cfg.output_dir.string());

  r.reject_unknown();
  cfg.rounds.seed = cfg.seed;
  cfg.rounds.parallel = cfg.parallel;
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_string(const std::string& text,
                                                const std::filesystem::path& base_dir) {
  std::istringstream in(text);
  return parse(in, "<string>", base_dir);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string(), path.parent_path());
}

std::string ExperimentConfig::data_signature() const {
  std::string out;
  out += fmt::format("source={};path={};classes={};dim={};spc={};spread={};test={};local={};",
                     dataset.source, dataset.csv_path.string(), dataset.num_classes, dataset.dim,
                     dataset.samples_per_class, fmt_real(dataset.spread),
                     fmt_real(dataset.test_fraction), fmt_real(dataset.local_test_fraction));
  out += fmt::format("scheme={};clients={};alpha={};", partition.scheme, partition.num_clients,
                     fmt_real(partition.alpha));
  for (const auto& g : partition.groups) {
    std::vector<std::size_t> classes(g.classes.begin(), g.classes.end());
    out += format_id_list(g.clients) + ":" + format_id_list(classes) + ";";
  }
  return out;
}

std::string ExperimentConfig::to_ini() const {
  std::string out;
  auto line = [&](std::string_view key, const std::string& value) {
    out += fmt::format("{} = {}\n", key, value);
  };
  std::vector<std::string> seed_text;
  for (auto s : seeds) seed_text.push_back(std::to_string(s));

  out += "[experiment]\n";
  line("name", name);
  line("method", to_string(method));
  line("seed", std::to_string(seed));
  line("seeds", fmt::format("{}", fmt::join(seed_text, ",")));
  line("parallel", parallel ? "true" : "false");

  out += "\n[dataset]\n";
  line("source", dataset.source);
  if (!dataset.csv_path.empty()) line("path", std::filesystem::absolute(dataset.csv_path).string());
  line("num_classes", std::to_string(dataset.num_classes));
  line("dim", std::to_string(dataset.dim));
  line("samples_per_class", std::to_string(dataset.samples_per_class));
  line("spread", fmt_real(dataset.spread));
  line("test_fraction", fmt_real(dataset.test_fraction));
  line("local_test_fraction", fmt_real(dataset.local_test_fraction));

  out += "\n[partition]\n";
  line("scheme", partition.scheme);
  line("num_clients", std::to_string(partition.num_clients));
  line("alpha", fmt_real(partition.alpha));
  if (!partition.groups.empty()) {
    std::vector<std::string> chunks;
    for (const auto& g : partition.groups) {
      std::vector<std::size_t> classes(g.classes.begin(), g.classes.end());
      chunks.push_back(format_id_list(g.clients) + ":" + format_id_list(classes));
    }
    line("groups", fmt::format("{}", fmt::join(chunks, "; ")));
  }

  out += "\n[model]\n";
  line("hidden", fmt::format("{}", fmt::join(hidden_dims, ",")));
  line("activation", activation == nn::Activation::Tanh ? "tanh" : "relu");

  out += "\n[rounds]\n";
  line("total_rounds", std::to_string(rounds.total_rounds));
  line("clustering_round_epochs", std::to_string(rounds.clustering_round_epochs));
  line("per_round_epochs", std::to_string(rounds.per_round_epochs));
  line("participation_fraction", fmt_real(rounds.participation_fraction));

  out += "\n[train]\n";
  line("learning_rate", fmt_real(rounds.train.learning_rate));
  line("batch_size", std::to_string(rounds.train.batch_size));
  line("prox_mu", fmt_real(rounds.train.prox_mu));

  out += "\n[clustering]\n";
  line("linkage", std::string(clustering::to_string(clustering.linkage)));
  if (const auto* k = std::get_if<clustering::FixedK>(&clustering.cut)) {
    line("cut", "fixed_k");
    line("k", std::to_string(k->k));
  } else if (const auto* t = std::get_if<clustering::DistanceThreshold>(&clustering.cut)) {
    line("cut", "distance_threshold");
    line("threshold", fmt_real(t->tau));
  } else {
    line("cut", "largest_gap");
  }
  line("layer_index",
       clustering.layer_index ? std::to_string(*clustering.layer_index) : std::string("last"));

  out += "\n[output]\n";
  line("dir", output_dir.string());
  return out;
}

}  // namespace fedclust::harness
