// fedclust: run FedClust / baseline experiments from INI configs.
//
//   fedclust run <config> [--seed N] [--out DIR] [--parallel]
//   fedclust compare <config> <config>... [--seed N] [--out DIR] [--parallel]

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <optional>

#include "fedclust/errors.hpp"
#include "fedclust/harness.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

using fedclust::harness::ExperimentConfig;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool parallel = false;
};

void apply(ExperimentConfig& cfg, const Overrides& o) {
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.seeds = {*o.seed};
    cfg.rounds.seed = *o.seed;
  }
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.parallel) {
    cfg.parallel = true;
    cfg.rounds.parallel = true;
  }
}

int run_command(const std::string& path, const Overrides& o) {
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::load(path);
    apply(cfg, o);
    cfg.validate();
  } catch (const fedclust::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  }

  const char* phase = "run";
  try {
    const auto result = fedclust::harness::run_experiment(cfg);
    phase = "write";
    fedclust::harness::write_outputs(cfg, result, cfg.output_dir);

    std::cout << fmt::format("{} ({}) seed {} finished in {:.2f}s\n", cfg.name,
                             fedclust::harness::to_string(cfg.method), cfg.seed,
                             result.wall_clock_seconds);
    if (!result.report.records.empty())
      std::cout << fmt::format("  final local acc {:.4f}, global acc {:.4f}\n",
                               result.report.final_local_accuracy(),
                               result.report.final_global_accuracy());
    if (result.report.assignment)
      std::cout << fmt::format("  clusters: {}\n", result.report.assignment->num_clusters);
    if (result.ari) std::cout << fmt::format("  ARI vs ground truth: {:.4f}\n", *result.ari);
    for (const auto& lm : result.layers)
      if (lm.block_contrast)
        std::cout << fmt::format("  layer {} inter/intra distance ratio: {:.3f}\n",
                                 lm.layer_index, *lm.block_contrast);
    for (const auto& w : result.report.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "  outputs in " << cfg.output_dir.string() << '\n';
  } catch (const fedclust::ConfigError& e) {
    std::cerr << "config error [" << phase << "]: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "runtime error [" << phase << "]: " << e.what() << '\n';
    return kRuntimeExit;
  }
  return 0;
}

int compare_command(const std::vector<std::string>& paths, const Overrides& o) {
  std::vector<ExperimentConfig> configs;
  try {
    for (const auto& p : paths) {
      auto cfg = ExperimentConfig::load(p);
      apply(cfg, o);
      cfg.validate();
      configs.push_back(std::move(cfg));
    }
  } catch (const fedclust::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  }

  try {
    const auto rows = fedclust::harness::compare(configs);
    std::cout << fedclust::harness::comparison_table(rows);
    const std::filesystem::path out_dir = o.out.empty() ? configs.front().output_dir : std::filesystem::path(o.out);
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir / "compare.csv", std::ios::binary);
    csv << fedclust::harness::comparison_csv(rows);
  } catch (const fedclust::ConfigError& e) {
    std::cerr << "config error [compare]: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "runtime error [compare]: " << e.what() << '\n';
    return kRuntimeExit;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustered federated learning simulator (FedClust, FedAvg, FedProx)"};
  app.require_subcommand(1);

  Overrides overrides;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", overrides.out, "Output directory");
    sub->add_flag("--parallel", overrides.parallel, "Train clients concurrently");
  };

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("config", config_path, "Experiment config (INI)")->required();
  add_common(run);

  std::vector<std::string> compare_paths;
  auto* cmp = app.add_subcommand("compare", "Compare methods across seeds");
  cmp->add_option("configs", compare_paths, "Two or more experiment configs")
      ->required()
      ->expected(2, -1);
  add_common(cmp);

  CLI11_PARSE(app, argc, argv);

  if (run->count("--seed") || cmp->count("--seed")) overrides.seed = seed;
  if (*run) return run_command(config_path, overrides);
  return compare_command(compare_paths, overrides);
}
