// tradesim command-line harness.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tradesim/common.hpp"
#include "tradesim/experiment.hpp"
#include "tradesim/json_util.hpp"

using namespace tradesim;

namespace {

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2, kDivergence = 3 };

template <typename F>
int guarded(F&& body) {
  try {
    body();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

nlohmann::json load_or_empty(const std::string& path) {
  return path.empty() ? nlohmann::json::object() : json_util::read_file(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tradesim: trading-cluster scheduling simulator"};
  app.require_subcommand(1);

  std::string scenario, topology, scheduler, config, predictor, dataset, out, sched_cfg;
  std::optional<std::uint64_t> seed;
  bool strict = false;

  auto* gen = app.add_subcommand("generate", "write the request stream and market history of a scenario");
  gen->add_option("--scenario", scenario, "scenario JSON")->required();
  gen->add_option("--seed", seed, "override the scenario seed");
  gen->add_option("--out", out, "output directory")->default_val("out");

  auto* sim = app.add_subcommand("simulate", "run a scheduler on a scenario");
  sim->add_option("--config", config, "experiment JSON; flags below override it");
  sim->add_option("--scenario", scenario, "scenario JSON");
  sim->add_option("--topology", topology, "topology JSON");
  sim->add_option("--scheduler", scheduler, "hybrid | drl | round-robin | random | threshold-autoscaler");
  sim->add_option("--scheduler-config", sched_cfg, "scheduler settings JSON");
  sim->add_option("--predictor", predictor, "predictor checkpoint (enables proactive scaling)");
  sim->add_option("--seed", seed, "run seed");
  sim->add_option("--out", out, "output directory");
  sim->add_flag("--strict-deterministic", strict, "single-threaded evaluation");

  auto* tp = app.add_subcommand("train-predictor", "train the load predictor on a history CSV");
  tp->add_option("--config", config, "training JSON");
  tp->add_option("--dataset", dataset, "history CSV from `generate`");
  tp->add_option("--scenario", scenario, "scenario JSON supplying the clock");
  tp->add_option("--seed", seed, "training seed");
  tp->add_option("--out", out, "output directory")->default_val("out");

  auto* td = app.add_subcommand("train-drl", "train the DRL scheduling policy");
  td->add_option("--config", config, "training JSON");
  td->add_option("--scenario", scenario, "scenario JSON");
  td->add_option("--topology", topology, "topology JSON");
  td->add_option("--seed", seed, "training seed");
  td->add_option("--out", out, "output directory")->default_val("out");

  std::string base_path, cand_path;
  auto* cmp = app.add_subcommand("compare", "improvement table between two summary.json files");
  cmp->add_option("baseline", base_path, "baseline summary.json")->required();
  cmp->add_option("candidate", cand_path, "candidate summary.json")->required();
  cmp->add_option("--out", out, "output directory")->default_val("out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (*gen) {
    return guarded([&] {
      std::uint64_t s = seed.value_or(0);
      if (!seed) s = workload::load_scenario(scenario).seed;
      experiment::cmd_generate(scenario, s, out, std::cout);
    });
  }
  if (*sim) {
    return guarded([&] {
      auto cfg = experiment::experiment_from_json(load_or_empty(config));
      if (!scenario.empty()) cfg.scenario = scenario;
      if (!topology.empty()) cfg.topology = topology;
      if (!scheduler.empty()) cfg.scheduler = scheduler;
      if (!sched_cfg.empty()) cfg.scheduler_config = json_util::read_file(sched_cfg);
      if (!predictor.empty()) cfg.predictor = predictor;
      if (seed) cfg.seed = *seed;
      if (!out.empty()) cfg.out = out;
      if (strict) cfg.strict_deterministic = true;
      experiment::cmd_simulate(cfg, std::cout);
    });
  }
  if (*tp) {
    return guarded([&] {
      auto cfg = load_or_empty(config);
      if (!dataset.empty()) cfg["dataset"] = dataset;
      if (!scenario.empty()) cfg["scenario"] = scenario;
      if (seed) cfg["predictor"]["seed"] = *seed;
      experiment::cmd_train_predictor(cfg, out, std::cout);
    });
  }
  if (*td) {
    return guarded([&] {
      auto cfg = load_or_empty(config);
      if (!scenario.empty()) cfg["scenario"] = scenario;
      if (!topology.empty()) cfg["topology"] = topology;
      if (seed) cfg["train"]["seed"] = *seed;
      experiment::cmd_train_drl(cfg, out, std::cout);
    });
  }
  if (*cmp) {
    return guarded([&] { experiment::cmd_compare(base_path, cand_path, out, std::cout); });
  }
  return kConfig;
}
