#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tradesim/cluster.hpp"
#include "tradesim/hybrid.hpp"
#include "tradesim/lstm.hpp"
#include "tradesim/metrics.hpp"
#include "tradesim/schedulers.hpp"
#include "tradesim/workload.hpp"

namespace tradesim::experiment {

inline const std::vector<std::string>& scheduler_kinds() {
  static const std::vector<std::string> kinds{"hybrid", "drl", "round-robin", "random", "threshold-autoscaler"};
  return kinds;
}

struct ExperimentConfig {
  std::string scenario;
  std::string topology;
  std::string scheduler = "round-robin";
  nlohmann::json scheduler_config = nlohmann::json::object();
  std::string predictor;  // optional checkpoint; enables proactive scaling
  std::uint64_t seed = 1;
  std::string out = "out";
  int decision_interval = 10;
  bool strict_deterministic = false;
  sched::ProactiveConfig proactive;

  /// Referenced files exist and the scheduler kind is known.
  void validate() const;
};

/// Every field, defaults included; loading it back reproduces the run.
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::string& where = "config");

struct RunOptions {
  int decision_interval = 10;
  bool trace = true;
  std::string scenario_id;
};

struct RunOutput {
  metrics::RunSummary summary;
  std::string trace_csv;
};

/// Runs the scenario horizon on a fresh cluster. The scenario seed drives
/// arrivals; `sim_seed` drives jitter and observation noise.
RunOutput run(const cluster::Topology& topology, const workload::WorkloadScenario& scenario, sched::Scheduler& scheduler,
              const RunOptions& options, std::uint64_t sim_seed);

/// Fitness of a whole run from its mean latency, allocation utilization and load balance.
double run_fitness(const metrics::RunSummary& s, const hybrid::FitnessWeights& w = {});

/// Scheduler from its kind and inline settings. Settings are filled with defaults in place.
std::unique_ptr<sched::Scheduler> make_scheduler(const std::string& kind, nlohmann::json& settings,
                                                 const workload::WorkloadScenario& scenario,
                                                 const cluster::Topology& topology, std::uint64_t seed);

/// simulate: writes trace.csv and summary.json under `out`.
metrics::RunSummary cmd_simulate(const ExperimentConfig& cfg, std::ostream& log);

/// generate: requests.csv (tick,service_id,work_units,payload_bytes) and
/// history.csv (predictor dataset) under `out`.
void cmd_generate(const std::string& scenario_path, std::uint64_t seed, const std::string& out, std::ostream& log);

/// train-predictor: model.json and curve.csv under `out`. Config keys: dataset,
/// scenario (clock), predictor, data, train_fraction, burst_threshold.
lstm::Accuracy cmd_train_predictor(const nlohmann::json& config, const std::string& out, std::ostream& log);

/// train-drl: policy.json and curve.csv under `out`. Config keys: scenario,
/// topology, train, env; or "bandit": true for the contextual-bandit check.
void cmd_train_drl(const nlohmann::json& config, const std::string& out, std::ostream& log);

/// compare: comparison.csv under `out` from two summary.json files.
std::vector<metrics::ComparisonRow> cmd_compare(const std::string& baseline, const std::string& candidate,
                                                const std::string& out, std::ostream& log);

/// Fills defaults into a train-predictor / train-drl config for the echo.
nlohmann::json resolve_predictor_config(const nlohmann::json& config);
nlohmann::json resolve_drl_config(const nlohmann::json& config);

}  // namespace tradesim::experiment
