#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tradesim/cluster.hpp"
#include "tradesim/drl.hpp"
#include "tradesim/hybrid.hpp"
#include "tradesim/lstm.hpp"
#include "tradesim/workload.hpp"

namespace tradesim::sched {

/// What a scheduler wants done before the next tick: an incremental action,
/// optionally preceded by a full reconfiguration.
struct Decision {
  cluster::SchedulingAction action;
  std::optional<hybrid::Chromosome> reconfigure;
};

class Scheduler {
 public:
  virtual ~Scheduler() = default;
  virtual std::string name() const = 0;
  /// Called every decision interval with the noisy observation.
  virtual Decision decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) = 0;
  /// Called on every tick with that tick's arrival volume; may act between decisions.
  virtual std::optional<Decision> on_tick(const cluster::SystemState& /*observed*/, const cluster::ClusterSim& /*sim*/,
                                          Tick /*t*/, double /*volume*/) {
    return std::nullopt;
  }
};

/// Lays the current instance counts out round-robin over the nodes once and
/// never changes them.
class RoundRobinScheduler : public Scheduler {
 public:
  std::string name() const override { return "round-robin"; }
  Decision decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) override;

  static std::vector<std::vector<int>> layout(const std::vector<int>& counts, std::size_t nodes);

 private:
  bool placed_ = false;
};

/// Random +-1 instance changes and quota draws every decision.
class RandomScheduler : public Scheduler {
 public:
  explicit RandomScheduler(std::uint64_t seed) : rng_(seed) {}
  std::string name() const override { return "random"; }
  Decision decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) override;

 private:
  Rng rng_;
};

struct ThresholdConfig {
  double scale_up = 0.8;
  double scale_down = 0.3;
  Tick cooldown = 30;
};

/// +1 instance for services above `scale_up`, -1 below `scale_down`, at most
/// once per `cooldown` ticks per service. `last_change` holds each service's
/// last scaling tick (negative for never) and is updated. With `counts`, no
/// scale-down below one instance and no scale-up past `max_instances`.
cluster::SchedulingAction threshold_action(const cluster::SystemState& observed, Tick t, const ThresholdConfig& cfg,
                                           std::vector<Tick>& last_change, std::span<const int> counts = {},
                                           int max_instances = 1 << 30);

class ThresholdAutoscaler : public Scheduler {
 public:
  explicit ThresholdAutoscaler(ThresholdConfig cfg = {}) : cfg_(cfg) {}
  std::string name() const override { return "threshold-autoscaler"; }
  Decision decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) override;

  /// Marks services as just scaled so the cooldown also covers external scale-ups.
  void note_scaled(std::size_t service, Tick t);

 private:
  ThresholdConfig cfg_;
  std::vector<Tick> last_;
};

/// Re-runs the GA+RL search when the offered load moved by more than
/// `load_change` since the last search (checked every decision).
class HybridScheduler : public Scheduler {
 public:
  HybridScheduler(hybrid::HybridConfig cfg, workload::WorkloadScenario scenario, double load_change = 0.25,
                  std::shared_ptr<drl::Policy> policy = nullptr);
  std::string name() const override { return "hybrid"; }
  Decision decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) override;

  int searches() const { return searches_; }
  const std::vector<hybrid::GenerationRow>& last_trace() const { return trace_; }

 private:
  hybrid::HybridConfig cfg_;
  workload::WorkloadScenario scenario_;
  double load_change_;
  std::shared_ptr<drl::Policy> policy_;
  double planned_rate_ = -1.0;
  int searches_ = 0;
  std::vector<hybrid::GenerationRow> trace_;
};

/// Greedy actions from a trained policy.
class DrlScheduler : public Scheduler {
 public:
  DrlScheduler(drl::Policy policy, drl::SchedulingEnvConfig cfg) : policy_(std::move(policy)), cfg_(cfg) {}
  std::string name() const override { return "drl"; }
  Decision decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) override;

 private:
  drl::Policy policy_;
  drl::SchedulingEnvConfig cfg_;
  Rng rng_{0};
};

struct ProactiveConfig {
  double burst_threshold = 1.5;  // warn when predicted > threshold * recent mean
  Tick check_every = 5;
  Tick hold = 60;                // ticks between proactive scale-ups
};

/// Wraps a scheduler with predictor burst warnings: on a warning, each
/// service is scaled to ceil(instances * predicted / baseline) right away,
/// and the inner scheduler's scale-downs are held back for `hold` ticks.
class ProactiveScheduler : public Scheduler {
 public:
  ProactiveScheduler(std::unique_ptr<Scheduler> inner, lstm::Model model, workload::WorkloadScenario scenario,
                     ProactiveConfig cfg = {});
  ProactiveScheduler(const ProactiveScheduler&) = delete;
  ProactiveScheduler& operator=(const ProactiveScheduler&) = delete;
  std::string name() const override { return inner_->name() + "+predictor"; }
  Decision decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) override;
  std::optional<Decision> on_tick(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t,
                                  double volume) override;

  int warnings() const { return warnings_; }
  Tick first_warning() const { return first_warning_; }

 private:
  std::unique_ptr<Scheduler> inner_;
  lstm::Model model_;
  workload::WorkloadScenario scenario_;
  ProactiveConfig cfg_;
  workload::VolumeHistory history_;
  workload::MarketTape tape_;
  Tick last_boost_ = -1;
  int warnings_ = 0;
  Tick first_warning_ = -1;
};

}  // namespace tradesim::sched
