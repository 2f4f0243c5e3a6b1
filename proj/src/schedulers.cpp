#include "tradesim/schedulers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tradesim::sched {

std::vector<std::vector<int>> RoundRobinScheduler::layout(const std::vector<int>& counts, std::size_t nodes) {
  std::vector<std::vector<int>> p(counts.size(), std::vector<int>(nodes, 0));
  std::size_t next = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    for (int i = 0; i < counts[s]; ++i) {
      ++p[s][next % nodes];
      ++next;
    }
  }
  return p;
}

Decision RoundRobinScheduler::decide(const cluster::SystemState&, const cluster::ClusterSim& sim, Tick) {
  Decision d;
  if (placed_) return d;
  placed_ = true;
  hybrid::Chromosome x;
  x.placement = layout(sim.instance_counts(), sim.topology().node_count());
  x.quota = sim.service_quota();
  x.priority = sim.service_priority();
  if (x.placement != sim.placement_matrix()) d.reconfigure = std::move(x);
  return d;
}

Decision RandomScheduler::decide(const cluster::SystemState&, const cluster::ClusterSim& sim, Tick) {
  Decision d;
  const auto counts = sim.instance_counts();
  const std::size_t k = counts.size();
  d.action.instance_delta.assign(k, 0);
  d.action.quota = sim.service_quota();
  for (std::size_t s = 0; s < k; ++s) {
    int delta = static_cast<int>(rng_.below(3)) - 1;
    if (delta < 0 && counts[s] <= 1) delta = 0;
    if (delta > 0 && counts[s] >= sim.topology().services[s].max_instances) delta = 0;
    d.action.instance_delta[s] = delta;
    if (rng_.bernoulli(0.3)) d.action.quota[s] = rng_.uniform(0.05, 0.5);
  }
  return d;
}

cluster::SchedulingAction threshold_action(const cluster::SystemState& observed, Tick t, const ThresholdConfig& cfg,
                                           std::vector<Tick>& last_change, std::span<const int> counts,
                                           int max_instances) {
  const std::size_t k = observed.service_count;
  last_change.resize(k, -1);
  cluster::SchedulingAction a;
  std::vector<int> delta(k, 0);
  bool any = false;
  for (std::size_t s = 0; s < k; ++s) {
    if (last_change[s] >= 0 && t - last_change[s] < cfg.cooldown) continue;
    const double u = observed.service_util[s];
    int d = 0;
    if (u > cfg.scale_up) d = 1;
    if (u < cfg.scale_down) d = -1;
    if (!counts.empty()) {
      if (d < 0 && counts[s] <= 1) d = 0;
      if (d > 0 && counts[s] >= max_instances) d = 0;
    }
    if (d == 0) continue;
    delta[s] = d;
    last_change[s] = t;
    any = true;
  }
  if (any) a.instance_delta = std::move(delta);
  return a;
}

Decision ThresholdAutoscaler::decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) {
  const auto counts = sim.instance_counts();
  int max_inst = 1;
  for (const auto& s : sim.topology().services) max_inst = std::max(max_inst, s.max_instances);
  return {threshold_action(observed, t, cfg_, last_, counts, max_inst), std::nullopt};
}

void ThresholdAutoscaler::note_scaled(std::size_t service, Tick t) {
  if (last_.size() <= service) last_.resize(service + 1, -1);
  last_[service] = t;
}

// ---------------------------------------------------------------------------

HybridScheduler::HybridScheduler(hybrid::HybridConfig cfg, workload::WorkloadScenario scenario, double load_change,
                                 std::shared_ptr<drl::Policy> policy)
    : cfg_(std::move(cfg)), scenario_(std::move(scenario)), load_change_(load_change), policy_(std::move(policy)) {
  cfg_.validate();
}

Decision HybridScheduler::decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) {
  Decision d;
  double rate = 0.0;
  if (t == 0) {
    rate = workload::rate_profile(scenario_, 0);
  } else {
    rate = std::accumulate(observed.load.begin(), observed.load.end(), 0.0) / scenario_.tick_length;
  }
  if (planned_rate_ >= 0.0 && std::fabs(rate - planned_rate_) <= load_change_ * std::max(planned_rate_, 1e-9)) return d;

  hybrid::EvalSpec spec;
  spec.topology = sim.topology();
  spec.topology.latency.jitter = false;
  spec.topology.options.noise_std = 0.0;
  spec.scenario = scenario_;
  spec.scenario.ramp.reset();
  spec.scenario.tidal_profile.clear();
  spec.scenario.bursts.clear();
  spec.scenario.base_rate = std::max(rate, 1.0);
  spec.scenario.peak_rate = spec.scenario.base_rate;
  spec.scenario.horizon = cfg_.eval_ticks;
  spec.start_tick = 0;
  spec.ticks = cfg_.eval_ticks;
  spec.seed = derive_seed(cfg_.seed, 21);
  spec.scale = cfg_.eval_scale;
  spec.backlog = observed.queue_len;
  spec.weights = cfg_.weights;

  const hybrid::Chromosome current = hybrid::from_sim(sim);
  const auto limits = hybrid::limits_from(spec.topology, cfg_.grid);
  hybrid::HybridConfig run = cfg_;
  run.seed = derive_seed(cfg_.seed, 22, static_cast<std::uint64_t>(searches_));
  hybrid::HybridOptions opts;
  if (cfg_.rl_refine) {
    if (!policy_) {
      Rng init(derive_seed(cfg_.seed, 31));
      policy_ = std::make_shared<drl::Policy>(hybrid::refine_shape(current), static_cast<int>(current.services()), init);
    }
    opts.policy = policy_.get();
  }
  const hybrid::Evaluator eval = [&spec](const hybrid::Chromosome& x) { return hybrid::rollout(x, spec); };
  auto res = hybrid::hybrid_scheduling(current, eval, limits, run, opts);
  trace_ = std::move(res.trace);
  ++searches_;
  planned_rate_ = rate;
  if (!(res.best == current)) d.reconfigure = std::move(res.best);
  return d;
}

Decision DrlScheduler::decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick) {
  const nn::Vec x = drl::encode_state(observed, cfg_.encode);
  const auto a = policy_.act(x, drl::Mode::kGreedy, rng_);
  return {drl::decode_action(a, observed, sim, cfg_), std::nullopt};
}

// ---------------------------------------------------------------------------

ProactiveScheduler::ProactiveScheduler(std::unique_ptr<Scheduler> inner, lstm::Model model,
                                       workload::WorkloadScenario scenario, ProactiveConfig cfg)
    : inner_(std::move(inner)), model_(std::move(model)), scenario_(std::move(scenario)), cfg_(cfg),
      tape_(scenario_, 0) {
  history_.clock = scenario_.clock;
  history_.tick_length = scenario_.tick_length;
}

Decision ProactiveScheduler::decide(const cluster::SystemState& observed, const cluster::ClusterSim& sim, Tick t) {
  Decision d = inner_->decide(observed, sim, t);
  const bool holding = last_boost_ >= 0 && t - last_boost_ < cfg_.hold;
  if (holding) {
    for (int& v : d.action.instance_delta) v = std::max(v, 0);
  }
  return d;
}

std::optional<Decision> ProactiveScheduler::on_tick(const cluster::SystemState& observed, const cluster::ClusterSim& sim,
                                                    Tick t, double volume) {
  tape_.record(history_, t, volume);
  if (auto inner = inner_->on_tick(observed, sim, t, volume)) return inner;
  if (t % cfg_.check_every != 0) return std::nullopt;
  if (last_boost_ >= 0 && t - last_boost_ < cfg_.hold) return std::nullopt;
  lstm::Forecast f;
  try {
    f = lstm::predict_and_warn(history_, model_, cfg_.burst_threshold);
  } catch (const WarmupError&) {
    return std::nullopt;
  }
  if (!f.burst_flag || !(f.baseline > 0.0)) return std::nullopt;
  ++warnings_;
  if (first_warning_ < 0) first_warning_ = t;
  const double factor = f.predicted / f.baseline;
  const auto counts = sim.instance_counts();
  Decision d;
  d.action.instance_delta.assign(counts.size(), 0);
  bool any = false;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    const int cap = sim.topology().services[s].max_instances;
    const int target = std::min(cap, static_cast<int>(std::ceil(counts[s] * factor)));
    d.action.instance_delta[s] = std::max(0, target - counts[s]);
    any = any || d.action.instance_delta[s] > 0;
    if (auto* ts = dynamic_cast<ThresholdAutoscaler*>(inner_.get()); ts != nullptr && d.action.instance_delta[s] > 0) {
      ts->note_scaled(s, t);
    }
  }
  if (!any) return std::nullopt;
  last_boost_ = t;
  return d;
}

}  // namespace tradesim::sched
