#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "tradesim/experiment.hpp"
#include "tradesim/json_util.hpp"
#include "tradesim/schedulers.hpp"

using namespace tradesim;
using namespace tradesim::sched;

namespace {

cluster::SystemState state_with_util(std::vector<double> u) {
  cluster::SystemState s;
  s.service_count = u.size();
  s.service_util = std::move(u);
  return s;
}

cluster::Topology small_topology(std::size_t nodes, std::size_t services, double quota, int instances) {
  cluster::Topology t;
  t.nodes.assign(nodes, cluster::NodeSpec{1000.0, 16384.0, 100.0});
  for (std::size_t s = 0; s < services; ++s) {
    cluster::ServiceSpec sp;
    sp.name = "svc" + std::to_string(s);
    sp.default_quota = quota;
    sp.max_instances = 8;
    t.services.push_back(sp);
    for (int i = 0; i < instances; ++i) t.placement.push_back({static_cast<int>(s), 0, quota, 0.5});
  }
  return t;
}

workload::WorkloadScenario flat(double rate, std::size_t services, Tick horizon) {
  workload::WorkloadScenario s;
  s.base_rate = rate;
  s.peak_rate = rate;
  s.horizon = horizon;
  s.service_mix.assign(services, 1.0);
  s.service_work.assign(services, 2.0);
  s.service_payload.assign(services, 1000.0);
  return s;
}

}  // namespace

TEST_CASE("threshold autoscaler examples") {
  ThresholdConfig cfg;
  std::vector<Tick> last;
  CHECK(threshold_action(state_with_util({0.5, 0.5, 0.5}), 100, cfg, last).is_noop());

  auto a = threshold_action(state_with_util({0.5, 0.9, 0.5}), 100, cfg, last);
  CHECK(a.instance_delta == std::vector<int>{0, 1, 0});
  CHECK(last[1] == 100);

  // inside the cooldown nothing happens for that service
  CHECK(threshold_action(state_with_util({0.5, 0.95, 0.5}), 110, cfg, last).is_noop());
  a = threshold_action(state_with_util({0.5, 0.95, 0.1}), 110, cfg, last);
  CHECK(a.instance_delta == std::vector<int>{0, 0, -1});
  CHECK(threshold_action(state_with_util({0.5, 0.95, 0.5}), 130, cfg, last).instance_delta == std::vector<int>{0, 1, 0});

  // bounds from the current counts
  std::vector<Tick> fresh;
  const std::vector<int> counts{1, 8};
  CHECK(threshold_action(state_with_util({0.1, 0.99}), 0, cfg, fresh, counts, 8).is_noop());
}

TEST_CASE("round-robin layout") {
  const auto p = RoundRobinScheduler::layout({3, 2, 1}, 4);
  CHECK(p == std::vector<std::vector<int>>{{1, 1, 1, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}});
  const auto q = RoundRobinScheduler::layout({5}, 2);
  CHECK(q == std::vector<std::vector<int>>{{3, 2}});

  cluster::ClusterSim sim(small_topology(3, 2, 0.2, 3));
  RoundRobinScheduler rr;
  const auto d = rr.decide(sim.observe_state(), sim, 0);
  REQUIRE(d.reconfigure.has_value());
  CHECK(d.reconfigure->placement == std::vector<std::vector<int>>{{1, 1, 1}, {1, 1, 1}});
  CHECK_FALSE(rr.decide(sim.observe_state(), sim, 10).reconfigure.has_value());
}

TEST_CASE("random scheduler stays within instance bounds") {
  cluster::ClusterSim sim(small_topology(2, 3, 0.1, 1));
  RandomScheduler r(5);
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto d = r.decide(sim.observe_state(), sim, t);
    const auto counts = sim.instance_counts();
    for (std::size_t s = 0; s < counts.size(); ++s) {
      CHECK(counts[s] + d.action.instance_delta[s] >= 1);
      CHECK(counts[s] + d.action.instance_delta[s] <= 8);
    }
    sim.step(d.action, {}, rng);
  }
}

TEST_CASE("proactive wrapper scales up on a warning and holds scale-downs") {
  const auto topo = small_topology(2, 2, 0.2, 1);
  const auto scenario = flat(100.0, 2, 400);
  lstm::Model model;
  model.params = lstm::LstmParams(lstm::LstmShape{18, 4, 1});
  model.params.flat.setZero();
  model.data.window = 20;
  model.data.seq_len = 2;
  model.data.seq_stride = 5;
  model.target_offset = 1e9;  // always predicts a surge

  ProactiveConfig cfg;
  cfg.burst_threshold = 1.5;
  cfg.check_every = 5;
  cfg.hold = 60;
  ThresholdConfig th;
  th.scale_down = 0.5;  // would scale down an idle cluster
  ProactiveScheduler p(std::make_unique<ThresholdAutoscaler>(th), model, scenario, cfg);
  cluster::ClusterSim sim(topo);
  Rng rng(2);
  Tick first = -1;
  for (Tick t = 0; t < 40; ++t) {
    const auto reqs = workload::generate_tick(scenario, t);
    sim.step({}, reqs, rng);
    if (auto d = p.on_tick(sim.observe_state(), sim, t, static_cast<double>(reqs.size()))) {
      if (first < 0) {
        first = t;
        for (int delta : d->action.instance_delta) CHECK(delta == 7);  // capped at max_instances
      }
    }
  }
  // warm-up: window + (seq_len - 1) * stride ticks of history
  CHECK(first == 25);
  CHECK(p.first_warning() == 25);
  const auto d = p.decide(state_with_util({0.0, 0.0}), sim, 40);
  for (int delta : d.action.instance_delta) CHECK(delta >= 0);
  CHECK(p.name() == "threshold-autoscaler+predictor");
}

TEST_CASE("run: round-robin on a flat load below capacity") {
  cluster::Topology topo = small_topology(4, 2, 0.5, 4);
  topo.latency.jitter = false;
  const auto scenario = flat(200.0, 2, 120);  // 400 CPU-ms per tick against 4000 available
  RoundRobinScheduler rr;
  const auto out = experiment::run(topo, scenario, rr, {}, 3);
  CHECK(out.summary.p95_ms <= 2.0 * topo.latency.uncontended_ms());
  CHECK(out.summary.mean_latency_ms >= topo.latency.uncontended_ms() - 1e-9);
  CHECK(out.summary.still_queued == 0);
  CHECK(out.summary.achieved_tps == doctest::Approx(200.0).epsilon(0.05));

  RoundRobinScheduler rr2;
  CHECK(experiment::run(topo, scenario, rr2, {}, 3).trace_csv == out.trace_csv);
}

TEST_CASE("run: threshold autoscaler reacts to an overload") {
  cluster::Topology topo = small_topology(4, 2, 0.25, 1);
  auto scenario = flat(600.0, 2, 200);  // 1200 CPU-ms per tick against 500 allocated
  ThresholdAutoscaler th;
  const auto out = experiment::run(topo, scenario, th, {}, 4);
  CHECK(out.summary.first_scale_up_tick >= 0);
  RoundRobinScheduler rr;
  const auto base = experiment::run(topo, scenario, rr, {}, 4);
  CHECK(base.summary.first_scale_up_tick == -1);
  CHECK(out.summary.backlog_integral < base.summary.backlog_integral);
}

TEST_CASE("experiment config echo reproduces the config") {
  const std::string dir = TRADESIM_CONFIGS;
  experiment::ExperimentConfig c;
  c.scenario = dir + "/scenarios/flat_5000.json";
  c.topology = dir + "/topologies/market.json";
  c.scheduler = "threshold-autoscaler";
  c.seed = 9;
  const auto back = experiment::experiment_from_json(experiment::to_json(c));
  CHECK(experiment::to_json(back) == experiment::to_json(c));

  c.scheduler = "nope";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.scheduler = "round-robin";
  c.scenario = dir + "/scenarios/missing.json";
  CHECK_THROWS_AS(c.validate(), ConfigError);

  nlohmann::json settings = {{"cooldown", 12}};
  const auto topo = cluster::load_topology(dir + "/topologies/market.json");
  const auto sc = workload::load_scenario(dir + "/scenarios/flat_5000.json");
  auto s = experiment::make_scheduler("threshold-autoscaler", settings, sc, topo, 1);
  CHECK(settings == nlohmann::json{{"scale_up", 0.8}, {"scale_down", 0.3}, {"cooldown", 12}});
  nlohmann::json bad = {{"scale_up", 0.2}, {"scale_down", 0.3}};
  CHECK_THROWS_AS(experiment::make_scheduler("threshold-autoscaler", bad, sc, topo, 1), ConfigError);
  nlohmann::json none;
  CHECK_THROWS_AS(experiment::make_scheduler("drl", none, sc, topo, 1), ConfigError);
}
