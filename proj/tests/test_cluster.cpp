#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "doctest.h"
#include "tradesim/cluster.hpp"
#include "tradesim/metrics.hpp"
#include "tradesim/workload.hpp"

using namespace tradesim;
using namespace tradesim::cluster;

namespace {

Topology small_topology(std::size_t nodes = 2, std::size_t services = 2, double quota = 0.3) {
  Topology t;
  t.nodes.assign(nodes, NodeSpec{1000.0, 16384.0, 100.0});
  for (std::size_t s = 0; s < services; ++s) {
    ServiceSpec sp;
    sp.name = "svc" + std::to_string(s);
    sp.default_quota = quota;
    sp.max_instances = 6;
    t.services.push_back(sp);
    t.placement.push_back({static_cast<int>(s), static_cast<int>(s % nodes), quota, 0.5});
  }
  return t;
}

std::vector<workload::Request> batch(Tick t, std::uint32_t service, int count, double work) {
  std::vector<workload::Request> out;
  for (int i = 0; i < count; ++i) out.push_back({t, service, work, 1000.0});
  return out;
}

SchedulingAction random_action(Rng& rng, std::size_t k, std::size_t n) {
  SchedulingAction a;
  if (rng.bernoulli(0.5)) {
    a.instance_delta.resize(k);
    for (auto& d : a.instance_delta) d = static_cast<int>(rng.below(5)) - 2;
  }
  if (rng.bernoulli(0.3)) {
    a.quota.resize(k);
    for (auto& q : a.quota) q = rng.uniform(-0.2, 1.3);
  }
  if (rng.bernoulli(0.3)) {
    a.priority.resize(k);
    for (auto& p : a.priority) p = rng.uniform(-0.5, 1.5);
  }
  if (rng.bernoulli(0.3)) {
    a.migration.assign(k, std::vector<std::uint8_t>(n, 0));
    a.migration[rng.below(k)][rng.below(n)] = 1;
  }
  return a;
}

}  // namespace

TEST_CASE("uncontended latency components") {
  LatencyModel m;
  m.jitter = false;
  CHECK(service_latency(m, 0.0, 0.0, nullptr) == 85.0);
  CHECK(service_latency(m, 0.0, 0.8, nullptr) == doctest::Approx(65.0).epsilon(1e-15));
  // contention scales the processing component only
  CHECK(service_latency(m, 0.5, 0.0, nullptr) == doctest::Approx(15.0 + 90.0 + 25.0));
  // saturates at rho_cap instead of blowing up
  CHECK(std::isfinite(service_latency(m, 1.0, 0.0, nullptr)));
  CHECK(service_latency(m, 1.0, 0.0, nullptr) == service_latency(m, 5.0, 0.0, nullptr));
}

TEST_CASE("one request to an idle instance records 85 ms") {
  auto topo = small_topology();
  topo.latency.jitter = false;
  ClusterSim sim(topo);
  Rng rng(1);
  auto reqs = batch(0, 0, 1, 2.0);
  sim.step(SchedulingAction::noop(), reqs, rng);
  REQUIRE(sim.latency_samples().size() == 1);
  CHECK(sim.latency_samples()[0] == 85.0);
}

TEST_CASE("calibrated jitter gives mean 85 and p95 near 120") {
  LatencyModel m;
  const double s = m.effective_sigma();
  // closed form of the mean-one lognormal quantile
  CHECK(std::exp(s * normal_quantile(0.95) - 0.5 * s * s) == doctest::Approx(120.0 / 85.0).epsilon(1e-12));
  Rng rng(2024);
  std::vector<double> xs(200000);
  for (auto& x : xs) x = service_latency(m, 0.0, 0.0, &rng);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  CHECK(mean == doctest::Approx(85.0).epsilon(0.01));
  CHECK(metrics::percentile(xs, 0.95) == doctest::Approx(120.0).epsilon(0.02));
}

TEST_CASE("reference utilization calibration hits the requested ratio") {
  LatencyModel m;
  m.jitter = false;
  const double rho = calibrate_reference_utilization(m, 0.4, 2.0, 3.0);
  const double ratio = service_latency(m, 2.0 * rho, 0, nullptr) / service_latency(m, 0.4 * rho, 0, nullptr);
  CHECK(ratio == doctest::Approx(3.0).epsilon(1e-9));
  CHECK_THROWS(calibrate_reference_utilization(m, 0.4, 2.0, 100.0));
}

TEST_CASE("reward arithmetic") {
  RewardSpec w;
  w.w1 = w.w2 = w.w3 = 1.0;
  const std::vector<double> lat{100.0}, util{0.9};
  CHECK(reward_from_terms(lat, util, 0.1, w) == doctest::Approx(-2.3).epsilon(1e-14));

  RewardSpec d;
  const std::vector<double> zero{0.0, 0.0}, at_target{0.7, 0.7};
  CHECK(reward_from_terms(zero, at_target, 0.0, d) == 0.0);

  ActionEffect e;
  e.instances_created = 2;
  e.migrations = 1;
  e.quota_change = 0.4;
  CHECK(scheduling_cost(e, d) == doctest::Approx(0.02 + 0.02 + 0.002));
}

TEST_CASE("reward is never positive, zero only when every term vanishes") {
  Rng rng(5);
  RewardSpec spec;
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> lat(3), util(4);
    for (auto& x : lat) x = rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.0, 500.0);
    for (auto& u : util) u = rng.bernoulli(0.2) ? spec.u_target : rng.uniform();
    const double cost = rng.bernoulli(0.3) ? 0.0 : rng.uniform(0.0, 2.0);
    const double r = reward_from_terms(lat, util, cost, spec);
    CHECK(r <= 0.0);
    const bool all_zero = std::all_of(lat.begin(), lat.end(), [](double x) { return x == 0.0; }) &&
                          std::all_of(util.begin(), util.end(), [&](double u) { return u == spec.u_target; }) &&
                          cost == 0.0;
    CHECK((r == 0.0) == all_zero);
  }
}

TEST_CASE("fresh cluster observes zeros and repeated observation is stable") {
  ClusterSim sim(small_topology());
  const auto s = sim.observe_state();
  for (double x : s.load) CHECK(x == 0.0);
  for (double x : s.queue_len) CHECK(x == 0.0);
  CHECK(s == sim.observe_state());
  const auto c = encode_compact_state(s, 1000.0);
  for (double x : c) CHECK(x == 0.0);
  CHECK(s.d_l() == 2);
  CHECK(s.d_r() == 6);
  CHECK(s.d_h() == 4);
  CHECK(s.d_p() == 4);
}

TEST_CASE("observed load is the per-service request count") {
  ClusterSim sim(small_topology());
  Rng rng(3);
  auto reqs = batch(0, 0, 7, 1.0);
  auto more = batch(0, 1, 3, 1.0);
  reqs.insert(reqs.end(), more.begin(), more.end());
  const auto s = sim.step(SchedulingAction::noop(), reqs, rng);
  CHECK(s.load[0] == 7.0);
  CHECK(s.load[1] == 3.0);
  CHECK(sim.observe_state() == s);
}

TEST_CASE("history fields are the windowed mean and variance of the load") {
  auto topo = small_topology();
  topo.options.history_window = 5;
  ClusterSim sim(topo);
  Rng rng(4), draws(11);
  std::deque<double> window;
  for (Tick t = 0; t < 20; ++t) {
    const int c = static_cast<int>(draws.below(20));
    window.push_back(c);
    if (window.size() > 5) window.pop_front();
    const auto s = sim.step(SchedulingAction::noop(), batch(t, 0, c, 0.5), rng);
    double mean = 0.0;
    for (double v : window) mean += v;
    mean /= static_cast<double>(window.size());
    double var = 0.0;
    for (double v : window) var += (v - mean) * (v - mean);
    var /= static_cast<double>(window.size());
    CHECK(s.hist_mean[0] == doctest::Approx(mean));
    CHECK(s.hist_var[0] == doctest::Approx(var));
  }
}

TEST_CASE("idle steps decay utilization toward zero") {
  auto topo = small_topology();
  topo.options.noise_std = 0.0;
  ClusterSim sim(topo);
  Rng rng(1);
  for (Tick t = 0; t < 5; ++t) sim.step({}, batch(t, 0, 200, 2.0), rng);
  double prev = sim.observe_state().util(0, kCpu);
  REQUIRE(prev > 0.0);
  for (int i = 0; i < 40; ++i) {
    const auto s = sim.step({}, {}, rng);
    CHECK(s.util(0, kCpu) <= prev);
    prev = s.util(0, kCpu);
  }
  CHECK(prev < 1e-6);
  CHECK(sim.observe_state().queue_len[0] == 0.0);
}

TEST_CASE("overload grows the queue as the fluid backlog oracle predicts") {
  Topology topo;
  topo.nodes = {NodeSpec{1000.0, 16384.0, 100.0}};
  topo.services = {ServiceSpec{"solo", 512.0, 0.05, 1.0, 0.5, 1}};
  topo.placement = {{0, 0, 1.0, 0.5}};
  ClusterSim sim(topo);
  Rng rng(8);

  workload::WorkloadScenario sc;
  sc.service_mix = {1.0};
  sc.service_work = {2.0};
  sc.service_payload = {100.0};
  sc.base_rate = 1000.0;  // 2000 CPU-ms offered per tick against 1000 of capacity
  sc.peak_rate = 1000.0;
  sc.horizon = 100;
  sc.seed = 77;

  double backlog = 0.0;
  double prev_len = 0.0;
  for (Tick t = 0; t < sc.horizon; ++t) {
    const auto reqs = workload::generate_tick(sc, t);
    double work = 0.0;
    for (const auto& r : reqs) work += r.work_units;
    backlog = std::max(0.0, backlog + work - 1000.0);
    const auto s = sim.step({}, reqs, rng);
    CHECK(sim.instances()[0].queue_work == doctest::Approx(backlog).epsilon(1e-9));
    CHECK(s.queue_len[0] >= prev_len);
    prev_len = s.queue_len[0];
  }
  CHECK(prev_len > 1000.0);
}

TEST_CASE("conservation and quota sums under random actions") {
  auto topo = small_topology(3, 3, 0.4);
  ClusterSim sim(topo);
  Rng rng(21), act(22);
  workload::WorkloadScenario sc;
  sc.service_mix = {1.0, 2.0, 1.0};
  sc.service_work = {3.0, 2.0, 5.0};
  sc.service_payload = {1.0, 1.0, 1.0};
  sc.base_rate = 300.0;
  sc.horizon = 400;
  for (Tick t = 0; t < sc.horizon; ++t) {
    const auto a = random_action(act, 3, 3);
    sim.step(a, workload::generate_tick(sc, t), rng);
    const auto& acc = sim.accounting();
    CHECK(acc.dispatched == acc.completed + acc.queued);
    for (double q : sim.node_quota_sums()) CHECK(q <= 1.0 + 1e-12);
    for (int c : sim.instance_counts()) {
      CHECK(c >= 1);
      CHECK(c <= 6);
    }
    const auto s = sim.observe_state();
    for (double u : s.utilization) {
      CHECK(u >= 0.0);
      CHECK(u <= 1.0);
    }
    for (double q : s.queue_len) CHECK(q >= 0.0);
  }
  // drain: every request is eventually completed
  for (Tick t = 0; t < 200; ++t) sim.step({}, {}, rng);
  CHECK(sim.accounting().queued == 0);
  CHECK(sim.accounting().completed == sim.accounting().dispatched);
}

TEST_CASE("constant load below capacity reaches a utilization fixed point") {
  auto topo = small_topology();
  topo.options.noise_std = 0.0;
  ClusterSim sim(topo);
  Rng rng(1);
  std::vector<double> prev;
  double diff = 1.0;
  for (Tick t = 0; t < 1000; ++t) {
    auto reqs = batch(t, 0, 50, 2.0);
    const auto s = sim.step({}, reqs, rng);
    if (!prev.empty()) {
      diff = 0.0;
      for (std::size_t i = 0; i < prev.size(); ++i) diff = std::max(diff, std::fabs(prev[i] - s.utilization[i]));
    }
    prev = s.utilization;
  }
  CHECK(diff < 1e-6);
}

TEST_CASE("identical seeds give identical trajectories") {
  auto run = [](std::uint64_t seed) {
    ClusterSim sim(small_topology(3, 3));
    Rng rng(seed), act(seed + 1);
    workload::WorkloadScenario sc;
    sc.service_mix = {1.0, 1.0, 1.0};
    sc.service_work = {2.0, 2.0, 2.0};
    sc.service_payload = {1.0, 1.0, 1.0};
    sc.base_rate = 400.0;
    sc.horizon = 150;
    std::vector<SystemState> out;
    for (Tick t = 0; t < sc.horizon; ++t) out.push_back(sim.step(random_action(act, 3, 3), workload::generate_tick(sc, t), rng));
    return std::make_pair(out, sim.latency_samples());
  };
  CHECK(run(5) == run(5));
  CHECK(run(5).second != run(6).second);
}

TEST_CASE("observation noise touches only the observed copy") {
  auto topo = small_topology();
  topo.options.noise_std = 0.05;
  ClusterSim sim(topo);
  Rng rng(2);
  sim.step({}, batch(0, 0, 100, 2.0), rng);
  CHECK(sim.observe_state().utilization != sim.true_state().utilization);
  CHECK(sim.observe_state().queue_len == sim.true_state().queue_len);

  topo.options.noise_std = 0.0;
  ClusterSim quiet(topo);
  quiet.step({}, batch(0, 0, 100, 2.0), rng);
  CHECK(quiet.observe_state() == quiet.true_state());
}

TEST_CASE("compact state bounds and full CPU") {
  SystemState s;
  s.node_count = 2;
  s.utilization = {1.0, 0.5, 0.2, 1.0, 0.3, 0.0};
  s.queue_len = {500.0, 500.0};
  const auto c = encode_compact_state(s, 1000.0);
  CHECK(c[0] == 1.0);
  CHECK(c[1] == doctest::Approx(0.4));
  CHECK(c[2] == doctest::Approx(0.1));
  CHECK(c[3] == doctest::Approx(1.0));
}

TEST_CASE("actions are clamped and reported") {
  ClusterSim sim(small_topology());
  Rng rng(1);
  SchedulingAction a;
  a.instance_delta = {-5, 10};
  a.priority = {2.0, -1.0};
  sim.step(a, {}, rng);
  const auto& e = sim.last_report().effect;
  CHECK(e.sanitized == 4);
  CHECK(sim.instance_counts() == std::vector<int>{1, 6});
  CHECK(e.instances_created == 5);
  CHECK(sim.service_priority() == std::vector<double>{1.0, 0.0});

  SchedulingAction wrong;
  wrong.quota = {0.5};  // wrong length
  sim.step(wrong, {}, rng);
  CHECK(sim.last_report().effect.sanitized == 1);
}

TEST_CASE("migration moves an instance to the requested node") {
  ClusterSim sim(small_topology());
  Rng rng(1);
  SchedulingAction a;
  a.migration = {{0, 1}, {0, 0}};
  sim.step(a, {}, rng);
  CHECK(sim.last_report().effect.migrations == 1);
  CHECK(sim.placement_matrix()[0] == std::vector<int>{0, 1});
}

TEST_CASE("reconfigure reaches the requested placement without losing requests") {
  ClusterSim sim(small_topology(2, 2, 0.2));
  Rng rng(1);
  sim.step({}, batch(0, 0, 3000, 2.0), rng);
  const auto queued = sim.accounting().queued;
  REQUIRE(queued > 0);
  std::vector<std::vector<int>> target{{0, 2}, {3, 0}};
  std::vector<double> quota{0.5, 0.3}, prio{0.9, 0.1};
  const auto e = sim.reconfigure(target, quota, prio);
  CHECK(sim.placement_matrix() == target);
  CHECK(e.instances_created == 5);
  CHECK(e.instances_removed == 2);
  for (double q : sim.node_quota_sums()) CHECK(q <= 1.0 + 1e-12);
  std::int64_t total = 0;
  for (const auto& inst : sim.instances()) total += static_cast<std::int64_t>(inst.queue.size());
  CHECK(total == queued);
  CHECK_THROWS(sim.reconfigure({{0, 0}, {1, 0}}, {}, {}));
}

TEST_CASE("topology JSON round trip and validation") {
  auto t = small_topology();
  t.latency.jitter_sigma = 0.2;
  t.options.burst_cap = 0.5;
  const auto back = topology_from_json(nlohmann::json::parse(to_json(t).dump()));
  CHECK(back == t);

  auto bad = to_json(t);
  bad["placement"][0]["node"] = 9;
  CHECK_THROWS_WITH_AS(topology_from_json(bad), doctest::Contains("node"), ConfigError);
  auto none = to_json(t);
  none["placement"] = nlohmann::json::array();
  CHECK_THROWS_AS(topology_from_json(none), ConfigError);
}

TEST_CASE("shipped market topology loads") {
  const auto t = load_topology(std::string(TRADESIM_CONFIGS) + "/topologies/market.json");
  CHECK(t.service_count() == 8);
  ClusterSim sim(t);
  for (double q : sim.node_quota_sums()) CHECK(q <= 1.0);
}
