#include "tradesim/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tradesim/json_util.hpp"
#include "tradesim/metrics.hpp"

namespace tradesim::hybrid {

namespace {

constexpr double kLoadTol = 1e-9;

double grid_floor(double v, double grid) { return std::floor(v / grid + 1e-9) * grid; }

double min_quota_of(const Limits& lim) {
  return lim.grid > 0.0 ? std::ceil(lim.min_quota / lim.grid - 1e-9) * lim.grid : lim.min_quota;
}

bool on_grid(double v, double grid) { return std::fabs(v / grid - std::round(v / grid)) < 1e-9; }

std::vector<double> flatten(const Chromosome& x) {
  std::vector<double> key;
  key.reserve(x.gene_count());
  for (const auto& row : x.placement) key.insert(key.end(), row.begin(), row.end());
  key.insert(key.end(), x.quota.begin(), x.quota.end());
  key.insert(key.end(), x.priority.begin(), x.priority.end());
  return key;
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

}  // namespace

// ---------------------------------------------------------------------------
// Chromosome

int Chromosome::instances(std::size_t s) const {
  return std::accumulate(placement[s].begin(), placement[s].end(), 0);
}

Limits limits_from(const cluster::Topology& t, double grid) {
  Limits l;
  l.max_instances = 1;
  for (const auto& s : t.services) l.max_instances = std::max(l.max_instances, s.max_instances);
  l.min_quota = t.options.min_quota;
  l.grid = grid;
  return l;
}

std::vector<double> node_loads(const Chromosome& x) {
  std::vector<double> load(x.nodes(), 0.0);
  for (std::size_t s = 0; s < x.services(); ++s) {
    for (std::size_t j = 0; j < x.nodes(); ++j) load[j] += x.placement[s][j] * x.quota[s];
  }
  return load;
}

bool satisfies_invariants(const Chromosome& x, const Limits& lim) {
  const std::size_t k = x.services();
  const std::size_t n = x.nodes();
  if (k == 0 || n == 0 || x.quota.size() != k || x.priority.size() != k) return false;
  const double qmin = min_quota_of(lim);
  for (std::size_t s = 0; s < k; ++s) {
    if (x.placement[s].size() != n) return false;
    for (int c : x.placement[s]) {
      if (c < 0) return false;
    }
    const int total = x.instances(s);
    if (total < 1 || total > lim.max_instances) return false;
    if (!(x.quota[s] >= qmin - 1e-12 && x.quota[s] <= 1.0)) return false;
    if (!(x.priority[s] >= 0.0 && x.priority[s] <= 1.0)) return false;
    if (lim.grid > 0.0 && (!on_grid(x.quota[s], lim.grid) || !on_grid(x.priority[s], lim.grid))) return false;
  }
  for (double l : node_loads(x)) {
    if (l > 1.0 + kLoadTol) return false;
  }
  return true;
}

bool repair(Chromosome& x, const Limits& lim) {
  const std::size_t k = x.services();
  const std::size_t n = x.nodes();
  if (k == 0 || n == 0) return false;
  x.quota.resize(k, lim.min_quota);
  x.priority.resize(k, 0.5);
  const double qmin = min_quota_of(lim);
  if (qmin > 1.0) return false;

  for (std::size_t s = 0; s < k; ++s) {
    auto& row = x.placement[s];
    row.resize(n, 0);
    for (int& c : row) c = std::max(c, 0);
    while (x.instances(s) > lim.max_instances) {
      --*std::max_element(row.begin(), row.end());
    }
    double& q = x.quota[s];
    double& p = x.priority[s];
    if (!std::isfinite(q)) q = qmin;
    if (!std::isfinite(p)) p = 0.5;
    q = std::clamp(q, qmin, 1.0);
    p = std::clamp(p, 0.0, 1.0);
    if (lim.grid > 0.0) {
      if (!on_grid(q, lim.grid)) q = std::max(qmin, grid_floor(q, lim.grid));
      if (!on_grid(p, lim.grid)) p = std::clamp(std::round(p / lim.grid) * lim.grid, 0.0, 1.0);
    }
  }
  for (std::size_t s = 0; s < k; ++s) {
    if (x.instances(s) > 0) continue;
    const auto load = node_loads(x);
    const auto j = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    x.placement[s][j] = 1;
  }

  for (int guard = 0; guard < 10000; ++guard) {
    const auto load = node_loads(x);
    std::size_t worst = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (load[j] > 1.0 + kLoadTol && (worst == n || load[j] > load[worst])) worst = j;
    }
    if (worst == n) return satisfies_invariants(x, lim);
    const double factor = 1.0 / load[worst];
    bool floored = false;
    for (std::size_t s = 0; s < k; ++s) {
      if (x.placement[s][worst] == 0) continue;
      double q = x.quota[s] * factor;
      if (lim.grid > 0.0) q = grid_floor(q, lim.grid);
      if (q < qmin) {
        q = qmin;
        floored = true;
      }
      x.quota[s] = q;
    }
    if (!floored) continue;
    // Quotas are at their floor and the node is still full: drop an instance.
    double sum = 0.0;
    for (std::size_t s = 0; s < k; ++s) sum += x.placement[s][worst] * x.quota[s];
    if (sum <= 1.0 + kLoadTol) continue;
    int pick = -1;
    for (std::size_t s = 0; s < k; ++s) {
      if (x.placement[s][worst] == 0 || x.instances(s) <= 1) continue;
      if (pick < 0 || x.placement[s][worst] > x.placement[static_cast<std::size_t>(pick)][worst]) pick = static_cast<int>(s);
    }
    if (pick < 0) return false;
    --x.placement[static_cast<std::size_t>(pick)][worst];
  }
  return false;
}

Chromosome from_sim(const cluster::ClusterSim& sim) {
  Chromosome x;
  x.placement = sim.placement_matrix();
  x.quota = sim.service_quota();
  x.priority = sim.service_priority();
  return x;
}

Chromosome random_chromosome(std::size_t k, std::size_t n, const Limits& lim, Rng& rng) {
  Chromosome x;
  x.placement.assign(k, std::vector<int>(n, 0));
  x.quota.resize(k);
  x.priority.resize(k);
  const auto cap = static_cast<std::uint64_t>(std::min<std::size_t>(static_cast<std::size_t>(lim.max_instances), 2 * n));
  for (std::size_t s = 0; s < k; ++s) {
    const auto total = 1 + rng.below(cap);
    for (std::uint64_t i = 0; i < total; ++i) ++x.placement[s][rng.below(n)];
    x.quota[s] = rng.uniform(lim.min_quota, 0.5);
    x.priority[s] = rng.uniform();
  }
  repair(x, lim);
  return x;
}

// ---------------------------------------------------------------------------
// Fitness

void FitnessWeights::validate() const {
  if (!(w1 >= 0.0 && w2 >= 0.0 && w3 >= 0.0)) throw ConfigError("hybrid.weights", "weights must be >= 0");
  if (!(t_max > 0.0 && u_max > 0.0 && l_max > 0.0)) throw ConfigError("hybrid.weights", "normalizers must be > 0");
}

double fitness(const Objectives& o, const FitnessWeights& w) {
  if (!std::isfinite(o.t_ms) || !std::isfinite(o.u) || !std::isfinite(o.l)) return kInfeasible;
  const double l = std::clamp(o.l, 0.0, w.l_max);
  const double f = w.w1 * o.t_ms / w.t_max + w.w2 * (1.0 - o.u / w.u_max) + w.w3 * (1.0 - l / w.l_max);
  return std::isfinite(f) ? f : kInfeasible;
}

std::array<double, 3> objective_vector(const Objectives& o, const FitnessWeights& w) {
  return {o.t_ms, -o.u, -std::clamp(o.l, 0.0, w.l_max)};
}

Evaluation rollout(const Chromosome& x, const EvalSpec& spec) {
  Evaluation ev;
  cluster::ClusterSim sim(spec.topology);
  sim.set_record_latencies(false);
  try {
    sim.reconfigure(x.placement, x.quota, x.priority);
  } catch (const std::invalid_argument&) {
    return ev;
  }
  workload::WorkloadScenario sc = spec.scenario;
  const double f = spec.scale;
  sc.base_rate /= f;
  sc.peak_rate /= f;
  if (sc.ramp && sc.ramp->rate_per_user > 0.0) sc.ramp->rate_per_user /= f;
  for (double& w : sc.service_work) w *= f;
  for (double& p : sc.service_payload) p *= f;
  sc.horizon = std::max(sc.horizon, spec.start_tick + spec.ticks);

  Rng rng(spec.seed);
  Rng load_rng(derive_seed(spec.seed, 1));
  const std::size_t n = spec.topology.node_count();
  std::vector<double> node_cpu(n, 0.0);
  double latency_sum = 0.0, consumed = 0.0, allocated = 0.0;
  std::int64_t completed = 0;
  std::vector<workload::Request> reqs;
  for (Tick t = 0; t < spec.ticks; ++t) {
    reqs = workload::generate_tick(sc, spec.start_tick + t, load_rng);
    for (auto& r : reqs) r.arrival_tick = t;
    if (t == 0) {
      for (std::size_t s = 0; s < spec.backlog.size() && s < sc.service_count(); ++s) {
        const auto count = static_cast<std::int64_t>(std::llround(spec.backlog[s] / f));
        for (std::int64_t i = 0; i < count; ++i) {
          reqs.push_back({0, static_cast<std::uint32_t>(s), sc.service_work[s], sc.service_payload[s]});
        }
      }
    }
    sim.step(cluster::SchedulingAction::noop(), reqs, rng);
    const auto& rep = sim.last_report();
    latency_sum += rep.latency_sum_ms;
    completed += rep.completed;
    consumed += rep.cpu_consumed;
    allocated += rep.cpu_allocated;
    const auto& st = sim.true_state();
    for (std::size_t j = 0; j < n; ++j) node_cpu[j] += st.util(j, cluster::kCpu);
  }
  // Requests still waiting count with their age so far.
  const auto& opt = spec.topology.options;
  std::int64_t waiting = 0;
  for (const auto& inst : sim.instances()) {
    for (const auto& r : inst.queue) {
      latency_sum += static_cast<double>(sim.tick() - r.arrival_tick) * opt.tick_ms + spec.topology.latency.uncontended_ms();
      ++waiting;
    }
  }
  const auto served = completed + waiting;
  ev.objectives.t_ms = served > 0 ? latency_sum / static_cast<double>(served) : spec.topology.latency.uncontended_ms();
  ev.objectives.u = allocated > 0.0 ? consumed / allocated : 0.0;
  double mean = 0.0;
  for (double& v : node_cpu) {
    v /= static_cast<double>(spec.ticks);
    mean += v;
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : node_cpu) var += (v - mean) * (v - mean);
  const double cv = mean > 0.0 ? std::sqrt(var / static_cast<double>(n)) / mean : 0.0;
  ev.objectives.l = 1.0 - cv;
  ev.fitness = fitness(ev.objectives, spec.weights);
  ev.state = sim.true_state();
  return ev;
}

// ---------------------------------------------------------------------------
// GA operators

Rates adaptive_rates(double f_prime, double f_avg, double f_max) {
  if (f_max < f_avg) throw std::invalid_argument("adaptive_rates: f_max < f_avg");
  if (f_max == f_avg) return {0.9, 0.1};
  const double r = std::clamp((f_prime - f_avg) / (f_max - f_avg), 0.0, 1.0);
  // Integer numerators keep the unit cases exact.
  return {(9.0 - 6.0 * r) / 10.0, (100.0 - 70.0 * r) / 1000.0};
}

std::size_t tournament_select(std::span<const double> fitness, int size, Rng& rng) {
  if (fitness.empty()) throw std::invalid_argument("tournament_select: empty population");
  if (size < 1) throw std::invalid_argument("tournament_select: size must be >= 1");
  std::size_t best = rng.below(fitness.size());
  for (int i = 1; i < size; ++i) {
    const std::size_t c = rng.below(fitness.size());
    if (fitness[c] < fitness[best]) best = c;
  }
  return best;
}

const Chromosome& tournament_select(const std::vector<Chromosome>& population, std::span<const double> fitness,
                                    int size, Rng& rng) {
  if (population.size() != fitness.size()) throw std::invalid_argument("tournament_select: size mismatch");
  return population[tournament_select(fitness, size, rng)];
}

std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b, double pc, Rng& rng,
                                            const Limits& limits) {
  Chromosome c1 = a, c2 = b;
  if (!rng.bernoulli(pc)) return {c1, c2};
  for (std::size_t s = 0; s < a.services(); ++s) {
    for (std::size_t j = 0; j < a.nodes(); ++j) {
      if (rng.bernoulli(0.5)) std::swap(c1.placement[s][j], c2.placement[s][j]);
    }
  }
  for (std::size_t s = 0; s < a.services(); ++s) {
    if (rng.bernoulli(0.5)) std::swap(c1.quota[s], c2.quota[s]);
  }
  for (std::size_t s = 0; s < a.services(); ++s) {
    if (rng.bernoulli(0.5)) std::swap(c1.priority[s], c2.priority[s]);
  }
  if (!repair(c1, limits)) c1 = a;
  if (!repair(c2, limits)) c2 = b;
  return {std::move(c1), std::move(c2)};
}

Chromosome mutate(const Chromosome& x, double pm, Rng& rng, const Limits& limits, double sigma) {
  Chromosome y = x;
  for (std::size_t s = 0; s < y.services(); ++s) {
    for (std::size_t j = 0; j < y.nodes(); ++j) {
      if (!rng.bernoulli(pm)) continue;
      int d = rng.bernoulli(0.5) ? 1 : -1;
      const int total = y.instances(s);
      if (d < 0 && (y.placement[s][j] == 0 || total <= 1)) d = 1;
      if (d > 0 && total >= limits.max_instances) d = -1;
      if (y.placement[s][j] + d < 0 || (d < 0 && total <= 1)) continue;
      y.placement[s][j] += d;
    }
  }
  auto step = [&](double& v) {
    if (!rng.bernoulli(pm)) return;
    if (limits.grid > 0.0) {
      v += rng.bernoulli(0.5) ? limits.grid : -limits.grid;
    } else {
      v += sigma * rng.normal();
    }
    v = std::clamp(v, 0.0, 1.0);
  };
  for (double& q : y.quota) step(q);
  for (double& p : y.priority) step(p);
  if (!repair(y, limits)) return x;
  return y;
}

std::vector<std::size_t> select_top_k(std::span<const double> fitness, std::size_t k) {
  if (k > fitness.size()) throw std::invalid_argument("select_top_k: k exceeds population size");
  std::vector<std::size_t> idx(fitness.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto key = [&](std::size_t i) { return std::isnan(fitness[i]) ? kInfeasible : fitness[i]; };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  idx.resize(k);
  return idx;
}

namespace {

bool dominates(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  bool strict = false;
  for (std::size_t i = 0; i < 3; ++i) {
    if (a[i] > b[i]) return false;
    if (a[i] < b[i]) strict = true;
  }
  return strict;
}

bool finite3(const std::array<double, 3>& a) {
  return std::isfinite(a[0]) && std::isfinite(a[1]) && std::isfinite(a[2]);
}

}  // namespace

std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const std::array<double, 3>> obj) {
  const std::size_t n = obj.size();
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<int> count(n, 0);
  std::vector<std::size_t> bad;
  std::vector<std::vector<std::size_t>> fronts;
  std::vector<std::size_t> current;
  for (std::size_t i = 0; i < n; ++i) {
    if (!finite3(obj[i])) {
      bad.push_back(i);
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !finite3(obj[j])) continue;
      if (dominates(obj[i], obj[j])) {
        dominated[i].push_back(j);
      } else if (dominates(obj[j], obj[i])) {
        ++count[i];
      }
    }
    if (count[i] == 0) current.push_back(i);
  }
  while (!current.empty()) {
    std::vector<std::size_t> next;
    for (std::size_t i : current) {
      for (std::size_t j : dominated[i]) {
        if (--count[j] == 0) next.push_back(j);
      }
    }
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(current));
    current = std::move(next);
  }
  if (!bad.empty()) fronts.push_back(std::move(bad));
  return fronts;
}

LocalSearchResult local_search(const Chromosome& x, const Evaluation& fx, const Evaluator& eval, int budget,
                               const Limits& limits, double step) {
  if (budget < 1) throw std::invalid_argument("local_search: budget must be >= 1");
  LocalSearchResult res{x, fx, 0};
  const double d = limits.grid > 0.0 ? limits.grid : step;
  bool improved = true;
  while (improved && res.evaluations < budget) {
    improved = false;
    const Chromosome base = res.x;
    std::vector<Chromosome> neighbours;
    for (std::size_t s = 0; s < base.services(); ++s) {
      for (std::size_t j = 0; j < base.nodes(); ++j) {
        for (int delta : {1, -1}) {
          Chromosome y = base;
          y.placement[s][j] += delta;
          neighbours.push_back(std::move(y));
        }
      }
    }
    for (std::size_t s = 0; s < base.services(); ++s) {
      for (double delta : {d, -d}) {
        Chromosome y = base;
        y.quota[s] += delta;
        neighbours.push_back(std::move(y));
      }
    }
    for (std::size_t s = 0; s < base.services(); ++s) {
      for (double delta : {d, -d}) {
        Chromosome y = base;
        y.priority[s] += delta;
        neighbours.push_back(std::move(y));
      }
    }
    for (auto& y : neighbours) {
      if (res.evaluations >= budget) break;
      if (!satisfies_invariants(y, limits) || y == base) continue;
      Evaluation e = eval(y);
      ++res.evaluations;
      if (e.fitness < res.eval.fitness) {
        res.x = std::move(y);
        res.eval = std::move(e);
        improved = true;
        break;
      }
    }
  }
  return res;
}

int adapt_population_size(std::span<const double> history, int n, const PopulationBounds& b) {
  int out = n;
  if (history.size() >= 6) {
    const double old = history[history.size() - 6];
    const double now = history.back();
    if (std::isfinite(old) && std::isfinite(now)) {
      const double improvement = (old - now) / std::max(std::fabs(old), 1e-12);
      if (improvement < 0.001) {
        out = static_cast<int>(std::lround(n * 0.75));
      } else if (improvement > 0.05) {
        out = static_cast<int>(std::lround(n * 1.25));
      }
    }
  }
  return std::clamp(out, b.n_min, b.n_max);
}

// ---------------------------------------------------------------------------
// RL refinement

void RefineReward::validate() const {
  if (!(alpha >= 0.0 && beta >= 0.0 && gamma_cost >= 0.0)) throw ConfigError("hybrid.refine", "coefficients must be >= 0");
}

double refine_reward(double improvement, double utilization_gain, double cost, const RefineReward& r) {
  return r.alpha * improvement + r.beta * utilization_gain - r.gamma_cost * cost;
}

double change_cost(const Chromosome& from, const Chromosome& to, const cluster::RewardSpec& prices) {
  cluster::ActionEffect e;
  for (std::size_t s = 0; s < from.services(); ++s) {
    int moved = 0;
    for (std::size_t j = 0; j < from.nodes(); ++j) moved += std::abs(to.placement[s][j] - from.placement[s][j]);
    const int net = to.instances(s) - from.instances(s);
    if (net > 0) e.instances_created += net;
    if (net < 0) e.instances_removed -= net;
    e.migrations += (moved - std::abs(net)) / 2;
    // priority moves are priced like quota moves
    e.quota_change += std::fabs(to.quota[s] - from.quota[s]) + std::fabs(to.priority[s] - from.priority[s]);
  }
  return cluster::scheduling_cost(e, prices);
}

nn::NetShape refine_shape(const Chromosome& x, const drl::SchedulingEnvConfig& cfg, std::vector<int> hidden) {
  return drl::scheduling_shape(x.services(), x.nodes(), cfg, std::move(hidden));
}

Chromosome apply_delta(const Chromosome& x, const drl::ActionSample& a, const cluster::SystemState& state,
                       const Limits& limits, int shortlist) {
  const std::size_t k = x.services();
  const std::size_t n = x.nodes();
  if (a.choices.size() < k + 1 || static_cast<std::size_t>(a.u.size()) < 2 * k) {
    throw std::invalid_argument("apply_delta: action does not match the chromosome");
  }
  Chromosome y = x;
  for (std::size_t s = 0; s < k; ++s) {
    const int d = a.choices[s] - 1;
    if (d > 0 && y.instances(s) < limits.max_instances) {
      const auto load = node_loads(y);
      y.placement[s][static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin())] += 1;
    } else if (d < 0 && y.instances(s) > 1) {
      const auto& row = y.placement[s];
      y.placement[s][static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] -= 1;
    }
  }
  const auto pairs = drl::migration_shortlist(state, shortlist);
  const auto m = static_cast<std::size_t>(a.choices[k]);
  if (m < pairs.size() && state.node_count == n) {
    const auto src = static_cast<std::size_t>(pairs[m].first);
    const auto dst = static_cast<std::size_t>(pairs[m].second);
    int pick = -1;
    for (std::size_t s = 0; s < k; ++s) {
      if (y.placement[s][src] == 0) continue;
      const double us = s < state.service_util.size() ? state.service_util[s] : 0.0;
      if (pick < 0 || us > state.service_util[static_cast<std::size_t>(pick)]) pick = static_cast<int>(s);
    }
    if (pick >= 0) {
      --y.placement[static_cast<std::size_t>(pick)][src];
      ++y.placement[static_cast<std::size_t>(pick)][dst];
    }
  }
  for (std::size_t s = 0; s < k; ++s) {
    y.priority[s] += 0.2 * (sigmoid(a.u[static_cast<Eigen::Index>(s)]) - 0.5);
    y.quota[s] += 0.2 * (sigmoid(a.u[static_cast<Eigen::Index>(k + s)]) - 0.5);
  }
  if (!repair(y, limits)) return x;
  return y;
}

RefineStats rl_refine(std::vector<Chromosome>& elite, std::vector<Evaluation>& elite_eval, drl::Policy& policy,
                      nn::Adam& optimizer, const Evaluator& eval, const Limits& limits, const RefineConfig& cfg,
                      const drl::EncodeSpec& encode, Rng& rng) {
  if (elite.size() != elite_eval.size()) throw std::invalid_argument("rl_refine: elite and evaluations differ in size");
  RefineStats stats;
  for (std::size_t i = 0; i < elite.size(); ++i) {
    const nn::Vec s = drl::encode_state(elite_eval[i].state, encode);
    const drl::ActionSample a = policy.act(s, drl::Mode::kSample, rng);
    Chromosome y = apply_delta(elite[i], a, elite_eval[i].state, limits, cfg.shortlist);
    Evaluation ey = y == elite[i] ? elite_eval[i] : eval(y);
    const double p = elite_eval[i].fitness - ey.fitness;
    const double e = ey.objectives.u - elite_eval[i].objectives.u;
    const double r = refine_reward(p, e, change_cost(elite[i], y), cfg.reward);
    ++stats.transitions;
    if (!std::isfinite(r)) {
      ++stats.discarded;
    } else {
      stats.reward_sum += r;
      drl::Transition t;
      t.state = s;
      t.choices = a.choices;
      t.u = a.u;
      t.old_log_prob = a.log_prob;
      t.reward = r;
      t.done = true;
      t.value = a.value;
      t.ret = r;
      t.advantage = r - a.value;
      drl::PpoResult res = drl::ppo_loss(policy, policy.params(), std::span<const drl::Transition>(&t, 1), cfg.ppo);
      if (std::isfinite(res.loss) && res.grad.allFinite()) {
        nn::clip_grad_norm(res.grad, 0.5);
        optimizer.step(policy.params(), res.grad);
      } else {
        ++stats.discarded;
      }
    }
    if (ey.fitness < elite_eval[i].fitness) {
      elite[i] = std::move(y);
      elite_eval[i] = std::move(ey);
      ++stats.replaced;
    }
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Config

void HybridConfig::validate() const {
  if (elite < 1) throw ConfigError("hybrid.elite", "must be >= 1");
  if (bounds.n_min <= elite) throw ConfigError("hybrid.n_min", "must exceed the elite size");
  if (bounds.n_max < bounds.n_min) throw ConfigError("hybrid.n_max", "must be >= n_min");
  if (population < bounds.n_min || population > bounds.n_max) throw ConfigError("hybrid.population", "must lie in [n_min, n_max]");
  if (max_iter < 1) throw ConfigError("hybrid.max_iter", "must be >= 1");
  if (tournament < 1) throw ConfigError("hybrid.tournament", "must be >= 1");
  if (mutation_sigma < 0.0) throw ConfigError("hybrid.mutation_sigma", "must be >= 0");
  if (local_search_budget < 0) throw ConfigError("hybrid.local_search_budget", "must be >= 0");
  if (!(local_search_step > 0.0)) throw ConfigError("hybrid.local_search_step", "must be > 0");
  if (convergence_window < 1) throw ConfigError("hybrid.convergence_window", "must be >= 1");
  if (grid < 0.0) throw ConfigError("hybrid.grid", "must be >= 0");
  if (eval_ticks < 1) throw ConfigError("hybrid.eval_ticks", "must be >= 1");
  if (!(eval_scale > 0.0)) throw ConfigError("hybrid.eval_scale", "must be > 0");
  if (refine.lr < 0.0) throw ConfigError("hybrid.refine.lr", "must be >= 0");
  weights.validate();
  refine.reward.validate();
}

nlohmann::json to_json(const HybridConfig& c) {
  return {{"population", c.population},
          {"elite", c.elite},
          {"max_iter", c.max_iter},
          {"n_min", c.bounds.n_min},
          {"n_max", c.bounds.n_max},
          {"tournament", c.tournament},
          {"mutation_sigma", c.mutation_sigma},
          {"local_search_budget", c.local_search_budget},
          {"local_search_step", c.local_search_step},
          {"convergence_tol", c.convergence_tol},
          {"convergence_window", c.convergence_window},
          {"weights",
           {{"w1", c.weights.w1},
            {"w2", c.weights.w2},
            {"w3", c.weights.w3},
            {"t_max", c.weights.t_max},
            {"u_max", c.weights.u_max},
            {"l_max", c.weights.l_max}}},
          {"rl_refine", c.rl_refine},
          {"refine",
           {{"alpha", c.refine.reward.alpha},
            {"beta", c.refine.reward.beta},
            {"gamma_cost", c.refine.reward.gamma_cost},
            {"lr", c.refine.lr},
            {"shortlist", c.refine.shortlist}}},
          {"grid", c.grid},
          {"seed", c.seed},
          {"eval_ticks", c.eval_ticks},
          {"eval_scale", c.eval_scale}};
}

HybridConfig hybrid_config_from_json(const nlohmann::json& j, const std::string& where) {
  using json_util::get_opt;
  HybridConfig c;
  get_opt(j, "population", c.population, where);
  get_opt(j, "elite", c.elite, where);
  get_opt(j, "max_iter", c.max_iter, where);
  get_opt(j, "n_min", c.bounds.n_min, where);
  get_opt(j, "n_max", c.bounds.n_max, where);
  get_opt(j, "tournament", c.tournament, where);
  get_opt(j, "mutation_sigma", c.mutation_sigma, where);
  get_opt(j, "local_search_budget", c.local_search_budget, where);
  get_opt(j, "local_search_step", c.local_search_step, where);
  get_opt(j, "convergence_tol", c.convergence_tol, where);
  get_opt(j, "convergence_window", c.convergence_window, where);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    const std::string ww = where + ".weights";
    get_opt(w, "w1", c.weights.w1, ww);
    get_opt(w, "w2", c.weights.w2, ww);
    get_opt(w, "w3", c.weights.w3, ww);
    get_opt(w, "t_max", c.weights.t_max, ww);
    get_opt(w, "u_max", c.weights.u_max, ww);
    get_opt(w, "l_max", c.weights.l_max, ww);
  }
  get_opt(j, "rl_refine", c.rl_refine, where);
  if (j.contains("refine")) {
    const auto& r = j.at("refine");
    const std::string rw = where + ".refine";
    get_opt(r, "alpha", c.refine.reward.alpha, rw);
    get_opt(r, "beta", c.refine.reward.beta, rw);
    get_opt(r, "gamma_cost", c.refine.reward.gamma_cost, rw);
    get_opt(r, "lr", c.refine.lr, rw);
    get_opt(r, "shortlist", c.refine.shortlist, rw);
  }
  get_opt(j, "grid", c.grid, where);
  get_opt(j, "seed", c.seed, where);
  get_opt(j, "eval_ticks", c.eval_ticks, where);
  get_opt(j, "eval_scale", c.eval_scale, where);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Main loop

HybridResult hybrid_scheduling(const Chromosome& seed_solution, const Evaluator& eval, const Limits& limits,
                               const HybridConfig& cfg, const HybridOptions& options) {
  cfg.validate();
  HybridResult result;
  Rng rng(derive_seed(cfg.seed, 11));
  Rng act_rng(derive_seed(cfg.seed, 12));

  std::map<std::vector<double>, Evaluation> memo;
  auto evaluate = [&](const Chromosome& x) -> const Evaluation& {
    auto key = flatten(x);
    auto it = memo.find(key);
    if (it == memo.end()) {
      it = memo.emplace(std::move(key), eval(x)).first;
      ++result.evaluations;
    }
    return it->second;
  };
  const Evaluator cached = [&](const Chromosome& x) { return evaluate(x); };

  const std::size_t k = seed_solution.services();
  const std::size_t n = seed_solution.nodes();
  std::vector<Chromosome> population;
  Chromosome first = seed_solution;
  if (repair(first, limits)) population.push_back(std::move(first));
  int pop_n = cfg.population;
  while (static_cast<int>(population.size()) < pop_n) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Chromosome x = random_chromosome(k, n, limits, rng);
      if (satisfies_invariants(x, limits)) {
        population.push_back(std::move(x));
        ok = true;
      }
    }
    if (!ok) throw ConfigError("hybrid.population", "no feasible chromosome after 100 repair attempts");
  }

  nn::Adam optimizer;
  optimizer.lr = cfg.refine.lr;
  std::vector<double> best_history;
  double best_f = kInfeasible;
  int stagnant = 0;

  for (int gen = 0; gen < cfg.max_iter; ++gen) {
    std::vector<Evaluation> evals;
    std::vector<double> fit;
    std::vector<std::array<double, 3>> obj;
    for (const auto& x : population) {
      evals.push_back(evaluate(x));
      fit.push_back(evals.back().fitness);
      obj.push_back(objective_vector(evals.back().objectives, cfg.weights));
    }

    // Fronts pre-filter the elite pool, scalar fitness ranks within it.
    const auto k_elite = static_cast<std::size_t>(cfg.elite);
    std::vector<std::size_t> pool;
    for (const auto& front : non_dominated_sort(obj)) {
      if (pool.size() >= k_elite) break;
      pool.insert(pool.end(), front.begin(), front.end());
    }
    std::sort(pool.begin(), pool.end());
    std::vector<double> pool_fit;
    for (std::size_t i : pool) pool_fit.push_back(fit[i]);
    std::vector<Chromosome> elite;
    std::vector<Evaluation> elite_eval;
    for (std::size_t i : select_top_k(pool_fit, k_elite)) {
      elite.push_back(population[pool[i]]);
      elite_eval.push_back(evals[pool[i]]);
    }

    // Goodness (larger is better) for the adaptive rates.
    std::vector<double> good(fit.size());
    double g_min = 0.0, g_sum = 0.0, g_max = -kInfeasible;
    int finite = 0;
    for (std::size_t i = 0; i < fit.size(); ++i) {
      if (!std::isfinite(fit[i])) continue;
      const double g = -fit[i];
      g_min = finite == 0 ? g : std::min(g_min, g);
      g_max = std::max(g_max, g);
      g_sum += g;
      ++finite;
    }
    for (std::size_t i = 0; i < fit.size(); ++i) good[i] = std::isfinite(fit[i]) ? -fit[i] : g_min;
    const double g_avg = finite > 0 ? g_sum / finite : 0.0;
    if (finite == 0) g_max = 0.0;

    if (cfg.rl_refine && options.policy != nullptr) {
      const RefineStats st = rl_refine(elite, elite_eval, *options.policy, optimizer, cached, limits, cfg.refine,
                                       options.encode, act_rng);
      result.refine.transitions += st.transitions;
      result.refine.discarded += st.discarded;
      result.refine.replaced += st.replaced;
      result.refine.reward_sum += st.reward_sum;
    }
    if (cfg.local_search_budget > 0) {
      auto ls = local_search(elite[0], elite_eval[0], cached, cfg.local_search_budget, limits, cfg.local_search_step);
      elite[0] = std::move(ls.x);
      elite_eval[0] = std::move(ls.eval);
    }
    {
      std::vector<double> ef;
      for (const auto& e : elite_eval) ef.push_back(e.fitness);
      const auto order = select_top_k(ef, ef.size());
      std::vector<Chromosome> e2;
      std::vector<Evaluation> v2;
      for (std::size_t i : order) {
        e2.push_back(std::move(elite[i]));
        v2.push_back(std::move(elite_eval[i]));
      }
      elite = std::move(e2);
      elite_eval = std::move(v2);
    }
    const double prev_best = best_f;
    if (result.trace.empty() || elite_eval[0].fitness < best_f) {
      best_f = elite_eval[0].fitness;
      result.best = elite[0];
      result.best_eval = elite_eval[0];
    }

    best_history.push_back(best_f);
    pop_n = std::max(adapt_population_size(best_history, pop_n, cfg.bounds), cfg.elite + 1);

    std::vector<Chromosome> next = elite;
    double pc_sum = 0.0, pm_sum = 0.0;
    int pc_n = 0, pm_n = 0;
    while (static_cast<int>(next.size()) < pop_n) {
      const std::size_t a = tournament_select(fit, cfg.tournament, rng);
      const std::size_t b = tournament_select(fit, cfg.tournament, rng);
      const Rates rc = adaptive_rates(std::max(good[a], good[b]), g_avg, std::max(g_max, g_avg));
      pc_sum += rc.pc;
      ++pc_n;
      auto [c1, c2] = crossover(population[a], population[b], rc.pc, rng, limits);
      const Rates ra = adaptive_rates(good[a], g_avg, std::max(g_max, g_avg));
      pm_sum += ra.pm;
      ++pm_n;
      next.push_back(mutate(c1, ra.pm, rng, limits, cfg.mutation_sigma));
      if (static_cast<int>(next.size()) < pop_n) {
        const Rates rb = adaptive_rates(good[b], g_avg, std::max(g_max, g_avg));
        pm_sum += rb.pm;
        ++pm_n;
        next.push_back(mutate(c2, rb.pm, rng, limits, cfg.mutation_sigma));
      }
    }
    population = std::move(next);
    if (options.keep_populations) result.populations.push_back(population);

    double mean = 0.0;
    int mean_n = 0;
    for (double f : fit) {
      if (std::isfinite(f)) {
        mean += f;
        ++mean_n;
      }
    }
    result.trace.push_back({gen, best_f, mean_n > 0 ? mean / mean_n : kInfeasible, pc_n > 0 ? pc_sum / pc_n : 0.0,
                            pm_n > 0 ? pm_sum / pm_n : 0.0, pop_n});

    if (gen > 0 && std::isfinite(prev_best) && std::fabs(prev_best - best_f) < cfg.convergence_tol) {
      if (++stagnant >= cfg.convergence_window) {
        result.converged = true;
        break;
      }
    } else {
      stagnant = 0;
    }
  }
  return result;
}

std::string trace_csv(const std::vector<GenerationRow>& trace) {
  std::ostringstream out;
  out << "generation,best_fitness,mean_fitness,P_c_mean,P_m_mean,N\n";
  for (const auto& r : trace) {
    out << r.generation << ',' << metrics::format_double(r.best_fitness) << ','
        << metrics::format_double(r.mean_fitness) << ',' << metrics::format_double(r.pc_mean) << ','
        << metrics::format_double(r.pm_mean) << ',' << r.n << '\n';
  }
  return out.str();
}

}  // namespace tradesim::hybrid
