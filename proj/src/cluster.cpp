#include "tradesim/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tradesim/json_util.hpp"
#include "tradesim/metrics.hpp"

namespace tradesim::cluster {

using json_util::get_opt;
using json_util::get_req;

double LatencyModel::effective_sigma() const {
  if (jitter_sigma > 0.0) return jitter_sigma;
  static const double calibrated = calibrate_jitter_sigma(120.0 / 85.0);
  return calibrated;
}

double calibrate_jitter_sigma(double p95_over_mean) {
  if (!(p95_over_mean > 1.0)) throw std::invalid_argument("calibrate_jitter_sigma: ratio must be > 1");
  // Mean-one lognormal exp(sZ - s^2/2): p95 = exp(s z - s^2/2). Take the smaller root.
  const double z = normal_quantile(0.95);
  const double disc = z * z - 2.0 * std::log(p95_over_mean);
  if (disc < 0.0) throw std::invalid_argument("calibrate_jitter_sigma: ratio too large for a lognormal");
  return z - std::sqrt(disc);
}

double service_latency(const LatencyModel& m, double utilization, double cache_hit_rate, Rng* rng) {
  const double rho = std::clamp(utilization, 0.0, m.rho_cap);
  const double hit = std::clamp(cache_hit_rate, 0.0, 1.0);
  double ms = m.network_ms + m.processing_ms / (1.0 - rho) + m.data_ms * (1.0 - hit);
  if (rng != nullptr && m.jitter) {
    const double s = m.effective_sigma();
    ms *= std::exp(s * rng->normal() - 0.5 * s * s);
  }
  return ms;
}

double calibrate_reference_utilization(const LatencyModel& m, double low, double high, double target_ratio) {
  if (!(low > 0.0 && high > low)) throw std::invalid_argument("calibrate_reference_utilization: need 0 < low < high");
  auto ratio = [&](double rho_ref) {
    return service_latency(m, high * rho_ref, 0.0, nullptr) / service_latency(m, low * rho_ref, 0.0, nullptr);
  };
  double lo = 0.0;
  double hi = m.rho_cap / high;
  if (ratio(hi) < target_ratio) throw std::invalid_argument("calibrate_reference_utilization: ratio unreachable");
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (ratio(mid) < target_ratio ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void RewardSpec::validate() const {
  if (w1 < 0.0 || w2 < 0.0 || w3 < 0.0) throw ConfigError("reward", "weights must be >= 0");
  if (!(t_target_ms > 0.0)) throw ConfigError("reward.t_target_ms", "must be > 0");
  if (!(u_target > 0.0 && u_target < 1.0)) throw ConfigError("reward.u_target", "must be in (0,1)");
  if (cost_instance < 0.0 || cost_migration < 0.0 || cost_quota < 0.0) {
    throw ConfigError("reward", "cost coefficients must be >= 0");
  }
}

double scheduling_cost(const ActionEffect& e, const RewardSpec& spec) {
  return spec.cost_instance * (e.instances_created + e.instances_removed) + spec.cost_migration * e.migrations +
         spec.cost_quota * e.quota_change;
}

double reward_from_terms(std::span<const double> latencies_ms, std::span<const double> utilizations, double cost,
                         const RewardSpec& spec) {
  double t = 0.0;
  for (double x : latencies_ms) t += x / spec.t_target_ms;
  double u = 0.0;
  for (double x : utilizations) u += std::fabs(x - spec.u_target);
  return -(spec.w1 * t + spec.w2 * u + spec.w3 * cost);
}

double reward(const SystemState& /*before*/, const SystemState& after, const ActionEffect& effect,
              const RewardSpec& spec) {
  std::vector<double> cpu(after.node_count);
  for (std::size_t j = 0; j < after.node_count; ++j) cpu[j] = after.util(j, kCpu);
  return reward_from_terms(after.latency_ms, cpu, scheduling_cost(effect, spec), spec);
}

std::array<double, 4> encode_compact_state(const SystemState& s, double queue_reference) {
  std::array<double, 4> out{};
  if (s.node_count == 0) return out;
  for (std::size_t j = 0; j < s.node_count; ++j) {
    out[0] += s.util(j, kCpu);
    out[1] += s.util(j, kMem);
    out[2] += s.util(j, kNet);
  }
  for (int i = 0; i < 3; ++i) out[i] = std::clamp(out[i] / static_cast<double>(s.node_count), 0.0, 1.0);
  double q = 0.0;
  for (double x : s.queue_len) q += x;
  out[3] = q / queue_reference;
  return out;
}

bool SchedulingAction::is_noop() const {
  if (!priority.empty() || !quota.empty()) return false;
  if (std::any_of(instance_delta.begin(), instance_delta.end(), [](int d) { return d != 0; })) return false;
  for (const auto& row : migration) {
    if (std::any_of(row.begin(), row.end(), [](std::uint8_t m) { return m != 0; })) return false;
  }
  return true;
}

ActionEffect& ActionEffect::operator+=(const ActionEffect& o) {
  instances_created += o.instances_created;
  instances_removed += o.instances_removed;
  migrations += o.migrations;
  quota_change += o.quota_change;
  priority_change += o.priority_change;
  sanitized += o.sanitized;
  return *this;
}

// ---------------------------------------------------------------------------
// Topology

void Topology::validate() const {
  if (nodes.empty()) throw ConfigError("topology.nodes", "must not be empty");
  if (services.empty()) throw ConfigError("topology.services", "must not be empty");
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const auto& n = nodes[j];
    if (!(n.cpu_capacity > 0.0 && n.mem_capacity > 0.0 && n.net_capacity > 0.0)) {
      throw ConfigError("topology.nodes[" + std::to_string(j) + "]", "capacities must be > 0");
    }
  }
  for (std::size_t i = 0; i < services.size(); ++i) {
    const auto& s = services[i];
    const std::string where = "topology.services[" + std::to_string(i) + "]";
    if (s.max_instances < 1) throw ConfigError(where + ".max_instances", "must be >= 1");
    if (!(s.default_quota > 0.0 && s.default_quota <= 1.0)) throw ConfigError(where + ".default_quota", "must be in (0,1]");
    if (!(s.default_priority >= 0.0 && s.default_priority <= 1.0)) {
      throw ConfigError(where + ".default_priority", "must be in [0,1]");
    }
    if (s.mem_per_instance_mb < 0.0 || s.mem_per_request_mb < 0.0) throw ConfigError(where, "memory sizes must be >= 0");
  }
  std::vector<int> count(services.size(), 0);
  for (std::size_t p = 0; p < placement.size(); ++p) {
    const auto& pl = placement[p];
    const std::string where = "topology.placement[" + std::to_string(p) + "]";
    if (pl.service < 0 || static_cast<std::size_t>(pl.service) >= services.size()) {
      throw ConfigError(where + ".service", "unknown service index");
    }
    if (pl.node < 0 || static_cast<std::size_t>(pl.node) >= nodes.size()) throw ConfigError(where + ".node", "unknown node index");
    if (!(pl.quota > 0.0 && pl.quota <= 1.0)) throw ConfigError(where + ".quota", "must be in (0,1]");
    if (!(pl.priority >= 0.0 && pl.priority <= 1.0)) throw ConfigError(where + ".priority", "must be in [0,1]");
    ++count[static_cast<std::size_t>(pl.service)];
  }
  for (std::size_t i = 0; i < services.size(); ++i) {
    if (count[i] == 0) throw ConfigError("topology.placement", "service " + services[i].name + " has no instance");
    if (count[i] > services[i].max_instances) {
      throw ConfigError("topology.placement", "service " + services[i].name + " exceeds max_instances");
    }
  }
  if (!(latency.network_ms >= 0.0 && latency.processing_ms >= 0.0 && latency.data_ms >= 0.0)) {
    throw ConfigError("topology.latency", "components must be >= 0");
  }
  if (!(latency.rho_cap > 0.0 && latency.rho_cap < 1.0)) throw ConfigError("topology.latency.rho_cap", "must be in (0,1)");
  if (latency.jitter_sigma < 0.0) throw ConfigError("topology.latency.jitter_sigma", "must be >= 0");
  if (options.noise_std < 0.0) throw ConfigError("topology.options.noise_std", "must be >= 0");
  if (options.history_window < 1) throw ConfigError("topology.options.history_window", "must be >= 1");
  if (!(options.utilization_smoothing > 0.0 && options.utilization_smoothing <= 1.0)) {
    throw ConfigError("topology.options.utilization_smoothing", "must be in (0,1]");
  }
  if (!(options.queue_reference > 0.0)) throw ConfigError("topology.options.queue_reference", "must be > 0");
  if (options.burst_cap < 0.0) throw ConfigError("topology.options.burst_cap", "must be >= 0");
  if (!(options.cache_hit_rate >= 0.0 && options.cache_hit_rate <= 1.0)) {
    throw ConfigError("topology.options.cache_hit_rate", "must be in [0,1]");
  }
  if (!(options.min_quota > 0.0 && options.min_quota <= 1.0)) throw ConfigError("topology.options.min_quota", "must be in (0,1]");
  if (!(options.tick_ms > 0.0)) throw ConfigError("topology.options.tick_ms", "must be > 0");
  if (cache.enabled) {
    if (cache.key_space == 0 || cache.l1_capacity == 0 || cache.l2_capacity == 0 || cache.l2_shards == 0 ||
        cache.l2_virtual_nodes == 0) {
      throw ConfigError("topology.cache", "sizes must be > 0");
    }
  }
}

nlohmann::json to_json(const Topology& t) {
  nlohmann::json j;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    j["nodes"].push_back({{"cpu_capacity", n.cpu_capacity}, {"mem_capacity", n.mem_capacity}, {"net_capacity", n.net_capacity}});
  }
  j["services"] = nlohmann::json::array();
  for (const auto& s : t.services) {
    j["services"].push_back({{"name", s.name},
                             {"mem_per_instance_mb", s.mem_per_instance_mb},
                             {"mem_per_request_mb", s.mem_per_request_mb},
                             {"default_quota", s.default_quota},
                             {"default_priority", s.default_priority},
                             {"max_instances", s.max_instances}});
  }
  j["placement"] = nlohmann::json::array();
  for (const auto& p : t.placement) {
    j["placement"].push_back({{"service", p.service}, {"node", p.node}, {"quota", p.quota}, {"priority", p.priority}});
  }
  j["latency"] = {{"network_ms", t.latency.network_ms},
                  {"processing_ms", t.latency.processing_ms},
                  {"data_ms", t.latency.data_ms},
                  {"jitter", t.latency.jitter},
                  {"jitter_sigma", t.latency.jitter_sigma},
                  {"rho_cap", t.latency.rho_cap}};
  const auto& o = t.options;
  j["options"] = {{"noise_std", o.noise_std},
                  {"history_window", o.history_window},
                  {"utilization_smoothing", o.utilization_smoothing},
                  {"queue_reference", o.queue_reference},
                  {"burst_cap", o.burst_cap},
                  {"cache_hit_rate", o.cache_hit_rate},
                  {"min_quota", o.min_quota},
                  {"tick_ms", o.tick_ms},
                  {"record_latencies", o.record_latencies}};
  const auto& c = t.cache;
  j["cache"] = {{"enabled", c.enabled},
                {"key_space", c.key_space},
                {"zipf_s", c.zipf_s},
                {"reads_per_tick", c.reads_per_tick},
                {"l1_capacity", c.l1_capacity},
                {"l2_capacity", c.l2_capacity},
                {"l2_shards", c.l2_shards},
                {"l2_virtual_nodes", c.l2_virtual_nodes}};
  return j;
}

Topology topology_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where, "must be an object");
  Topology t;
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw ConfigError(where + ".nodes", "missing required array");
  for (std::size_t i = 0; i < j["nodes"].size(); ++i) {
    const auto& n = j["nodes"][i];
    const std::string w = where + ".nodes[" + std::to_string(i) + "]";
    NodeSpec spec;
    get_req(n, "cpu_capacity", spec.cpu_capacity, w);
    get_opt(n, "mem_capacity", spec.mem_capacity, w);
    get_opt(n, "net_capacity", spec.net_capacity, w);
    t.nodes.push_back(spec);
  }
  if (!j.contains("services") || !j["services"].is_array()) throw ConfigError(where + ".services", "missing required array");
  for (std::size_t i = 0; i < j["services"].size(); ++i) {
    const auto& s = j["services"][i];
    const std::string w = where + ".services[" + std::to_string(i) + "]";
    ServiceSpec spec;
    get_req(s, "name", spec.name, w);
    get_opt(s, "mem_per_instance_mb", spec.mem_per_instance_mb, w);
    get_opt(s, "mem_per_request_mb", spec.mem_per_request_mb, w);
    get_opt(s, "default_quota", spec.default_quota, w);
    get_opt(s, "default_priority", spec.default_priority, w);
    get_opt(s, "max_instances", spec.max_instances, w);
    t.services.push_back(spec);
  }
  if (j.contains("placement")) {
    if (!j["placement"].is_array()) throw ConfigError(where + ".placement", "must be an array");
    for (std::size_t i = 0; i < j["placement"].size(); ++i) {
      const auto& p = j["placement"][i];
      const std::string w = where + ".placement[" + std::to_string(i) + "]";
      PlacementSpec spec;
      get_req(p, "service", spec.service, w);
      get_req(p, "node", spec.node, w);
      if (spec.service >= 0 && static_cast<std::size_t>(spec.service) < t.services.size()) {
        spec.quota = t.services[static_cast<std::size_t>(spec.service)].default_quota;
        spec.priority = t.services[static_cast<std::size_t>(spec.service)].default_priority;
      }
      get_opt(p, "quota", spec.quota, w);
      get_opt(p, "priority", spec.priority, w);
      t.placement.push_back(spec);
    }
  }
  if (j.contains("latency")) {
    const auto& l = j["latency"];
    const std::string w = where + ".latency";
    get_opt(l, "network_ms", t.latency.network_ms, w);
    get_opt(l, "processing_ms", t.latency.processing_ms, w);
    get_opt(l, "data_ms", t.latency.data_ms, w);
    get_opt(l, "jitter", t.latency.jitter, w);
    get_opt(l, "jitter_sigma", t.latency.jitter_sigma, w);
    get_opt(l, "rho_cap", t.latency.rho_cap, w);
  }
  if (j.contains("options")) {
    const auto& o = j["options"];
    const std::string w = where + ".options";
    get_opt(o, "noise_std", t.options.noise_std, w);
    get_opt(o, "history_window", t.options.history_window, w);
    get_opt(o, "utilization_smoothing", t.options.utilization_smoothing, w);
    get_opt(o, "queue_reference", t.options.queue_reference, w);
    get_opt(o, "burst_cap", t.options.burst_cap, w);
    get_opt(o, "cache_hit_rate", t.options.cache_hit_rate, w);
    get_opt(o, "min_quota", t.options.min_quota, w);
    get_opt(o, "tick_ms", t.options.tick_ms, w);
    get_opt(o, "record_latencies", t.options.record_latencies, w);
  }
  if (j.contains("cache")) {
    const auto& c = j["cache"];
    const std::string w = where + ".cache";
    get_opt(c, "enabled", t.cache.enabled, w);
    get_opt(c, "key_space", t.cache.key_space, w);
    get_opt(c, "zipf_s", t.cache.zipf_s, w);
    get_opt(c, "reads_per_tick", t.cache.reads_per_tick, w);
    get_opt(c, "l1_capacity", t.cache.l1_capacity, w);
    get_opt(c, "l2_capacity", t.cache.l2_capacity, w);
    get_opt(c, "l2_shards", t.cache.l2_shards, w);
    get_opt(c, "l2_virtual_nodes", t.cache.l2_virtual_nodes, w);
  }
  t.validate();
  return t;
}

Topology load_topology(const std::string& path) { return topology_from_json(json_util::read_file(path), path); }

// ---------------------------------------------------------------------------
// ClusterSim

namespace {

SystemState empty_state(std::size_t k, std::size_t n) {
  SystemState s;
  s.service_count = k;
  s.node_count = n;
  s.load.assign(k, 0.0);
  s.utilization.assign(n * kResourceCount, 0.0);
  s.queue_len.assign(k, 0.0);
  s.hist_mean.assign(k, 0.0);
  s.hist_var.assign(k, 0.0);
  s.latency_ms.assign(k, 0.0);
  s.throughput.assign(k, 0.0);
  s.service_util.assign(k, 0.0);
  return s;
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

ClusterSim::ClusterSim(Topology topology) : topology_(std::move(topology)) {
  topology_.validate();
  const std::size_t k = topology_.service_count();
  const std::size_t n = topology_.node_count();
  service_quota_.assign(k, 0.0);
  service_priority_.assign(k, 0.0);
  std::vector<bool> seen(k, false);
  for (const auto& p : topology_.placement) {
    ServiceInstance inst;
    inst.id = next_instance_id_++;
    inst.service_id = p.service;
    inst.node_id = p.node;
    inst.cpu_quota = p.quota;
    inst.priority = p.priority;
    instances_.push_back(std::move(inst));
    const auto s = static_cast<std::size_t>(p.service);
    if (!seen[s]) {
      service_quota_[s] = p.quota;
      service_priority_[s] = p.priority;
      seen[s] = true;
    }
  }
  node_util_.assign(n * kResourceCount, 0.0);
  truth_ = empty_state(k, n);
  observed_ = truth_;
  report_.services.assign(k, {});
  tick_samples_.assign(k, {});
  rebuild_index();
  enforce_node_quotas(nullptr);
}

void ClusterSim::rebuild_index() {
  by_service_.assign(topology_.service_count(), {});
  for (std::size_t i = 0; i < instances_.size(); ++i) {
    by_service_[static_cast<std::size_t>(instances_[i].service_id)].push_back(i);
  }
}

std::vector<double> ClusterSim::node_quota_sums() const {
  std::vector<double> sums(topology_.node_count(), 0.0);
  for (const auto& inst : instances_) sums[static_cast<std::size_t>(inst.node_id)] += inst.cpu_quota;
  return sums;
}

void ClusterSim::enforce_node_quotas(ActionEffect* effect) {
  const auto sums = node_quota_sums();
  for (auto& inst : instances_) {
    const double s = sums[static_cast<std::size_t>(inst.node_id)];
    if (s > 1.0) {
      inst.cpu_quota /= s;
      if (effect != nullptr) ++effect->sanitized;
    }
  }
}

int ClusterSim::least_loaded_node() const {
  const auto sums = node_quota_sums();
  int best = 0;
  for (std::size_t j = 1; j < sums.size(); ++j) {
    const double fb = 1.0 - sums[static_cast<std::size_t>(best)];
    const double fj = 1.0 - sums[j];
    if (fj > fb + 1e-12 ||
        (std::fabs(fj - fb) <= 1e-12 && node_util_[j * kResourceCount] < node_util_[static_cast<std::size_t>(best) * kResourceCount])) {
      best = static_cast<int>(j);
    }
  }
  return best;
}

void ClusterSim::add_instance(int service, int node, ActionEffect& effect) {
  ServiceInstance inst;
  inst.id = next_instance_id_++;
  inst.service_id = service;
  inst.node_id = node;
  inst.cpu_quota = service_quota_[static_cast<std::size_t>(service)];
  inst.priority = service_priority_[static_cast<std::size_t>(service)];
  instances_.push_back(std::move(inst));
  ++effect.instances_created;
  rebuild_index();
}

void ClusterSim::remove_instance(std::size_t index, ActionEffect& effect) {
  auto queue = std::move(instances_[index].queue);
  const int service = instances_[index].service_id;
  instances_.erase(instances_.begin() + static_cast<std::ptrdiff_t>(index));
  ++effect.instances_removed;
  rebuild_index();
  requeue(std::move(queue), service);
}

void ClusterSim::move_instance(std::size_t index, int node) { instances_[index].node_id = node; }

void ClusterSim::requeue(std::deque<PendingRequest>&& queue, int service) {
  const auto& idx = by_service_[static_cast<std::size_t>(service)];
  if (idx.empty()) throw std::logic_error("requeue: service has no instance");
  // Hand each orphaned request to the instance with the least queued work, keeping arrival order.
  for (auto& r : queue) {
    std::size_t best = idx.front();
    for (std::size_t i : idx) {
      if (instances_[i].queue_work < instances_[best].queue_work) best = i;
    }
    instances_[best].queue_work += r.remaining_work;
    auto& q = instances_[best].queue;
    auto pos = std::upper_bound(q.begin(), q.end(), r.arrival_tick,
                                [](Tick t, const PendingRequest& p) { return t < p.arrival_tick; });
    q.insert(pos, r);
  }
}

ActionEffect ClusterSim::apply_action(const SchedulingAction& a) {
  ActionEffect e;
  const std::size_t k = topology_.service_count();
  const std::size_t n = topology_.node_count();
  bool quotas_dirty = false;

  if (!a.priority.empty()) {
    if (a.priority.size() != k) {
      ++e.sanitized;
    } else {
      for (std::size_t s = 0; s < k; ++s) {
        double p = a.priority[s];
        if (!finite(p)) {
          ++e.sanitized;
          continue;
        }
        if (p < 0.0 || p > 1.0) {
          ++e.sanitized;
          p = std::clamp(p, 0.0, 1.0);
        }
        e.priority_change += std::fabs(p - service_priority_[s]);
        service_priority_[s] = p;
        for (std::size_t i : by_service_[s]) instances_[i].priority = p;
      }
    }
  }
  if (!a.quota.empty()) {
    if (a.quota.size() != k) {
      ++e.sanitized;
    } else {
      for (std::size_t s = 0; s < k; ++s) {
        double q = a.quota[s];
        if (!finite(q)) {
          ++e.sanitized;
          continue;
        }
        if (q < topology_.options.min_quota || q > 1.0) {
          ++e.sanitized;
          q = std::clamp(q, topology_.options.min_quota, 1.0);
        }
        if (q != service_quota_[s]) {
          e.quota_change += std::fabs(q - service_quota_[s]);
          service_quota_[s] = q;
          for (std::size_t i : by_service_[s]) instances_[i].cpu_quota = q;
          quotas_dirty = true;
        }
      }
    }
  }
  if (!a.instance_delta.empty()) {
    if (a.instance_delta.size() != k) {
      ++e.sanitized;
    } else {
      for (std::size_t s = 0; s < k; ++s) {
        const int have = static_cast<int>(by_service_[s].size());
        const int want = have + a.instance_delta[s];
        const int target = std::clamp(want, 1, topology_.services[s].max_instances);
        if (target != want) ++e.sanitized;
        for (int c = have; c < target; ++c) {
          add_instance(static_cast<int>(s), least_loaded_node(), e);
          quotas_dirty = true;
        }
        for (int c = have; c > target; --c) {
          // Take one from the node hosting the most instances of this service.
          std::vector<int> per_node(n, 0);
          for (std::size_t i : by_service_[s]) ++per_node[static_cast<std::size_t>(instances_[i].node_id)];
          const int node = static_cast<int>(std::max_element(per_node.begin(), per_node.end()) - per_node.begin());
          std::size_t victim = 0;
          for (std::size_t i : by_service_[s]) {
            if (instances_[i].node_id == node) victim = i;
          }
          remove_instance(victim, e);
        }
      }
    }
  }
  if (!a.migration.empty()) {
    if (a.migration.size() != k) {
      ++e.sanitized;
    } else {
      for (std::size_t s = 0; s < k; ++s) {
        if (a.migration[s].empty()) continue;
        if (a.migration[s].size() != n) {
          ++e.sanitized;
          continue;
        }
        for (std::size_t dst = 0; dst < n; ++dst) {
          if (a.migration[s][dst] == 0) continue;
          // Source: the busiest node hosting the service, other than the destination.
          std::size_t src_inst = instances_.size();
          double busiest = -1.0;
          for (std::size_t i : by_service_[s]) {
            const auto node = static_cast<std::size_t>(instances_[i].node_id);
            if (node == dst) continue;
            const double u = node_util_[node * kResourceCount + kCpu];
            if (u > busiest) {
              busiest = u;
              src_inst = i;
            }
          }
          if (src_inst == instances_.size()) {
            ++e.sanitized;
            continue;
          }
          move_instance(src_inst, static_cast<int>(dst));
          ++e.migrations;
          quotas_dirty = true;
        }
      }
    }
  }
  if (quotas_dirty) {
    // Re-derive effective quotas from the requested per-service values.
    for (auto& inst : instances_) inst.cpu_quota = service_quota_[static_cast<std::size_t>(inst.service_id)];
    enforce_node_quotas(nullptr);
  }
  return e;
}

ActionEffect ClusterSim::reconfigure(const std::vector<std::vector<int>>& placement, std::span<const double> quota,
                                     std::span<const double> priority) {
  const std::size_t k = topology_.service_count();
  const std::size_t n = topology_.node_count();
  if (placement.size() != k) throw std::invalid_argument("reconfigure: placement must have one row per service");
  for (std::size_t s = 0; s < k; ++s) {
    if (placement[s].size() != n) throw std::invalid_argument("reconfigure: placement row must have one entry per node");
    int total = 0;
    for (int c : placement[s]) {
      if (c < 0) throw std::invalid_argument("reconfigure: negative instance count");
      total += c;
    }
    if (total < 1) throw std::invalid_argument("reconfigure: every service needs an instance");
  }
  if ((!quota.empty() && quota.size() != k) || (!priority.empty() && priority.size() != k)) {
    throw std::invalid_argument("reconfigure: quota/priority size mismatch");
  }
  ActionEffect e;
  if (!priority.empty()) {
    for (std::size_t s = 0; s < k; ++s) {
      const double p = std::clamp(priority[s], 0.0, 1.0);
      e.priority_change += std::fabs(p - service_priority_[s]);
      service_priority_[s] = p;
    }
  }
  if (!quota.empty()) {
    for (std::size_t s = 0; s < k; ++s) {
      const double q = std::clamp(quota[s], topology_.options.min_quota, 1.0);
      e.quota_change += std::fabs(q - service_quota_[s]);
      service_quota_[s] = q;
    }
  }
  // Adds first so that removals always have a survivor to hand their queues to.
  const auto current = placement_matrix();
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t j = 0; j < n; ++j) {
      for (int c = current[s][j]; c < placement[s][j]; ++c) add_instance(static_cast<int>(s), static_cast<int>(j), e);
    }
  }
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t j = 0; j < n; ++j) {
      for (int c = current[s][j]; c > placement[s][j]; --c) {
        std::size_t victim = instances_.size();
        for (std::size_t i : by_service_[s]) {
          if (instances_[i].node_id == static_cast<int>(j)) victim = i;
        }
        remove_instance(victim, e);
      }
    }
  }
  for (auto& inst : instances_) {
    inst.cpu_quota = service_quota_[static_cast<std::size_t>(inst.service_id)];
    inst.priority = service_priority_[static_cast<std::size_t>(inst.service_id)];
  }
  enforce_node_quotas(nullptr);
  return e;
}

std::vector<std::vector<int>> ClusterSim::placement_matrix() const {
  std::vector<std::vector<int>> m(topology_.service_count(), std::vector<int>(topology_.node_count(), 0));
  for (const auto& inst : instances_) {
    ++m[static_cast<std::size_t>(inst.service_id)][static_cast<std::size_t>(inst.node_id)];
  }
  return m;
}

std::vector<int> ClusterSim::instance_counts() const {
  std::vector<int> c(topology_.service_count(), 0);
  for (std::size_t s = 0; s < c.size(); ++s) c[s] = static_cast<int>(by_service_[s].size());
  return c;
}

void ClusterSim::set_cache_hit_rate(double rate) {
  topology_.options.cache_hit_rate = std::clamp(rate, 0.0, 1.0);
}

void ClusterSim::compute_capacities() {
  // Each instance gets its quota of node CPU, plus a priority-weighted share of
  // the node's unallocated quota, capped at burst_cap times its own quota.
  const std::size_t n = topology_.node_count();
  std::vector<double> qsum(n, 0.0), wsum(n, 0.0);
  for (const auto& inst : instances_) {
    const auto j = static_cast<std::size_t>(inst.node_id);
    qsum[j] += inst.cpu_quota;
    wsum[j] += inst.priority + 0.05;
  }
  for (auto& inst : instances_) {
    const auto j = static_cast<std::size_t>(inst.node_id);
    const double leftover = std::max(0.0, 1.0 - qsum[j]);
    const double borrow = std::min(topology_.options.burst_cap * inst.cpu_quota, leftover * (inst.priority + 0.05) / wsum[j]);
    inst.capacity = topology_.nodes[j].cpu_capacity * (inst.cpu_quota + borrow);
  }
}

void ClusterSim::dispatch(const workload::Request& r) {
  if (r.service_id >= topology_.service_count()) throw std::invalid_argument("step: request for unknown service");
  const auto& idx = by_service_[r.service_id];
  std::size_t best = idx.front();
  double best_score = (instances_[best].queue_work + r.work_units) / instances_[best].capacity;
  for (std::size_t i : idx) {
    const double score = (instances_[i].queue_work + r.work_units) / instances_[i].capacity;
    if (score < best_score) {
      best = i;
      best_score = score;
    }
  }
  instances_[best].queue.push_back({r.arrival_tick, r.work_units, r.payload_bytes});
  instances_[best].queue_work += r.work_units;
}

void ClusterSim::refresh_history() {
  load_window_.push_back(truth_.load);
  while (load_window_.size() > static_cast<std::size_t>(topology_.options.history_window)) load_window_.pop_front();
  const double w = static_cast<double>(load_window_.size());
  for (std::size_t s = 0; s < truth_.service_count; ++s) {
    double mean = 0.0;
    for (const auto& row : load_window_) mean += row[s];
    mean /= w;
    double var = 0.0;
    for (const auto& row : load_window_) var += (row[s] - mean) * (row[s] - mean);
    truth_.hist_mean[s] = mean;
    truth_.hist_var[s] = var / w;
  }
}

SystemState ClusterSim::step(const SchedulingAction& action, std::span<const workload::Request> requests, Rng& rng) {
  const std::size_t k = topology_.service_count();
  const std::size_t n = topology_.node_count();
  const auto& opt = topology_.options;
  const double alpha = opt.utilization_smoothing;

  report_ = StepReport{};
  report_.tick = tick_;
  report_.services.assign(k, {});
  report_.effect = action.is_noop() ? ActionEffect{} : apply_action(action);

  compute_capacities();

  std::fill(truth_.load.begin(), truth_.load.end(), 0.0);
  for (const auto& r : requests) {
    dispatch(r);
    truth_.load[r.service_id] += 1.0;
  }
  accounting_.dispatched += static_cast<std::int64_t>(requests.size());

  std::vector<double> node_cpu(n, 0.0), node_mem(n, 0.0), node_net(n, 0.0);
  std::vector<double> svc_consumed(k, 0.0), svc_capacity(k, 0.0), svc_mem(k, 0.0), svc_net(k, 0.0);
  std::vector<double> svc_oldest(k, -1.0);
  for (auto& v : tick_samples_) v.clear();
  const bool keep = opt.record_latencies;
  Rng* jitter_rng = topology_.latency.jitter ? &rng : nullptr;

  for (auto& inst : instances_) {
    const auto s = static_cast<std::size_t>(inst.service_id);
    const auto j = static_cast<std::size_t>(inst.node_id);
    auto& st = report_.services[s];
    const double rho = inst.utilization;  // contention seen by requests served this tick
    double budget = inst.capacity;
    double payload = 0.0;
    while (!inst.queue.empty() && budget > 0.0) {
      auto& head = inst.queue.front();
      if (head.remaining_work > budget) {
        head.remaining_work -= budget;
        inst.queue_work -= budget;
        budget = 0.0;
        break;
      }
      budget -= head.remaining_work;
      inst.queue_work -= head.remaining_work;
      const double wait = static_cast<double>(tick_ - head.arrival_tick) * opt.tick_ms;
      const double ms = wait + service_latency(topology_.latency, rho, opt.cache_hit_rate, jitter_rng);
      st.latency_sum_ms += ms;
      ++st.completed;
      payload += head.payload_bytes;
      if (keep) {
        latency_samples_.push_back(ms);
        tick_samples_[s].push_back(ms);
      }
      inst.queue.pop_front();
    }
    if (inst.queue.empty()) inst.queue_work = 0.0;  // drop accumulated rounding
    const double consumed = inst.capacity - budget;
    inst.utilization = (1.0 - alpha) * inst.utilization + alpha * (consumed / inst.capacity);
    const double mem = topology_.services[s].mem_per_instance_mb +
                       static_cast<double>(inst.queue.size()) * topology_.services[s].mem_per_request_mb;
    node_cpu[j] += consumed;
    report_.cpu_consumed += consumed;
    report_.cpu_allocated += inst.capacity;
    node_mem[j] += mem;
    node_net[j] += payload / 1e6;
    svc_consumed[s] += inst.utilization * inst.capacity;
    svc_capacity[s] += inst.capacity;
    svc_mem[s] += mem;
    svc_net[s] += payload / 1e6;
    st.queue_len += static_cast<std::int64_t>(inst.queue.size());
    if (!inst.queue.empty()) {
      const double age = static_cast<double>(tick_ - inst.queue.front().arrival_tick + 1) * opt.tick_ms;
      svc_oldest[s] = std::max(svc_oldest[s], age);
    }
  }

  double total_mem_cap = 0.0, total_net_cap = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& spec = topology_.nodes[j];
    total_mem_cap += spec.mem_capacity;
    total_net_cap += spec.net_capacity;
    const double inst_u[kResourceCount] = {std::min(1.0, node_cpu[j] / spec.cpu_capacity),
                                           std::min(1.0, node_mem[j] / spec.mem_capacity),
                                           std::min(1.0, node_net[j] / spec.net_capacity)};
    for (std::size_t r = 0; r < kResourceCount; ++r) {
      double& u = node_util_[j * kResourceCount + r];
      u = (1.0 - alpha) * u + alpha * inst_u[r];
    }
  }

  std::int64_t queued = 0;
  truth_.tick = tick_;
  truth_.utilization = node_util_;
  for (std::size_t s = 0; s < k; ++s) {
    auto& st = report_.services[s];
    st.arrived = static_cast<std::int64_t>(truth_.load[s]);
    st.util_cpu = svc_capacity[s] > 0.0 ? svc_consumed[s] / svc_capacity[s] : 0.0;
    st.util_mem = std::min(1.0, svc_mem[s] / total_mem_cap);
    st.util_net = std::min(1.0, svc_net[s] / total_net_cap);
    if (keep && !tick_samples_[s].empty()) {
      st.p50_ms = metrics::percentile_inplace(tick_samples_[s], 0.5);
      st.p95_ms = metrics::percentile_inplace(tick_samples_[s], 0.95);
    }
    report_.completed += st.completed;
    report_.latency_sum_ms += st.latency_sum_ms;
    queued += st.queue_len;

    truth_.queue_len[s] = static_cast<double>(st.queue_len);
    truth_.throughput[s] = static_cast<double>(st.completed);
    truth_.service_util[s] = st.util_cpu;
    if (st.completed > 0) {
      truth_.latency_ms[s] = st.latency_sum_ms / static_cast<double>(st.completed);
    } else if (svc_oldest[s] > 0.0) {
      truth_.latency_ms[s] = svc_oldest[s];
    } else {
      truth_.latency_ms[s] = 0.0;
    }
  }
  refresh_history();

  accounting_.completed += report_.completed;
  accounting_.queued = queued;
  backlog_integral_ += static_cast<double>(queued);

  observed_ = truth_;
  if (opt.noise_std > 0.0) {
    for (double& u : observed_.utilization) u = std::clamp(u + rng.normal(0.0, opt.noise_std), 0.0, 1.0);
    for (double& u : observed_.service_util) u = std::clamp(u + rng.normal(0.0, opt.noise_std), 0.0, 1.0);
  }
  ++tick_;
  return observed_;
}

}  // namespace tradesim::cluster
