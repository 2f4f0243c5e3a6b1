#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tradesim/common.hpp"
#include "tradesim/rng.hpp"
#include "tradesim/workload.hpp"

namespace tradesim::cluster {

inline constexpr std::size_t kResourceCount = 3;  // cpu, memory, network
enum Resource : std::size_t { kCpu = 0, kMem = 1, kNet = 2 };

struct NodeSpec {
  double cpu_capacity = 1000.0;  // CPU-ms per tick
  double mem_capacity = 16384.0;  // MB
  double net_capacity = 100.0;    // MB per tick
  bool operator==(const NodeSpec&) const = default;
};

struct ServiceSpec {
  std::string name;
  double mem_per_instance_mb = 512.0;
  double mem_per_request_mb = 0.05;
  double default_quota = 0.1;
  double default_priority = 0.5;
  int max_instances = 32;
  bool operator==(const ServiceSpec&) const = default;
};

struct PlacementSpec {
  int service = 0;
  int node = 0;
  double quota = 0.1;
  double priority = 0.5;
  bool operator==(const PlacementSpec&) const = default;
};

/// End-to-end latency = network + processing * contention + data * (1 - hit rate),
/// times a mean-one lognormal jitter.
struct LatencyModel {
  double network_ms = 15.0;
  double processing_ms = 45.0;
  double data_ms = 25.0;
  bool jitter = true;
  double jitter_sigma = 0.0;  // 0 = calibrated default (mean 85 ms, p95 120 ms)
  /// Utilization at which the 1/(1-rho) multiplier saturates; beyond it delay
  /// accrues as explicit queue wait.
  double rho_cap = 0.95;
  bool operator==(const LatencyModel&) const = default;

  double effective_sigma() const;
  double uncontended_ms() const { return network_ms + processing_ms + data_ms; }
};

struct SimOptions {
  double noise_std = 0.01;           // observation noise on utilizations
  int history_window = 60;           // ticks for the load mean/variance
  double utilization_smoothing = 0.5;
  double queue_reference = 1000.0;   // normalizer for the compact load level
  double burst_cap = 1.0;            // spare capacity an instance may borrow, as a multiple of its quota
  double cache_hit_rate = 0.0;
  double min_quota = 0.01;
  double tick_ms = 1000.0;
  bool record_latencies = true;
  bool operator==(const SimOptions&) const = default;
};

/// Optional cache model driven alongside the simulation.
struct CacheModelSpec {
  bool enabled = false;
  std::uint64_t key_space = 100000;
  double zipf_s = 1.0;
  std::uint64_t reads_per_tick = 2000;
  std::uint64_t l1_capacity = 1000;
  std::uint64_t l2_capacity = 10000;
  std::uint32_t l2_shards = 4;
  std::uint32_t l2_virtual_nodes = 128;
  bool operator==(const CacheModelSpec&) const = default;
};

struct Topology {
  std::vector<NodeSpec> nodes;
  std::vector<ServiceSpec> services;
  std::vector<PlacementSpec> placement;
  LatencyModel latency;
  SimOptions options;
  CacheModelSpec cache;

  void validate() const;
  std::size_t node_count() const { return nodes.size(); }
  std::size_t service_count() const { return services.size(); }
  bool operator==(const Topology&) const = default;
};

nlohmann::json to_json(const Topology& t);
Topology topology_from_json(const nlohmann::json& j, const std::string& where = "topology");
Topology load_topology(const std::string& path);

struct PendingRequest {
  Tick arrival_tick = 0;
  double remaining_work = 0.0;
  double payload_bytes = 0.0;
};

struct ServiceInstance {
  std::uint32_t id = 0;
  int service_id = 0;
  int node_id = 0;
  double cpu_quota = 0.1;  // effective share of node CPU, after per-node clamping
  double priority = 0.5;
  std::deque<PendingRequest> queue;
  double queue_work = 0.0;
  double utilization = 0.0;  // smoothed consumed / capacity
  double capacity = 0.0;     // CPU-ms available in the current tick
};

/// Observation vector {l, r, q, h, perf}.
struct SystemState {
  Tick tick = 0;
  std::size_t service_count = 0;
  std::size_t node_count = 0;
  std::vector<double> load;            // l: requests arrived last tick, per service
  std::vector<double> utilization;     // r: node-major (cpu, mem, net), in [0,1]
  std::vector<double> queue_len;       // q_len: pending requests per service
  std::vector<double> hist_mean;       // h: windowed mean of l
  std::vector<double> hist_var;        // h: windowed variance of l
  std::vector<double> latency_ms;      // perf: mean latency per service
  std::vector<double> throughput;      // perf: completions per service last tick
  std::vector<double> service_util;    // per-service CPU utilization (not part of the encoded vector)

  double util(std::size_t node, Resource r) const { return utilization[node * kResourceCount + r]; }
  std::size_t d_l() const { return load.size(); }
  std::size_t d_r() const { return utilization.size(); }
  std::size_t d_g() const { return queue_len.size(); }
  std::size_t d_h() const { return hist_mean.size() + hist_var.size(); }
  std::size_t d_p() const { return latency_ms.size() + throughput.size(); }
  bool operator==(const SystemState&) const = default;
};

/// Composite action {instance deltas, migration matrix, priorities, quotas}.
/// Empty vectors mean "leave unchanged".
struct SchedulingAction {
  std::vector<int> instance_delta;                   // per service
  std::vector<std::vector<std::uint8_t>> migration;  // service x node
  std::vector<double> priority;                      // per service, [0,1]
  std::vector<double> quota;                         // per service, [0,1]

  static SchedulingAction noop() { return {}; }
  bool is_noop() const;
  bool operator==(const SchedulingAction&) const = default;
};

/// What applying an action actually changed.
struct ActionEffect {
  int instances_created = 0;
  int instances_removed = 0;
  int migrations = 0;
  double quota_change = 0.0;     // sum |delta quota| over services
  double priority_change = 0.0;  // sum |delta priority| over services
  int sanitized = 0;             // components clamped or dropped

  ActionEffect& operator+=(const ActionEffect& o);
};

struct ServiceTickStats {
  std::int64_t arrived = 0;
  std::int64_t completed = 0;
  double latency_sum_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double util_cpu = 0.0;
  double util_mem = 0.0;
  double util_net = 0.0;
  std::int64_t queue_len = 0;
};

struct StepReport {
  Tick tick = 0;
  ActionEffect effect;
  std::vector<ServiceTickStats> services;
  std::int64_t completed = 0;
  double latency_sum_ms = 0.0;
  double cpu_consumed = 0.0;   // CPU-ms served this tick
  double cpu_allocated = 0.0;  // CPU-ms available to instances this tick
};

struct Accounting {
  std::int64_t dispatched = 0;
  std::int64_t completed = 0;
  std::int64_t queued = 0;
};

/// Base latency for one request before queue wait. `utilization` >= rho_cap
/// saturates the contention multiplier. Jitter is drawn only when `rng` is
/// non-null and the model enables it.
double service_latency(const LatencyModel& model, double utilization, double cache_hit_rate, Rng* rng);

/// Lognormal sigma for a mean-one multiplier whose 95th percentile is `p95_over_mean`.
double calibrate_jitter_sigma(double p95_over_mean);

/// Utilization at 1x load such that mean latency at `high` x load divided by
/// mean latency at `low` x load equals `target_ratio` (linear load-to-utilization).
double calibrate_reference_utilization(const LatencyModel& model, double low, double high, double target_ratio);

struct RewardSpec {
  double w1 = 0.4;
  double w2 = 0.35;
  double w3 = 0.25;
  double t_target_ms = 50.0;
  double u_target = 0.7;
  double cost_instance = 0.01;
  double cost_migration = 0.02;
  double cost_quota = 0.005;

  void validate() const;
};

/// Scheduling overhead C_t for an applied action.
double scheduling_cost(const ActionEffect& effect, const RewardSpec& spec);

/// -(w1 sum T_i/T_target + w2 sum |u_j - u_target| + w3 cost).
double reward_from_terms(std::span<const double> latencies_ms, std::span<const double> utilizations,
                         double cost, const RewardSpec& spec);

/// Reward measured on the post-action state: service latencies and node CPU utilizations.
double reward(const SystemState& before, const SystemState& after, const ActionEffect& effect,
              const RewardSpec& spec);

/// Compact (C, M, N, L) projection. L = total queue / queue_reference.
std::array<double, 4> encode_compact_state(const SystemState& state, double queue_reference);

class ClusterSim {
 public:
  explicit ClusterSim(Topology topology);

  /// Apply `action`, enqueue `requests`, serve one tick. Returns the noisy observation.
  SystemState step(const SchedulingAction& action, std::span<const workload::Request> requests, Rng& rng);

  /// Bulk reconfiguration to an explicit placement (service x node instance
  /// counts) with per-service quotas and priorities.
  ActionEffect reconfigure(const std::vector<std::vector<int>>& placement, std::span<const double> quota,
                           std::span<const double> priority);

  SystemState observe_state() const { return observed_; }
  const SystemState& true_state() const { return truth_; }
  const StepReport& last_report() const { return report_; }
  const Accounting& accounting() const { return accounting_; }
  const Topology& topology() const { return topology_; }
  const std::vector<ServiceInstance>& instances() const { return instances_; }
  Tick tick() const { return tick_; }

  std::vector<std::vector<int>> placement_matrix() const;
  std::vector<int> instance_counts() const;
  const std::vector<double>& service_quota() const { return service_quota_; }
  const std::vector<double>& service_priority() const { return service_priority_; }
  /// Sum of effective quotas per node.
  std::vector<double> node_quota_sums() const;

  void set_cache_hit_rate(double rate);
  void set_record_latencies(bool on) { topology_.options.record_latencies = on; }
  void set_jitter(bool on) { topology_.latency.jitter = on; }

  /// All latency samples since construction (when recording is enabled).
  const std::vector<double>& latency_samples() const { return latency_samples_; }
  void clear_latency_samples() { latency_samples_.clear(); }

  /// Sum over ticks of total queue length.
  double backlog_integral() const { return backlog_integral_; }

 private:
  ActionEffect apply_action(const SchedulingAction& action);
  void add_instance(int service, int node, ActionEffect& effect);
  void remove_instance(std::size_t index, ActionEffect& effect);
  void move_instance(std::size_t index, int node);
  int least_loaded_node() const;
  void enforce_node_quotas(ActionEffect* effect);
  void rebuild_index();
  void compute_capacities();
  void dispatch(const workload::Request& r);
  void requeue(std::deque<PendingRequest>&& queue, int service);
  void refresh_history();

  Topology topology_;
  std::vector<ServiceInstance> instances_;
  std::vector<std::vector<std::size_t>> by_service_;
  std::vector<double> service_quota_;
  std::vector<double> service_priority_;
  std::vector<double> node_util_;  // true smoothed utilization, node-major
  std::deque<std::vector<double>> load_window_;
  SystemState truth_;
  SystemState observed_;
  StepReport report_;
  Accounting accounting_;
  std::vector<double> latency_samples_;
  std::vector<std::vector<double>> tick_samples_;
  double backlog_integral_ = 0.0;
  Tick tick_ = 0;
  std::uint32_t next_instance_id_ = 0;
};

}  // namespace tradesim::cluster
