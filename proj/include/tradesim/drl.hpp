#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tradesim/cluster.hpp"
#include "tradesim/nn.hpp"
#include "tradesim/workload.hpp"

namespace tradesim::drl {

using nn::Mat;
using nn::Vec;

enum class Encoding { kFull, kCompact };

struct EncodeSpec {
  Encoding mode = Encoding::kFull;
  double load_scale = 1000.0;       // requests per tick
  double queue_reference = 1000.0;  // requests
  double latency_scale_ms = 100.0;
  double throughput_scale = 1000.0;
  std::size_t expected_dim = 0;     // 0 accepts any width
};

/// Full mode: l, flattened r, q_len, h (mean, variance), perf (latency, throughput),
/// each divided by its scale and clamped to [-5, 5]. Compact mode: (C, M, N, L).
Vec encode_state(const cluster::SystemState& state, const EncodeSpec& spec);
std::size_t encoded_dim(std::size_t services, std::size_t nodes, Encoding mode);

/// Q = V + (A - mean(A)).
Vec dueling_combine(double value, const Vec& advantage);

/// min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv).
double clipped_surrogate(double ratio, double advantage, double eps);

enum class Mode { kSample, kGreedy };

/// Raw policy output: one index per categorical group and the pre-squash
/// Gaussian draws. Priorities and quotas are sigmoid(u).
struct ActionSample {
  std::vector<int> choices;
  Vec u;
  double log_prob = 0.0;
  double value = 0.0;
};

class Policy {
 public:
  Policy() = default;
  Policy(nn::NetShape shape, int dueling_group, Rng& rng);
  Policy(nn::NetShape shape, int dueling_group, Vec params);

  ActionSample act(const Vec& features, Mode mode, Rng& rng) const;
  /// Q over the dueling group's choices.
  Vec dueling_q(const Vec& features) const;
  double state_value(const Vec& features) const;
  /// Per-group categorical probabilities for one state.
  std::vector<Vec> probabilities(const Vec& features) const;
  double log_prob(const Vec& features, const std::vector<int>& choices, const Vec& u) const;

  const nn::Network& net() const { return net_; }
  const Vec& params() const { return params_; }
  Vec& params() { return params_; }
  int dueling_group() const { return dueling_group_; }

 private:
  nn::Network net_;
  Vec params_;
  int dueling_group_ = -1;
};

nlohmann::json to_json(const Policy& p);
Policy policy_from_json(const nlohmann::json& j);
void save_policy(const Policy& p, const std::string& path);
Policy load_policy(const std::string& path);

struct Transition {
  Vec state;
  std::vector<int> choices;
  Vec u;
  double old_log_prob = 0.0;
  double reward = 0.0;
  bool done = false;
  double value = 0.0;  // V(s) at collection time
  double ret = 0.0;
  double advantage = 0.0;
};

struct ReturnsAdvantages {
  std::vector<double> returns;
  std::vector<double> advantages;
};

/// Discounted returns within episodes (reset after `done`) and generalized
/// advantage estimates, normalized to zero mean and unit variance when `normalize`.
/// Throws std::invalid_argument on an empty trajectory.
ReturnsAdvantages compute_returns_and_advantages(std::span<const double> rewards, std::span<const double> values,
                                                 std::span<const bool> dones, double gamma, double lambda,
                                                 bool normalize = true);
void compute_returns_and_advantages(std::vector<Transition>& trajectory, double gamma, double lambda,
                                    bool normalize = true);

struct PpoConfig {
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

struct PpoResult {
  double loss = 0.0;
  double objective = 0.0;  // mean clipped surrogate
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  int excluded = 0;  // non-finite ratios
  Vec grad;
};

/// loss = -objective + value_coef * mean (Q(s, a) - G)^2 - entropy_coef * entropy,
/// where Q(s, a) uses the dueling group's choice (V alone when there is none).
PpoResult ppo_loss(const Policy& policy, const Vec& params, std::span<const Transition> batch, const PpoConfig& cfg);

struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  double lr = 3e-4;
  int epochs = 4;
  int minibatch = 64;
  int episode_length = 50;
  int episodes = 100;
  int episodes_per_update = 4;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  std::vector<int> hidden{64, 64};
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where = "train");

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual int obs_dim() const = 0;
  virtual std::vector<int> categorical() const = 0;
  virtual int gaussian() const = 0;
  /// Categorical group whose choice indexes the advantage stream; -1 for none.
  virtual int dueling_group() const { return -1; }
  virtual Vec reset(std::uint64_t seed) = 0;
  virtual StepResult step(const ActionSample& action) = 0;
};

struct CurveRow {
  int episode = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double clip_fraction = 0.0;
};

struct TrainResult {
  Policy policy;
  std::vector<CurveRow> curve;
  int excluded = 0;
};

/// Collect episodes, estimate advantages, run clipped-objective epochs. Throws
/// DivergenceError when the loss or parameters become non-finite.
TrainResult train_scheduler(Env& env, const TrainConfig& config);
/// Same, continuing from `initial`.
TrainResult train_scheduler(Env& env, const TrainConfig& config, Policy initial);

std::string curve_csv(const std::vector<CurveRow>& curve);

/// Two contexts, two arms; arm == context pays 0, the other -1.
class BanditEnv : public Env {
 public:
  explicit BanditEnv(int episode_length = 8) : length_(episode_length) {}
  int obs_dim() const override { return 2; }
  std::vector<int> categorical() const override { return {2}; }
  int gaussian() const override { return 0; }
  Vec reset(std::uint64_t seed) override;
  StepResult step(const ActionSample& action) override;
  int context() const { return context_; }

  static Vec observation(int context);

 private:
  Vec draw();
  Rng rng_{0};
  int context_ = 0;
  int length_;
  int t_ = 0;
};

/// Greedy optimal-arm rate over `trials` random contexts.
double bandit_optimal_rate(const Policy& policy, int trials, std::uint64_t seed);

/// Node pairs (busiest -> least loaded by observed CPU) offered to the migration head.
std::vector<std::pair<int, int>> migration_shortlist(const cluster::SystemState& state, int size);

struct SchedulingEnvConfig {
  EncodeSpec encode;
  cluster::RewardSpec reward;
  int decision_interval = 10;
  int shortlist = 4;
};

/// Policy heads for a cluster: per service {-1, 0, +1}, a migration choice
/// (shortlist + "none", the dueling group), and 2k Gaussians for priority then quota.
nn::NetShape scheduling_shape(std::size_t services, std::size_t nodes, const SchedulingEnvConfig& cfg,
                              std::vector<int> hidden = {64, 64});

/// Turns a policy sample into a cluster action given the observed state. The
/// migrated service is the busiest one with an instance on the source node.
cluster::SchedulingAction decode_action(const ActionSample& sample, const cluster::SystemState& observed,
                                        const cluster::ClusterSim& sim, const SchedulingEnvConfig& cfg);

/// Decision-level environment: each step applies one action and simulates
/// `decision_interval` ticks of the scenario.
class SchedulingEnv : public Env {
 public:
  SchedulingEnv(cluster::Topology topology, workload::WorkloadScenario scenario, SchedulingEnvConfig cfg);
  int obs_dim() const override;
  std::vector<int> categorical() const override;
  int gaussian() const override;
  int dueling_group() const override { return static_cast<int>(topology_.service_count()); }
  Vec reset(std::uint64_t seed) override;
  StepResult step(const ActionSample& action) override;

  const cluster::ClusterSim* sim() const { return sim_.get(); }

 private:
  cluster::Topology topology_;
  workload::WorkloadScenario scenario_;
  workload::WorkloadScenario active_;  // scenario with the episode's seed
  SchedulingEnvConfig cfg_;
  std::unique_ptr<cluster::ClusterSim> sim_;
  Rng rng_{0};
  Tick t_ = 0;
};

}  // namespace tradesim::drl
