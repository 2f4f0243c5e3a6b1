#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tradesim/cluster.hpp"
#include "tradesim/drl.hpp"
#include "tradesim/nn.hpp"
#include "tradesim/rng.hpp"
#include "tradesim/workload.hpp"

namespace tradesim::hybrid {

inline constexpr double kInfeasible = std::numeric_limits<double>::infinity();

/// Placement (service x node instance counts) plus per-service quota and priority.
struct Chromosome {
  std::vector<std::vector<int>> placement;
  std::vector<double> quota;
  std::vector<double> priority;

  std::size_t services() const { return placement.size(); }
  std::size_t nodes() const { return placement.empty() ? 0 : placement.front().size(); }
  int instances(std::size_t service) const;
  std::size_t gene_count() const { return services() * nodes() + 2 * services(); }
  bool operator==(const Chromosome&) const = default;
};

struct Limits {
  int max_instances = 32;   // per service
  double min_quota = 0.01;
  double grid = 0.0;        // > 0 snaps quota and priority to multiples of it
};

Limits limits_from(const cluster::Topology& t, double grid = 0.0);

/// Per-node quota load: sum over services of instances * quota.
std::vector<double> node_loads(const Chromosome& x);

/// Every service has 1..max_instances instances, quotas in [min_quota, 1],
/// priorities in [0, 1], node loads <= 1, grid respected.
bool satisfies_invariants(const Chromosome& x, const Limits& limits);

/// Minimal edits that restore the invariants. Valid inputs are returned unchanged.
/// Returns false when no repair exists (too many instances for min_quota).
bool repair(Chromosome& x, const Limits& limits);

Chromosome from_sim(const cluster::ClusterSim& sim);
Chromosome random_chromosome(std::size_t services, std::size_t nodes, const Limits& limits, Rng& rng);

struct FitnessWeights {
  double w1 = 0.4;
  double w2 = 0.35;
  double w3 = 0.25;
  double t_max = 500.0;  // ms
  double u_max = 1.0;
  double l_max = 1.0;

  void validate() const;
};

/// T: mean response ms; U: consumed / allocated CPU; L: 1 - CV of node CPU load.
struct Objectives {
  double t_ms = 0.0;
  double u = 0.0;
  double l = 0.0;
};

/// w1 T/T_max + w2 (1 - U/U_max) + w3 (1 - L/L_max), lower is better. L is
/// clamped to [0, L_max]. Non-finite inputs give kInfeasible.
double fitness(const Objectives& o, const FitnessWeights& w);

/// Objective triple for domination, all minimized: (T, -U, -L).
std::array<double, 3> objective_vector(const Objectives& o, const FitnessWeights& w);

struct Evaluation {
  Objectives objectives;
  double fitness = kInfeasible;
  cluster::SystemState state;  // true state at the end of the rollout
};

/// Short simulation used to score a chromosome.
struct EvalSpec {
  cluster::Topology topology;
  workload::WorkloadScenario scenario;  // rates are read per tick from here
  Tick start_tick = 0;
  Tick ticks = 120;
  std::uint64_t seed = 1;
  /// Requests divided by `scale`, work and payload multiplied by it; keeps CPU demand.
  double scale = 1.0;
  /// Requests per service already waiting when the rollout starts (unscaled).
  std::vector<double> backlog;
  FitnessWeights weights;
};

Evaluation rollout(const Chromosome& x, const EvalSpec& spec);

using Evaluator = std::function<Evaluation(const Chromosome&)>;

struct Rates {
  double pc = 0.0;
  double pm = 0.0;
};

/// Adaptive crossover/mutation rates from a goodness value f' (larger is better).
/// Throws std::invalid_argument when f_max < f_avg.
Rates adaptive_rates(double f_prime, double f_avg, double f_max);

/// Index of the lowest fitness among `size` draws with replacement.
std::size_t tournament_select(std::span<const double> fitness, int size, Rng& rng);
const Chromosome& tournament_select(const std::vector<Chromosome>& population, std::span<const double> fitness,
                                    int size, Rng& rng);

/// Uniform crossover with probability pc; children are repaired.
std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b, double pc, Rng& rng,
                                            const Limits& limits);

/// Each gene changes with probability pm: placement +-1 where feasible,
/// quota/priority by N(0, sigma) (one grid step when a grid is set).
Chromosome mutate(const Chromosome& x, double pm, Rng& rng, const Limits& limits, double sigma = 0.05);

/// Indices of the k lowest fitness values, stable on ties.
std::vector<std::size_t> select_top_k(std::span<const double> fitness, std::size_t k);

/// Pareto fronts over minimized objective triples; non-finite triples form the last front.
std::vector<std::vector<std::size_t>> non_dominated_sort(std::span<const std::array<double, 3>> objectives);

struct LocalSearchResult {
  Chromosome x;
  Evaluation eval;
  int evaluations = 0;
};

/// First-improvement hill climbing over single-gene neighbours.
LocalSearchResult local_search(const Chromosome& x, const Evaluation& fx, const Evaluator& eval, int budget,
                               const Limits& limits, double step = 0.05);

struct PopulationBounds {
  int n_min = 10;
  int n_max = 40;
};

/// Shrinks N by 25% when the best fitness improved < 0.1% over the last 5
/// generations, grows it by 25% above 5%; clamped to the bounds.
int adapt_population_size(std::span<const double> best_history, int n, const PopulationBounds& bounds);

struct RefineReward {
  double alpha = 1.0;       // fitness improvement
  double beta = 0.5;        // utilization gain
  double gamma_cost = 0.2;  // action magnitude

  void validate() const;
};

/// alpha P + beta E - gamma_cost C.
double refine_reward(double improvement, double utilization_gain, double cost, const RefineReward& r);

/// Cost of turning `from` into `to`, priced like a scheduling action.
double change_cost(const Chromosome& from, const Chromosome& to, const cluster::RewardSpec& prices = {});

/// Policy heads over a chromosome: the scheduling heads of the cluster.
nn::NetShape refine_shape(const Chromosome& x, const drl::SchedulingEnvConfig& cfg = {}, std::vector<int> hidden = {64, 64});

/// Applies a policy sample to a chromosome: per-service -1/0/+1 instance,
/// an optional migration on the shortlist of `state`, quota and priority
/// nudged by +-0.2 (sigmoid(u) - 0.5). Result is repaired.
Chromosome apply_delta(const Chromosome& x, const drl::ActionSample& a, const cluster::SystemState& state,
                       const Limits& limits, int shortlist);

struct RefineConfig {
  RefineReward reward;
  double lr = 3e-4;
  drl::PpoConfig ppo;
  int shortlist = 4;
};

struct RefineStats {
  int transitions = 0;
  int discarded = 0;   // non-finite rewards
  int replaced = 0;    // elites that improved
  double reward_sum = 0.0;
};

/// One policy query and one policy update per elite member. A refined member
/// replaces the original only when its fitness is lower.
RefineStats rl_refine(std::vector<Chromosome>& elite, std::vector<Evaluation>& elite_eval, drl::Policy& policy,
                      nn::Adam& optimizer, const Evaluator& eval, const Limits& limits, const RefineConfig& cfg,
                      const drl::EncodeSpec& encode, Rng& rng);

struct HybridConfig {
  int population = 20;
  int elite = 2;
  int max_iter = 30;
  PopulationBounds bounds;
  int tournament = 2;
  double mutation_sigma = 0.05;
  int local_search_budget = 8;
  double local_search_step = 0.05;
  double convergence_tol = 1e-4;
  int convergence_window = 10;
  FitnessWeights weights;
  bool rl_refine = true;
  RefineConfig refine;
  double grid = 0.0;
  std::uint64_t seed = 1;
  // rollout settings used by the scheduler adapter
  Tick eval_ticks = 120;
  double eval_scale = 20.0;

  void validate() const;
};

nlohmann::json to_json(const HybridConfig& c);
HybridConfig hybrid_config_from_json(const nlohmann::json& j, const std::string& where = "hybrid");

struct GenerationRow {
  int generation = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
  double pc_mean = 0.0;
  double pm_mean = 0.0;
  int n = 0;
};

struct HybridResult {
  Chromosome best;
  Evaluation best_eval;
  std::vector<GenerationRow> trace;
  bool converged = false;
  int evaluations = 0;
  RefineStats refine;
  /// Populations after each generation (kept when requested).
  std::vector<std::vector<Chromosome>> populations;
};

struct HybridOptions {
  drl::Policy* policy = nullptr;  // enables RL refinement when set
  drl::EncodeSpec encode;
  bool keep_populations = false;
};

/// The GA+RL loop: evaluate, rank (fronts then scalar fitness), keep the elite,
/// refine it with the policy, local search, breed N - k offspring, adapt N.
/// Stops after `max_iter` generations or when the best fitness moved less
/// than `convergence_tol` for `convergence_window` generations. Throws
/// ConfigError when the initial population cannot be repaired.
HybridResult hybrid_scheduling(const Chromosome& seed_solution, const Evaluator& eval, const Limits& limits,
                               const HybridConfig& config, const HybridOptions& options = {});

/// generation,best_fitness,mean_fitness,P_c_mean,P_m_mean,N
std::string trace_csv(const std::vector<GenerationRow>& trace);

}  // namespace tradesim::hybrid
