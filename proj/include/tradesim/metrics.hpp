#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tradesim::metrics {

/// Nearest-rank percentile: the ceil(level * n)-th smallest sample.
/// Throws std::invalid_argument on an empty sample or level outside (0,1].
double percentile(std::span<const double> samples, double level);
std::vector<double> percentiles(std::span<const double> samples, std::span<const double> levels);

/// In-place variant; reorders `samples`.
double percentile_inplace(std::vector<double>& samples, double level);

struct LognormalFit {
  double mu = 0.0;
  double sigma = 0.0;
  double ks_statistic = 0.0;  // against the fitted distribution
  std::size_t n = 0;
};

/// Maximum-likelihood fit on log-samples. Throws on non-positive samples.
LognormalFit fit_lognormal(std::span<const double> samples);

/// Kolmogorov-Smirnov statistic of `samples` against lognormal(mu, sigma).
double ks_statistic_lognormal(std::span<const double> samples, double mu, double sigma);

/// Asymptotic 5% critical value 1.358 / sqrt(n).
double ks_critical_5pct(std::size_t n);

struct RunSummary {
  std::string scenario_id;
  std::string scheduler;
  double mean_latency_ms = 0.0;
  double std_latency_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  double mean_cpu_util = 0.0;
  double mean_mem_util = 0.0;
  double mean_net_util = 0.0;
  double achieved_tps = 0.0;
  std::int64_t sanitized_actions = 0;
  double cache_hit_rate = 0.0;
  // Scheduling-quality aggregates.
  double allocation_util = 0.0;  // consumed / allocated CPU
  double load_balance = 0.0;     // 1 - CV of node CPU load
  double backlog_integral = 0.0;
  std::int64_t first_scale_up_tick = -1;
  std::int64_t completed = 0;
  std::int64_t still_queued = 0;

  bool operator==(const RunSummary&) const = default;
};

/// Summary statistics of a latency sample (mean, std, p50/p95/p99).
void fill_latency_stats(RunSummary& summary, std::span<const double> latencies_ms);

nlohmann::json to_json(const RunSummary& s);
RunSummary summary_from_json(const nlohmann::json& j);

struct ComparisonRow {
  std::string metric;
  double baseline = 0.0;
  double candidate = 0.0;
  double improvement_pct = 0.0;  // positive = candidate better
  bool operator==(const ComparisonRow&) const = default;
};

/// Direction-aware relative improvement. Throws std::invalid_argument when the
/// scenario identities differ.
std::vector<ComparisonRow> compare_runs(const RunSummary& baseline, const RunSummary& candidate);

/// Improvement of `candidate` over `baseline` for a lower-is-better metric, in percent.
double improvement_lower_better(double baseline, double candidate);
double improvement_higher_better(double baseline, double candidate);

/// Fixed-column CSV emitters. Field order is part of the file format.
std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::vector<ComparisonRow> parse_comparison_csv(const std::string& text);
std::string summary_csv(const RunSummary& s);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);
/// Exact inverse of format_double; the whole string must be a number.
double parse_double(std::string_view text);

}  // namespace tradesim::metrics
