#include "tradesim/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tradesim/rng.hpp"

namespace tradesim::metrics {

namespace {

std::size_t nearest_rank(std::size_t n, double level) {
  if (n == 0) throw std::invalid_argument("percentile: empty sample");
  if (!(level > 0.0 && level <= 1.0)) throw std::invalid_argument("percentile: level must be in (0,1]");
  // The epsilon absorbs representation error such as 0.95 * 100 = 95.00000000000001.
  const double r = std::ceil(level * static_cast<double>(n) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(r), 1, n);
}

}  // namespace

double percentile_inplace(std::vector<double>& samples, double level) {
  const std::size_t rank = nearest_rank(samples.size(), level);
  auto nth = samples.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(samples.begin(), nth, samples.end());
  return *nth;
}

double percentile(std::span<const double> samples, double level) {
  std::vector<double> copy(samples.begin(), samples.end());
  return percentile_inplace(copy, level);
}

std::vector<double> percentiles(std::span<const double> samples, std::span<const double> levels) {
  std::vector<double> sorted(samples.begin(), samples.end());
  if (sorted.empty()) throw std::invalid_argument("percentiles: empty sample");
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(levels.size());
  for (double level : levels) out.push_back(sorted[nearest_rank(sorted.size(), level) - 1]);
  return out;
}

double ks_statistic_lognormal(std::span<const double> samples, double mu, double sigma) {
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    double f;
    if (sigma > 0.0) {
      f = normal_cdf((std::log(sorted[i]) - mu) / sigma);
    } else {
      f = std::log(sorted[i]) < mu ? 0.0 : 1.0;
    }
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_5pct(std::size_t n) { return 1.358 / std::sqrt(static_cast<double>(n)); }

LognormalFit fit_lognormal(std::span<const double> samples) {
  if (samples.empty()) throw std::invalid_argument("fit_lognormal: empty sample");
  for (double x : samples) {
    if (!(x > 0.0)) throw std::invalid_argument("fit_lognormal: samples must be positive");
  }
  // Shifted by the first log-sample so that a constant sample gives sigma == 0 exactly.
  const double ref = std::log(samples[0]);
  double sum = 0.0;
  for (double x : samples) sum += std::log(x) - ref;
  const double n = static_cast<double>(samples.size());
  const double shift = sum / n;
  LognormalFit fit;
  fit.n = samples.size();
  fit.mu = ref + shift;
  double ss = 0.0;
  for (double x : samples) {
    const double d = std::log(x) - ref - shift;
    ss += d * d;
  }
  fit.sigma = std::sqrt(ss / n);
  fit.ks_statistic = ks_statistic_lognormal(samples, fit.mu, fit.sigma);
  return fit;
}

void fill_latency_stats(RunSummary& s, std::span<const double> lat) {
  if (lat.empty()) return;
  double sum = 0.0;
  for (double x : lat) sum += x;
  const double n = static_cast<double>(lat.size());
  s.mean_latency_ms = sum / n;
  double ss = 0.0;
  for (double x : lat) ss += (x - s.mean_latency_ms) * (x - s.mean_latency_ms);
  s.std_latency_ms = std::sqrt(ss / n);
  const double levels[] = {0.5, 0.95, 0.99};
  const auto p = percentiles(lat, levels);
  s.p50_ms = p[0];
  s.p95_ms = p[1];
  s.p99_ms = p[2];
}

nlohmann::json to_json(const RunSummary& s) {
  // nlohmann::ordered_json would also work; a plain object is sorted by key,
  // which keeps the field order stable.
  return nlohmann::json{{"scenario_id", s.scenario_id},
                        {"scheduler", s.scheduler},
                        {"mean_latency_ms", s.mean_latency_ms},
                        {"std_latency_ms", s.std_latency_ms},
                        {"p50_ms", s.p50_ms},
                        {"p95_ms", s.p95_ms},
                        {"p99_ms", s.p99_ms},
                        {"mean_cpu_util", s.mean_cpu_util},
                        {"mean_mem_util", s.mean_mem_util},
                        {"mean_net_util", s.mean_net_util},
                        {"achieved_tps", s.achieved_tps},
                        {"sanitized_actions", s.sanitized_actions},
                        {"cache_hit_rate", s.cache_hit_rate},
                        {"allocation_util", s.allocation_util},
                        {"load_balance", s.load_balance},
                        {"backlog_integral", s.backlog_integral},
                        {"first_scale_up_tick", s.first_scale_up_tick},
                        {"completed", s.completed},
                        {"still_queued", s.still_queued}};
}

RunSummary summary_from_json(const nlohmann::json& j) {
  RunSummary s;
  s.scenario_id = j.at("scenario_id").get<std::string>();
  s.scheduler = j.at("scheduler").get<std::string>();
  s.mean_latency_ms = j.at("mean_latency_ms").get<double>();
  s.std_latency_ms = j.at("std_latency_ms").get<double>();
  s.p50_ms = j.at("p50_ms").get<double>();
  s.p95_ms = j.at("p95_ms").get<double>();
  s.p99_ms = j.at("p99_ms").get<double>();
  s.mean_cpu_util = j.at("mean_cpu_util").get<double>();
  s.mean_mem_util = j.at("mean_mem_util").get<double>();
  s.mean_net_util = j.at("mean_net_util").get<double>();
  s.achieved_tps = j.at("achieved_tps").get<double>();
  s.sanitized_actions = j.at("sanitized_actions").get<std::int64_t>();
  s.cache_hit_rate = j.at("cache_hit_rate").get<double>();
  s.allocation_util = j.at("allocation_util").get<double>();
  s.load_balance = j.at("load_balance").get<double>();
  s.backlog_integral = j.at("backlog_integral").get<double>();
  s.first_scale_up_tick = j.at("first_scale_up_tick").get<std::int64_t>();
  s.completed = j.at("completed").get<std::int64_t>();
  s.still_queued = j.at("still_queued").get<std::int64_t>();
  return s;
}

double improvement_lower_better(double baseline, double candidate) {
  if (baseline == candidate) return 0.0;
  if (baseline == 0.0) return candidate > 0.0 ? -100.0 : 100.0;
  return (baseline - candidate) / std::fabs(baseline) * 100.0;
}

double improvement_higher_better(double baseline, double candidate) {
  if (baseline == candidate) return 0.0;
  if (baseline == 0.0) return candidate > 0.0 ? 100.0 : -100.0;
  return (candidate - baseline) / std::fabs(baseline) * 100.0;
}

std::vector<ComparisonRow> compare_runs(const RunSummary& base, const RunSummary& cand) {
  if (base.scenario_id != cand.scenario_id) {
    throw std::invalid_argument("compare_runs: scenario mismatch (" + base.scenario_id + " vs " +
                                cand.scenario_id + ")");
  }
  std::vector<ComparisonRow> rows;
  auto lower = [&](const char* name, double b, double c) {
    rows.push_back({name, b, c, improvement_lower_better(b, c)});
  };
  auto higher = [&](const char* name, double b, double c) {
    rows.push_back({name, b, c, improvement_higher_better(b, c)});
  };
  lower("mean_latency_ms", base.mean_latency_ms, cand.mean_latency_ms);
  lower("p50_ms", base.p50_ms, cand.p50_ms);
  lower("p95_ms", base.p95_ms, cand.p95_ms);
  lower("p99_ms", base.p99_ms, cand.p99_ms);
  higher("achieved_tps", base.achieved_tps, cand.achieved_tps);
  higher("mean_cpu_util", base.mean_cpu_util, cand.mean_cpu_util);
  higher("allocation_util", base.allocation_util, cand.allocation_util);
  higher("load_balance", base.load_balance, cand.load_balance);
  higher("cache_hit_rate", base.cache_hit_rate, cand.cache_hit_rate);
  lower("backlog_integral", base.backlog_integral, cand.backlog_integral);
  return rows;
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "metric,baseline,candidate,improvement_pct\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << format_double(r.baseline) << ',' << format_double(r.candidate) << ','
        << format_double(r.improvement_pct) << '\n';
  }
  return out.str();
}

std::vector<ComparisonRow> parse_comparison_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<ComparisonRow> rows;
  if (!std::getline(in, line) || line != "metric,baseline,candidate,improvement_pct") {
    throw std::invalid_argument("comparison csv: bad header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[4];
    for (auto& x : f) {
      if (!std::getline(ls, x, ',')) throw std::invalid_argument("comparison csv: short row");
    }
    rows.push_back({f[0], parse_double(f[1]), parse_double(f[2]), parse_double(f[3])});
  }
  return rows;
}

std::string summary_csv(const RunSummary& s) {
  const auto j = to_json(s);
  std::ostringstream head, row;
  bool first = true;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!first) {
      head << ',';
      row << ',';
    }
    first = false;
    head << it.key();
    if (it->is_string()) {
      row << it->get<std::string>();
    } else if (it->is_number_float()) {
      row << format_double(it->get<double>());
    } else {
      row << it->dump();
    }
  }
  return head.str() + "\n" + row.str() + "\n";
}

}  // namespace tradesim::metrics
