#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "tradesim/metrics.hpp"
#include "tradesim/rng.hpp"

using namespace tradesim;
using namespace tradesim::metrics;

TEST_CASE("nearest-rank percentiles") {
  std::vector<double> xs(100);
  std::iota(xs.begin(), xs.end(), 1.0);
  CHECK(percentile(xs, 0.95) == 95.0);
  CHECK(percentile(xs, 0.5) == 50.0);
  CHECK(percentile(xs, 0.001) == 1.0);
  CHECK(percentile(xs, 1.0) == 100.0);

  const std::vector<double> one{42.0};
  for (double l : {0.01, 0.5, 0.95, 0.99}) CHECK(percentile(one, l) == 42.0);

  const std::vector<double> none;
  CHECK_THROWS_AS(percentile(none, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(percentile(xs, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(percentile(xs, 1.5), std::invalid_argument);
}

TEST_CASE("percentiles match a full-sort oracle, are monotone and permutation invariant") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> xs(n);
    for (auto& x : xs) x = rng.normal(0.0, 10.0);
    std::vector<double> sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    const std::vector<double> levels{0.05, 0.25, 0.5, 0.9, 0.95, 0.99};
    const auto got = percentiles(xs, levels);
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const auto rank = static_cast<std::size_t>(std::ceil(levels[i] * static_cast<double>(n)));
      CHECK(got[i] == sorted[std::max<std::size_t>(rank, 1) - 1]);
      if (i > 0) CHECK(got[i] >= got[i - 1]);
    }
    std::vector<double> shuffled = xs;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    CHECK(percentiles(shuffled, levels) == got);
    std::vector<double> scratch = xs;
    CHECK(percentile_inplace(scratch, 0.95) == got[4]);
  }
}

TEST_CASE("lognormal fit recovers the generating parameters") {
  Rng rng(99);
  const double mu0 = std::log(85.0), sigma0 = 0.25;
  std::vector<double> xs(100000);
  for (auto& x : xs) x = rng.lognormal(mu0, sigma0);
  const auto fit = fit_lognormal(xs);
  CHECK(fit.mu == doctest::Approx(mu0).epsilon(0.01));
  CHECK(fit.sigma == doctest::Approx(sigma0).epsilon(0.01));
  CHECK(fit.n == xs.size());
  CHECK(fit.ks_statistic < ks_critical_5pct(xs.size()));
}

TEST_CASE("lognormal fit of constant samples and bad input") {
  const std::vector<double> c(50, 7.5);
  const auto fit = fit_lognormal(c);
  CHECK(fit.mu == doctest::Approx(std::log(7.5)).epsilon(1e-14));
  CHECK(fit.sigma == 0.0);
  const std::vector<double> bad{1.0, 0.0, 2.0};
  CHECK_THROWS(fit_lognormal(bad));
  const std::vector<double> neg{1.0, -3.0};
  CHECK_THROWS(fit_lognormal(neg));
}

TEST_CASE("KS of the generating distribution passes at 5% in most trials") {
  Rng rng(3);
  int pass = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> xs(500);
    for (auto& x : xs) x = rng.lognormal(1.0, 0.5);
    if (ks_statistic_lognormal(xs, 1.0, 0.5) < ks_critical_5pct(xs.size())) ++pass;
  }
  CHECK(pass >= 0.9 * trials);
  // a clearly wrong distribution fails
  std::vector<double> xs(2000);
  for (auto& x : xs) x = rng.lognormal(1.0, 0.5);
  CHECK(ks_statistic_lognormal(xs, 1.5, 0.5) > ks_critical_5pct(xs.size()));
}

TEST_CASE("improvement arithmetic") {
  CHECK(improvement_lower_better(180.0, 105.0) == doctest::Approx(41.6667).epsilon(1e-5));
  CHECK(improvement_higher_better(13500.0, 25000.0) == doctest::Approx(85.1852).epsilon(1e-5));
  CHECK(improvement_lower_better(100.0, 100.0) == 0.0);
  CHECK(improvement_higher_better(0.0, 0.0) == 0.0);
}

TEST_CASE("compare_runs is direction aware and zero on identical runs") {
  RunSummary a;
  a.scenario_id = "open";
  a.mean_latency_ms = 180.0;
  a.p95_ms = 300.0;
  a.achieved_tps = 13500.0;
  a.mean_cpu_util = 0.4;
  RunSummary b = a;
  for (const auto& row : compare_runs(a, b)) CHECK(row.improvement_pct == 0.0);

  b.mean_latency_ms = 105.0;
  b.achieved_tps = 25000.0;
  const auto rows = compare_runs(a, b);
  auto find = [&](const std::string& m) {
    return *std::find_if(rows.begin(), rows.end(), [&](const ComparisonRow& r) { return r.metric == m; });
  };
  CHECK(find("mean_latency_ms").improvement_pct == doctest::Approx(41.7).epsilon(1e-3));
  CHECK(find("achieved_tps").improvement_pct == doctest::Approx(85.2).epsilon(1e-3));

  b.scenario_id = "other";
  CHECK_THROWS_AS(compare_runs(a, b), std::invalid_argument);
}

TEST_CASE("comparison CSV and summary JSON round-trip") {
  Rng rng(8);
  RunSummary s;
  s.scenario_id = "market_open";
  s.scheduler = "hybrid";
  s.mean_latency_ms = rng.uniform(50, 500);
  s.std_latency_ms = 1.0 / 3.0;
  s.p50_ms = 0.1 + 0.2;
  s.p95_ms = 123.456789012345;
  s.p99_ms = 1e300;
  s.mean_cpu_util = rng.uniform();
  s.achieved_tps = 14999.999999;
  s.sanitized_actions = 12345678901LL;
  s.first_scale_up_tick = -1;
  s.backlog_integral = 5e-324;
  const auto back = summary_from_json(nlohmann::json::parse(to_json(s).dump()));
  CHECK(back == s);

  auto t = s;
  t.mean_latency_ms *= 0.7;
  t.achieved_tps = 2.0 / 3.0;
  const auto rows = compare_runs(s, t);
  const auto csv = comparison_csv(rows);
  CHECK(csv.rfind("metric,baseline,candidate,improvement_pct\n", 0) == 0);
  CHECK(parse_comparison_csv(csv) == rows);
  CHECK_THROWS(parse_comparison_csv("nope\n"));
}

TEST_CASE("format_double round-trips") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("latency stats keep p50 <= p95 <= p99") {
  Rng rng(2);
  std::vector<double> xs(5000);
  for (auto& x : xs) x = rng.lognormal(4.4, 0.3);
  RunSummary s;
  fill_latency_stats(s, xs);
  CHECK(s.p50_ms <= s.p95_ms);
  CHECK(s.p95_ms <= s.p99_ms);
  CHECK(s.mean_latency_ms == doctest::Approx(std::accumulate(xs.begin(), xs.end(), 0.0) / 5000.0));
}
