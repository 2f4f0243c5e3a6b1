#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace tradesim {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed for a sub-stream identified by (seed, a, b).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Deterministic random source. The engine is std::mt19937_64 (fully specified
/// by the standard); the distributions are implemented here so that streams
/// are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform in (0, 1].
  double uniform_pos() { return 1.0 - uniform(); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double lognormal(double mu, double sigma);
  double exponential(double rate);

  /// Knuth multiplication for small means, PTRS transformed rejection otherwise.
  std::int64_t poisson(double mean);

  /// Index drawn proportionally to non-negative `weights`.
  std::size_t categorical(std::span<const double> weights);

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::int64_t poisson_knuth(double mean);
  std::int64_t poisson_ptrs(double mean);

  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Standard normal CDF and quantile.
double normal_cdf(double z);
double normal_quantile(double p);

}  // namespace tradesim
