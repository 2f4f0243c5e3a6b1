#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tradesim/common.hpp"
#include "tradesim/rng.hpp"

namespace tradesim::workload {

/// Rectangular rate multiplier active on [start_tick, start_tick + duration).
struct BurstSpec {
  Tick start_tick = 0;
  Tick duration = 1;
  double magnitude = 1.0;

  bool active_at(Tick t) const { return t >= start_tick && t < start_tick + duration; }
  bool operator==(const BurstSpec&) const = default;
};

/// Linear concurrent-user ramp. Users are `start_users` before the ramp and
/// `end_users` after it; the offered rate is `rate_per_user` times users.
struct RampSpec {
  Tick start_tick = 0;
  Tick duration_ticks = 1;
  double start_users = 0.0;
  double end_users = 0.0;
  /// Requests/second per concurrent user. 0 means base_rate / end_users.
  double rate_per_user = 0.0;

  bool operator==(const RampSpec&) const = default;
};

struct TidalPoint {
  Tick tick_offset = 0;
  double multiplier = 1.0;
  bool operator==(const TidalPoint&) const = default;
};

/// Wall-clock mapping for ticks; drives the time-of-day features.
struct Clock {
  double day_length_s = 86400.0;
  double start_s = 0.0;  // seconds into the day at tick 0
  int start_day = 0;     // 0 = Monday
  double open_s = 9.5 * 3600.0;
  double close_s = 15.0 * 3600.0;

  bool operator==(const Clock&) const = default;
};

struct WorkloadScenario {
  double base_rate = 5000.0;
  double peak_rate = 15000.0;
  std::optional<RampSpec> ramp;
  std::vector<TidalPoint> tidal_profile;
  /// When > 0 the tidal profile repeats with this period (ticks).
  Tick tidal_period = 0;
  std::vector<BurstSpec> bursts;
  Tick horizon = 900;
  double tick_length = 1.0;
  std::uint64_t seed = 1;
  std::vector<double> service_mix = std::vector<double>(kServiceCount, 1.0);
  /// Mean CPU-ms per request for each service.
  std::vector<double> service_work = std::vector<double>(kServiceCount, 2.0);
  /// Mean payload bytes per request for each service.
  std::vector<double> service_payload = std::vector<double>(kServiceCount, 2048.0);
  Clock clock;

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
  std::size_t service_count() const { return service_mix.size(); }
  bool operator==(const WorkloadScenario&) const = default;
};

struct Request {
  Tick arrival_tick = 0;
  std::uint32_t service_id = 0;
  double work_units = 1.0;
  double payload_bytes = 0.0;

  bool operator==(const Request&) const = default;
};

/// Offered rate (requests/second) at tick t. Throws RangeError outside [0, horizon).
double rate_profile(const WorkloadScenario& scenario, Tick t);

/// Tidal multiplier at tick t (1 when no profile is configured).
double tidal_multiplier(const WorkloadScenario& scenario, Tick t);

/// Requests arriving during tick t. The generator is seeded from (seed, t), so
/// every tick is independently reproducible.
std::vector<Request> generate_tick(const WorkloadScenario& scenario, Tick t);
/// Same, with a caller-supplied generator.
std::vector<Request> generate_tick(const WorkloadScenario& scenario, Tick t, Rng& rng);

/// Generator used by generate_tick(scenario, t).
Rng tick_rng(const WorkloadScenario& scenario, Tick t);

/// Whether any burst is active at t.
bool burst_active(const WorkloadScenario& scenario, Tick t);

/// Service names of the trading cluster, indexed by service_id.
const std::array<const char*, kServiceCount>& service_names();

// JSON scenario files.
nlohmann::json to_json(const WorkloadScenario& scenario);
WorkloadScenario scenario_from_json(const nlohmann::json& j, const std::string& where = "scenario");
WorkloadScenario load_scenario(const std::string& path);
void save_scenario(const WorkloadScenario& scenario, const std::string& path);

nlohmann::json to_json(const Clock& clock);
Clock clock_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace tradesim::workload
