#include "tradesim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tradesim/json_util.hpp"

namespace tradesim::workload {

namespace {

double ramp_users(const RampSpec& ramp, Tick t) {
  if (t <= ramp.start_tick) return ramp.start_users;
  if (t >= ramp.start_tick + ramp.duration_ticks) return ramp.end_users;
  const double frac = static_cast<double>(t - ramp.start_tick) / static_cast<double>(ramp.duration_ticks);
  return ramp.start_users + (ramp.end_users - ramp.start_users) * frac;
}

}  // namespace

void WorkloadScenario::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) { throw ConfigError("scenario." + field, msg); };
  if (!(base_rate > 0.0) || !std::isfinite(base_rate)) fail("base_rate", "must be > 0");
  if (!(peak_rate >= base_rate) || !std::isfinite(peak_rate)) fail("peak_rate", "must be >= base_rate");
  if (horizon <= 0) fail("horizon", "must be > 0");
  if (!(tick_length > 0.0)) fail("tick_length", "must be > 0");
  if (tidal_period < 0) fail("tidal_period", "must be >= 0");
  if (ramp) {
    if (ramp->duration_ticks <= 0) fail("ramp.duration_ticks", "must be > 0");
    if (ramp->start_users < 0.0 || ramp->end_users < 0.0) fail("ramp", "user counts must be >= 0");
    if (ramp->rate_per_user < 0.0) fail("ramp.rate_per_user", "must be >= 0");
    if (ramp->rate_per_user == 0.0 && !(ramp->end_users > 0.0)) fail("ramp.end_users", "must be > 0 when rate_per_user is derived");
  }
  for (std::size_t i = 0; i < tidal_profile.size(); ++i) {
    if (!(tidal_profile[i].multiplier > 0.0)) fail("tidal_profile[" + std::to_string(i) + "]", "multiplier must be > 0");
    if (i > 0 && tidal_profile[i].tick_offset <= tidal_profile[i - 1].tick_offset) {
      fail("tidal_profile[" + std::to_string(i) + "]", "tick offsets must be strictly increasing");
    }
  }
  for (std::size_t i = 0; i < bursts.size(); ++i) {
    if (bursts[i].duration < 1) fail("bursts[" + std::to_string(i) + "].duration", "must be >= 1");
    if (!(bursts[i].magnitude >= 1.0)) fail("bursts[" + std::to_string(i) + "].magnitude", "must be >= 1");
  }
  if (service_mix.empty()) fail("service_mix", "must not be empty");
  double total = 0.0;
  for (double w : service_mix) {
    if (!(w >= 0.0)) fail("service_mix", "weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) fail("service_mix", "weights must have a positive sum");
  if (service_work.size() != service_mix.size()) fail("service_work", "length must match service_mix");
  if (service_payload.size() != service_mix.size()) fail("service_payload", "length must match service_mix");
  for (double w : service_work) {
    if (!(w > 0.0)) fail("service_work", "must be > 0");
  }
  for (double p : service_payload) {
    if (!(p >= 0.0)) fail("service_payload", "must be >= 0");
  }
  if (!(clock.day_length_s > 0.0)) fail("clock.day_length_s", "must be > 0");
}

double tidal_multiplier(const WorkloadScenario& scenario, Tick t) {
  const auto& pts = scenario.tidal_profile;
  if (pts.empty()) return 1.0;
  Tick x = t;
  if (scenario.tidal_period > 0) x = t % scenario.tidal_period;
  if (x <= pts.front().tick_offset) return pts.front().multiplier;
  if (x >= pts.back().tick_offset) return pts.back().multiplier;
  auto hi = std::upper_bound(pts.begin(), pts.end(), x,
                             [](Tick v, const TidalPoint& p) { return v < p.tick_offset; });
  auto lo = hi - 1;
  const double frac = static_cast<double>(x - lo->tick_offset) / static_cast<double>(hi->tick_offset - lo->tick_offset);
  return lo->multiplier + (hi->multiplier - lo->multiplier) * frac;
}

bool burst_active(const WorkloadScenario& scenario, Tick t) {
  return std::any_of(scenario.bursts.begin(), scenario.bursts.end(),
                     [t](const BurstSpec& b) { return b.active_at(t); });
}

double rate_profile(const WorkloadScenario& scenario, Tick t) {
  if (t < 0 || t >= scenario.horizon) {
    throw RangeError("rate_profile: tick " + std::to_string(t) + " outside horizon [0, " +
                     std::to_string(scenario.horizon) + ")");
  }
  double base = scenario.base_rate;
  if (scenario.ramp) {
    const RampSpec& r = *scenario.ramp;
    const double per_user = r.rate_per_user > 0.0 ? r.rate_per_user : scenario.base_rate / r.end_users;
    base = per_user * ramp_users(r, t);
  }
  double rate = base * tidal_multiplier(scenario, t);
  for (const auto& b : scenario.bursts) {
    if (b.active_at(t)) rate *= b.magnitude;
  }
  return std::min(rate, scenario.peak_rate);
}

Rng tick_rng(const WorkloadScenario& scenario, Tick t) {
  return Rng(derive_seed(scenario.seed, 0x776f726b6c6f6164ULL, static_cast<std::uint64_t>(t)));
}

std::vector<Request> generate_tick(const WorkloadScenario& scenario, Tick t) {
  Rng rng = tick_rng(scenario, t);
  return generate_tick(scenario, t, rng);
}

std::vector<Request> generate_tick(const WorkloadScenario& scenario, Tick t, Rng& rng) {
  const double lambda = rate_profile(scenario, t) * scenario.tick_length;
  const auto count = rng.poisson(lambda);
  std::vector<Request> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    Request r;
    r.arrival_tick = t;
    r.service_id = static_cast<std::uint32_t>(rng.categorical(scenario.service_mix));
    r.work_units = scenario.service_work[r.service_id] * (0.5 + rng.uniform());
    r.payload_bytes = scenario.service_payload[r.service_id];
    out.push_back(r);
  }
  return out;
}

const std::array<const char*, kServiceCount>& service_names() {
  static const std::array<const char*, kServiceCount> names = {
      "account-auth", "market-data-push", "trade-commission", "order-matching",
      "clearing-settlement", "risk-control", "ledger", "notification"};
  return names;
}

nlohmann::json to_json(const Clock& c) {
  return nlohmann::json{{"day_length_s", c.day_length_s}, {"start_s", c.start_s}, {"start_day", c.start_day},
                        {"open_s", c.open_s}, {"close_s", c.close_s}};
}

Clock clock_from_json(const nlohmann::json& j, const std::string& where) {
  Clock c;
  json_util::get_opt(j, "day_length_s", c.day_length_s, where);
  json_util::get_opt(j, "start_s", c.start_s, where);
  json_util::get_opt(j, "start_day", c.start_day, where);
  json_util::get_opt(j, "open_s", c.open_s, where);
  json_util::get_opt(j, "close_s", c.close_s, where);
  return c;
}

nlohmann::json to_json(const WorkloadScenario& s) {
  using nlohmann::json;
  json j;
  j["base_rate"] = s.base_rate;
  j["peak_rate"] = s.peak_rate;
  if (s.ramp) {
    j["ramp"] = json{{"start_tick", s.ramp->start_tick},
                     {"duration_ticks", s.ramp->duration_ticks},
                     {"start_users", s.ramp->start_users},
                     {"end_users", s.ramp->end_users},
                     {"rate_per_user", s.ramp->rate_per_user}};
  } else {
    j["ramp"] = nullptr;
  }
  j["tidal_profile"] = json::array();
  for (const auto& p : s.tidal_profile) {
    j["tidal_profile"].push_back(json{{"tick_offset", p.tick_offset}, {"multiplier", p.multiplier}});
  }
  j["tidal_period"] = s.tidal_period;
  j["bursts"] = json::array();
  for (const auto& b : s.bursts) {
    j["bursts"].push_back(json{{"start_tick", b.start_tick}, {"duration", b.duration}, {"magnitude", b.magnitude}});
  }
  j["horizon"] = s.horizon;
  j["tick_length"] = s.tick_length;
  j["seed"] = s.seed;
  j["service_mix"] = s.service_mix;
  j["service_work"] = s.service_work;
  j["service_payload"] = s.service_payload;
  j["clock"] = to_json(s.clock);
  return j;
}

WorkloadScenario scenario_from_json(const nlohmann::json& j, const std::string& where) {
  using json_util::get_opt;
  using json_util::get_req;
  if (!j.is_object()) throw ConfigError(where, "expected a JSON object");
  WorkloadScenario s;
  get_req(j, "base_rate", s.base_rate, where);
  get_req(j, "peak_rate", s.peak_rate, where);
  get_req(j, "horizon", s.horizon, where);
  get_opt(j, "tick_length", s.tick_length, where);
  get_opt(j, "seed", s.seed, where);
  if (j.contains("ramp") && !j.at("ramp").is_null()) {
    const auto& r = j.at("ramp");
    const std::string rw = where + ".ramp";
    RampSpec ramp;
    get_req(r, "start_tick", ramp.start_tick, rw);
    get_req(r, "duration_ticks", ramp.duration_ticks, rw);
    get_req(r, "start_users", ramp.start_users, rw);
    get_req(r, "end_users", ramp.end_users, rw);
    get_opt(r, "rate_per_user", ramp.rate_per_user, rw);
    s.ramp = ramp;
  }
  if (j.contains("tidal_profile")) {
    const auto& arr = j.at("tidal_profile");
    if (!arr.is_array()) throw ConfigError(where + ".tidal_profile", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string pw = where + ".tidal_profile[" + std::to_string(i) + "]";
      TidalPoint p;
      get_req(arr[i], "tick_offset", p.tick_offset, pw);
      get_req(arr[i], "multiplier", p.multiplier, pw);
      s.tidal_profile.push_back(p);
    }
  }
  get_opt(j, "tidal_period", s.tidal_period, where);
  if (j.contains("bursts")) {
    const auto& arr = j.at("bursts");
    if (!arr.is_array()) throw ConfigError(where + ".bursts", "expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string bw = where + ".bursts[" + std::to_string(i) + "]";
      BurstSpec b;
      get_req(arr[i], "start_tick", b.start_tick, bw);
      get_req(arr[i], "duration", b.duration, bw);
      get_req(arr[i], "magnitude", b.magnitude, bw);
      s.bursts.push_back(b);
    }
  }
  get_opt(j, "service_mix", s.service_mix, where);
  const std::size_t k = s.service_mix.size();
  s.service_work.assign(k, 2.0);
  s.service_payload.assign(k, 2048.0);
  get_opt(j, "service_work", s.service_work, where);
  get_opt(j, "service_payload", s.service_payload, where);
  if (j.contains("clock")) s.clock = clock_from_json(j.at("clock"), where + ".clock");
  s.validate();
  return s;
}

WorkloadScenario load_scenario(const std::string& path) {
  return scenario_from_json(json_util::read_file(path), path);
}

void save_scenario(const WorkloadScenario& scenario, const std::string& path) {
  json_util::write_file(path, to_json(scenario));
}

}  // namespace tradesim::workload
