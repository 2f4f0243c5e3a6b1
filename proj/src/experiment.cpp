#include "tradesim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "tradesim/cache.hpp"
#include "tradesim/drl.hpp"
#include "tradesim/json_util.hpp"

namespace tradesim::experiment {

namespace fs = std::filesystem;
using json_util::get_opt;
using json_util::get_req;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const std::string& path, const std::string& field) {
  if (path.empty()) throw ConfigError(field, "missing required path");
  if (!fs::exists(path)) throw ConfigError(field, "file not found: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir + ": " + ec.message());
}

cluster::SchedulingAction merge(cluster::SchedulingAction a, const cluster::SchedulingAction& b) {
  if (b.is_noop()) return a;
  if (a.is_noop()) return b;
  if (!b.instance_delta.empty()) {
    a.instance_delta.resize(std::max(a.instance_delta.size(), b.instance_delta.size()), 0);
    for (std::size_t s = 0; s < b.instance_delta.size(); ++s) a.instance_delta[s] += b.instance_delta[s];
  }
  if (!b.migration.empty()) a.migration = b.migration;
  if (!b.priority.empty()) a.priority = b.priority;
  if (!b.quota.empty()) a.quota = b.quota;
  return a;
}

drl::Encoding parse_encoding(const std::string& s, const std::string& where) {
  if (s == "full") return drl::Encoding::kFull;
  if (s == "compact") return drl::Encoding::kCompact;
  throw ConfigError(where, "encoding must be full or compact");
}

nlohmann::json env_to_json(const drl::SchedulingEnvConfig& c) {
  return {{"decision_interval", c.decision_interval},
          {"shortlist", c.shortlist},
          {"encoding", c.encode.mode == drl::Encoding::kFull ? "full" : "compact"},
          {"load_scale", c.encode.load_scale},
          {"queue_reference", c.encode.queue_reference},
          {"latency_scale_ms", c.encode.latency_scale_ms},
          {"throughput_scale", c.encode.throughput_scale}};
}

drl::SchedulingEnvConfig env_from_json(const nlohmann::json& j, const std::string& where) {
  drl::SchedulingEnvConfig c;
  get_opt(j, "decision_interval", c.decision_interval, where);
  get_opt(j, "shortlist", c.shortlist, where);
  std::string enc = "full";
  get_opt(j, "encoding", enc, where);
  c.encode.mode = parse_encoding(enc, where + ".encoding");
  get_opt(j, "load_scale", c.encode.load_scale, where);
  get_opt(j, "queue_reference", c.encode.queue_reference, where);
  get_opt(j, "latency_scale_ms", c.encode.latency_scale_ms, where);
  get_opt(j, "throughput_scale", c.encode.throughput_scale, where);
  if (c.decision_interval < 1) throw ConfigError(where + ".decision_interval", "must be >= 1");
  if (c.shortlist < 0) throw ConfigError(where + ".shortlist", "must be >= 0");
  return c;
}

nlohmann::json dataset_to_json(const lstm::DatasetSpec& d) {
  return {{"window", d.window}, {"seq_len", d.seq_len}, {"seq_stride", d.seq_stride},
          {"horizon", d.horizon}, {"sample_stride", d.sample_stride}};
}

lstm::DatasetSpec dataset_from_json(const nlohmann::json& j, const std::string& where) {
  lstm::DatasetSpec d;
  get_opt(j, "window", d.window, where);
  get_opt(j, "seq_len", d.seq_len, where);
  get_opt(j, "seq_stride", d.seq_stride, where);
  get_opt(j, "horizon", d.horizon, where);
  get_opt(j, "sample_stride", d.sample_stride, where);
  return d;
}

std::string scenario_id(const std::string& path, std::uint64_t seed) {
  return fs::path(path).stem().string() + "#" + std::to_string(seed);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  require_file(scenario, "config.scenario");
  require_file(topology, "config.topology");
  const auto& kinds = scheduler_kinds();
  if (std::find(kinds.begin(), kinds.end(), scheduler) == kinds.end()) {
    throw ConfigError("config.scheduler", "unknown scheduler '" + scheduler + "'");
  }
  if (!predictor.empty()) require_file(predictor, "config.predictor");
  if (decision_interval < 1) throw ConfigError("config.decision_interval", "must be >= 1");
  if (proactive.check_every < 1) throw ConfigError("config.proactive.check_every", "must be >= 1");
  if (!scheduler_config.is_object()) throw ConfigError("config.scheduler_config", "must be an object");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"scenario", c.scenario},
          {"topology", c.topology},
          {"scheduler", c.scheduler},
          {"scheduler_config", c.scheduler_config},
          {"predictor", c.predictor.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.predictor)},
          {"seed", c.seed},
          {"out", c.out},
          {"decision_interval", c.decision_interval},
          {"strict_deterministic", c.strict_deterministic},
          {"proactive",
           {{"burst_threshold", c.proactive.burst_threshold},
            {"check_every", c.proactive.check_every},
            {"hold", c.proactive.hold}}}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::string& where) {
  ExperimentConfig c;
  get_opt(j, "scenario", c.scenario, where);
  get_opt(j, "topology", c.topology, where);
  get_opt(j, "scheduler", c.scheduler, where);
  if (j.contains("scheduler_config") && !j.at("scheduler_config").is_null()) c.scheduler_config = j.at("scheduler_config");
  get_opt(j, "predictor", c.predictor, where);
  get_opt(j, "seed", c.seed, where);
  get_opt(j, "out", c.out, where);
  get_opt(j, "decision_interval", c.decision_interval, where);
  get_opt(j, "strict_deterministic", c.strict_deterministic, where);
  if (j.contains("proactive")) {
    const auto& p = j.at("proactive");
    get_opt(p, "burst_threshold", c.proactive.burst_threshold, where + ".proactive");
    get_opt(p, "check_every", c.proactive.check_every, where + ".proactive");
    get_opt(p, "hold", c.proactive.hold, where + ".proactive");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Runner

RunOutput run(const cluster::Topology& topology, const workload::WorkloadScenario& scenario, sched::Scheduler& scheduler,
              const RunOptions& options, std::uint64_t sim_seed) {
  if (options.decision_interval < 1) throw ConfigError("decision_interval", "must be >= 1");
  cluster::ClusterSim sim(topology);
  Rng rng(derive_seed(sim_seed, 5));
  const std::size_t n = topology.node_count();
  const auto& tc = topology.cache;

  std::unique_ptr<cache::CacheHierarchy> cache;
  std::unique_ptr<cache::ZipfSampler> zipf;
  Rng cache_rng(derive_seed(sim_seed, 6));
  if (tc.enabled) {
    cache::CacheConfig cc;
    cc.l1_capacity = tc.l1_capacity;
    cc.l2_capacity = tc.l2_capacity;
    cc.l2_shards = tc.l2_shards;
    cc.l2_virtual_nodes = tc.l2_virtual_nodes;
    cache = std::make_unique<cache::CacheHierarchy>(cc);
    zipf = std::make_unique<cache::ZipfSampler>(tc.key_space, tc.zipf_s);
  }

  RunOutput out;
  auto& sum = out.summary;
  sum.scenario_id = options.scenario_id;
  sum.scheduler = scheduler.name();
  std::ostringstream trace;
  if (options.trace) trace << "tick,service_id,completed,p50_ms,p95_ms,util_cpu,util_mem,util_net,queue_len\n";

  cluster::SystemState observed = sim.observe_state();
  cluster::SchedulingAction pending;
  std::vector<double> node_cpu(n, 0.0);
  double cpu = 0.0, mem = 0.0, net = 0.0, consumed = 0.0, allocated = 0.0;
  std::int64_t sanitized = 0;
  std::uint64_t cache_hits = 0, cache_lookups = 0;
  auto note_scale_up = [&](const cluster::ActionEffect& e, Tick t) {
    if (e.instances_created > 0 && sum.first_scale_up_tick < 0) sum.first_scale_up_tick = t;
  };
  // A reconfiguration that only moves instances is not a scale-up.
  auto apply_reconfigure = [&](const hybrid::Chromosome& x, Tick t) {
    const auto before = sim.instance_counts();
    const auto e = sim.reconfigure(x.placement, x.quota, x.priority);
    const auto after = sim.instance_counts();
    for (std::size_t s = 0; s < after.size(); ++s) {
      if (after[s] > before[s] && sum.first_scale_up_tick < 0) sum.first_scale_up_tick = t;
    }
    sanitized += e.sanitized;
  };

  for (Tick t = 0; t < scenario.horizon; ++t) {
    if (t % options.decision_interval == 0) {
      sched::Decision d = scheduler.decide(observed, sim, t);
      if (d.reconfigure) apply_reconfigure(*d.reconfigure, t);
      pending = merge(std::move(pending), d.action);
    }
    if (cache) {
      const auto before = cache->stats();
      const double base_ms = static_cast<double>(t) * topology.options.tick_ms;
      for (std::uint64_t i = 0; i < tc.reads_per_tick; ++i) {
        const auto now = static_cast<cache::Millis>(base_ms + static_cast<double>(i) * topology.options.tick_ms /
                                                                   static_cast<double>(tc.reads_per_tick));
        const std::string key = "k" + std::to_string(zipf->sample(cache_rng));
        if (!cache->get(key, now).hit()) cache->put(key, "v", now);
      }
      const auto after = cache->stats();
      const auto hits = (after.l1.hits + after.l2.hits) - (before.l1.hits + before.l2.hits);
      const auto looks = after.lookups - before.lookups;
      cache_hits += hits;
      cache_lookups += looks;
      sim.set_cache_hit_rate(looks > 0 ? static_cast<double>(hits) / static_cast<double>(looks) : 0.0);
    }
    const auto reqs = workload::generate_tick(scenario, t);
    observed = sim.step(pending, reqs, rng);
    pending = {};
    const auto& rep = sim.last_report();
    note_scale_up(rep.effect, t);
    sanitized += rep.effect.sanitized;
    consumed += rep.cpu_consumed;
    allocated += rep.cpu_allocated;
    const auto& truth = sim.true_state();
    double c = 0.0, m = 0.0, w = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      c += truth.util(j, cluster::kCpu);
      m += truth.util(j, cluster::kMem);
      w += truth.util(j, cluster::kNet);
      node_cpu[j] += truth.util(j, cluster::kCpu);
    }
    cpu += c / static_cast<double>(n);
    mem += m / static_cast<double>(n);
    net += w / static_cast<double>(n);
    if (options.trace) {
      for (std::size_t s = 0; s < rep.services.size(); ++s) {
        const auto& st = rep.services[s];
        trace << t << ',' << s << ',' << st.completed << ',' << metrics::format_double(st.p50_ms) << ','
              << metrics::format_double(st.p95_ms) << ',' << metrics::format_double(st.util_cpu) << ','
              << metrics::format_double(st.util_mem) << ',' << metrics::format_double(st.util_net) << ','
              << st.queue_len << '\n';
      }
    }
    if (auto extra = scheduler.on_tick(observed, sim, t, static_cast<double>(reqs.size()))) {
      if (extra->reconfigure) apply_reconfigure(*extra->reconfigure, t + 1);
      pending = merge(std::move(pending), extra->action);
    }
  }

  // Requests still waiting are counted with their age at the end of the run.
  std::vector<double> samples = sim.latency_samples();
  std::int64_t waiting = 0;
  for (const auto& inst : sim.instances()) {
    for (const auto& r : inst.queue) {
      samples.push_back(static_cast<double>(sim.tick() - r.arrival_tick) * topology.options.tick_ms +
                        topology.latency.uncontended_ms());
      ++waiting;
    }
  }
  if (!samples.empty()) metrics::fill_latency_stats(sum, samples);
  const double ticks = static_cast<double>(std::max<Tick>(scenario.horizon, 1));
  sum.mean_cpu_util = cpu / ticks;
  sum.mean_mem_util = mem / ticks;
  sum.mean_net_util = net / ticks;
  sum.achieved_tps = static_cast<double>(sim.accounting().completed) / (ticks * scenario.tick_length);
  sum.sanitized_actions = sanitized;
  sum.cache_hit_rate = cache ? (cache_lookups > 0 ? static_cast<double>(cache_hits) / static_cast<double>(cache_lookups) : 0.0)
                             : topology.options.cache_hit_rate;
  sum.allocation_util = allocated > 0.0 ? consumed / allocated : 0.0;
  double mean = 0.0;
  for (double& v : node_cpu) {
    v /= ticks;
    mean += v;
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : node_cpu) var += (v - mean) * (v - mean);
  sum.load_balance = 1.0 - (mean > 0.0 ? std::sqrt(var / static_cast<double>(n)) / mean : 0.0);
  sum.backlog_integral = sim.backlog_integral();
  sum.completed = sim.accounting().completed;
  sum.still_queued = waiting;
  out.trace_csv = trace.str();
  return out;
}

double run_fitness(const metrics::RunSummary& s, const hybrid::FitnessWeights& w) {
  return hybrid::fitness({s.mean_latency_ms, s.allocation_util, s.load_balance}, w);
}

std::unique_ptr<sched::Scheduler> make_scheduler(const std::string& kind, nlohmann::json& settings,
                                                 const workload::WorkloadScenario& scenario,
                                                 const cluster::Topology& topology, std::uint64_t seed) {
  if (settings.is_null()) settings = nlohmann::json::object();
  const std::string where = "scheduler_config";
  if (kind == "round-robin") return std::make_unique<sched::RoundRobinScheduler>();
  if (kind == "random") {
    std::uint64_t s = derive_seed(seed, 41);
    get_opt(settings, "seed", s, where);
    settings["seed"] = s;
    return std::make_unique<sched::RandomScheduler>(s);
  }
  if (kind == "threshold-autoscaler") {
    sched::ThresholdConfig t;
    get_opt(settings, "scale_up", t.scale_up, where);
    get_opt(settings, "scale_down", t.scale_down, where);
    get_opt(settings, "cooldown", t.cooldown, where);
    if (!(t.scale_down < t.scale_up)) throw ConfigError(where, "scale_down must be below scale_up");
    if (t.cooldown < 0) throw ConfigError(where + ".cooldown", "must be >= 0");
    settings = {{"scale_up", t.scale_up}, {"scale_down", t.scale_down}, {"cooldown", t.cooldown}};
    return std::make_unique<sched::ThresholdAutoscaler>(t);
  }
  if (kind == "hybrid") {
    if (!settings.contains("seed")) settings["seed"] = derive_seed(seed, 42);
    hybrid::HybridConfig h = hybrid::hybrid_config_from_json(settings, where);
    double load_change = 0.25;
    get_opt(settings, "load_change", load_change, where);
    settings = hybrid::to_json(h);
    settings["load_change"] = load_change;
    return std::make_unique<sched::HybridScheduler>(h, scenario, load_change);
  }
  if (kind == "drl") {
    std::string policy;
    get_req(settings, "policy", policy, where);
    require_file(policy, where + ".policy");
    drl::SchedulingEnvConfig env = env_from_json(settings.value("env", nlohmann::json::object()), where + ".env");
    drl::Policy p = drl::load_policy(policy);
    const auto expected = drl::scheduling_shape(topology.service_count(), topology.node_count(), env, p.net().shape().hidden);
    if (p.net().shape().input != expected.input || p.net().shape().categorical != expected.categorical) {
      throw ConfigError(where + ".policy", "checkpoint does not match the topology");
    }
    settings["env"] = env_to_json(env);
    return std::make_unique<sched::DrlScheduler>(std::move(p), env);
  }
  throw ConfigError("config.scheduler", "unknown scheduler '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Commands

metrics::RunSummary cmd_simulate(const ExperimentConfig& cfg_in, std::ostream& log) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  workload::WorkloadScenario scenario = workload::load_scenario(cfg.scenario);
  scenario.seed = cfg.seed;
  const cluster::Topology topology = cluster::load_topology(cfg.topology);
  if (topology.service_count() != scenario.service_count()) {
    throw ConfigError("config.topology", "service count differs from the scenario's service mix");
  }
  auto scheduler = make_scheduler(cfg.scheduler, cfg.scheduler_config, scenario, topology, cfg.seed);
  if (!cfg.predictor.empty()) {
    auto model = lstm::load_model(cfg.predictor);
    scheduler = std::make_unique<sched::ProactiveScheduler>(std::move(scheduler), std::move(model), scenario, cfg.proactive);
  }
  log << to_json(cfg).dump(2) << '\n';

  RunOptions opts;
  opts.decision_interval = cfg.decision_interval;
  opts.scenario_id = scenario_id(cfg.scenario, cfg.seed);
  const RunOutput out = run(topology, scenario, *scheduler, opts, cfg.seed);
  ensure_dir(cfg.out);
  write_text((fs::path(cfg.out) / "trace.csv").string(), out.trace_csv);
  json_util::write_file((fs::path(cfg.out) / "summary.json").string(), metrics::to_json(out.summary));
  return out.summary;
}

void cmd_generate(const std::string& scenario_path, std::uint64_t seed, const std::string& out, std::ostream& log) {
  require_file(scenario_path, "scenario");
  workload::WorkloadScenario s = workload::load_scenario(scenario_path);
  s.seed = seed;
  log << workload::to_json(s).dump(2) << '\n';
  ensure_dir(out);
  std::ostringstream req;
  req << "tick,service_id,work_units,payload_bytes\n";
  for (Tick t = 0; t < s.horizon; ++t) {
    for (const auto& r : workload::generate_tick(s, t)) {
      req << r.arrival_tick << ',' << r.service_id << ',' << metrics::format_double(r.work_units) << ','
          << metrics::format_double(r.payload_bytes) << '\n';
    }
  }
  write_text((fs::path(out) / "requests.csv").string(), req.str());
  write_text((fs::path(out) / "history.csv").string(), lstm::history_csv(workload::simulate_history(s, 0, s.horizon)));
}

nlohmann::json resolve_predictor_config(const nlohmann::json& config) {
  nlohmann::json r = config;
  const lstm::TrainSpec spec = lstm::train_spec_from_json(config.value("predictor", nlohmann::json::object()), "predictor");
  r["predictor"] = lstm::to_json(spec);
  r["data"] = dataset_to_json(dataset_from_json(config.value("data", nlohmann::json::object()), "data"));
  if (!r.contains("train_fraction")) r["train_fraction"] = 0.8;
  if (!r.contains("burst_threshold")) r["burst_threshold"] = 1.5;
  if (!r.contains("scenario")) r["scenario"] = nullptr;
  return r;
}

lstm::Accuracy cmd_train_predictor(const nlohmann::json& config_in, const std::string& out, std::ostream& log) {
  const nlohmann::json config = resolve_predictor_config(config_in);
  std::string dataset;
  get_req(config, "dataset", dataset, "config");
  require_file(dataset, "config.dataset");
  workload::Clock clock;
  double tick_length = 1.0;
  if (!config.at("scenario").is_null()) {
    const auto path = config.at("scenario").get<std::string>();
    require_file(path, "config.scenario");
    const auto s = workload::load_scenario(path);
    clock = s.clock;
    tick_length = s.tick_length;
  }
  const lstm::TrainSpec spec = lstm::train_spec_from_json(config.at("predictor"), "predictor");
  const lstm::DatasetSpec data = dataset_from_json(config.at("data"), "data");
  const double frac = config.at("train_fraction").get<double>();
  if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("config.train_fraction", "must be in (0,1)");
  log << config.dump(2) << '\n';

  const auto history = lstm::parse_history_csv(read_text(dataset), clock, tick_length);
  const auto all = lstm::make_dataset(history, data);
  auto [train_set, val_set] = lstm::split_by_time(all, frac, data);
  if (train_set.size() == 0 || val_set.size() == 0) throw ConfigError("config.dataset", "history too short for a split");
  const auto result = lstm::train(train_set, val_set, data, spec);
  const auto pred = lstm::predict(result.model, val_set);
  const auto acc = lstm::accuracy(pred, val_set.targets);
  ensure_dir(out);
  lstm::save_model(result.model, (fs::path(out) / "model.json").string());
  write_text((fs::path(out) / "curve.csv").string(), lstm::curve_csv(result.curve));
  log << "held-out accuracy " << acc.fraction << " (" << val_set.size() << " samples, best epoch " << result.best_epoch
      << ")\n";
  return acc;
}

nlohmann::json resolve_drl_config(const nlohmann::json& config) {
  nlohmann::json r = config;
  r["train"] = drl::to_json(drl::train_config_from_json(config.value("train", nlohmann::json::object()), "train"));
  r["env"] = env_to_json(env_from_json(config.value("env", nlohmann::json::object()), "env"));
  if (!r.contains("bandit")) r["bandit"] = false;
  return r;
}

void cmd_train_drl(const nlohmann::json& config_in, const std::string& out, std::ostream& log) {
  const nlohmann::json config = resolve_drl_config(config_in);
  const drl::TrainConfig tc = drl::train_config_from_json(config.at("train"), "train");
  drl::TrainResult result;
  if (config.at("bandit").get<bool>()) {
    log << config.dump(2) << '\n';
    drl::BanditEnv env(tc.episode_length);
    result = drl::train_scheduler(env, tc);
    log << "optimal-arm rate " << drl::bandit_optimal_rate(result.policy, 1000, derive_seed(tc.seed, 99)) << '\n';
  } else {
    std::string scen, topo;
    get_req(config, "scenario", scen, "config");
    get_req(config, "topology", topo, "config");
    require_file(scen, "config.scenario");
    require_file(topo, "config.topology");
    const auto env_cfg = env_from_json(config.at("env"), "env");
    log << config.dump(2) << '\n';
    drl::SchedulingEnv env(cluster::load_topology(topo), workload::load_scenario(scen), env_cfg);
    result = drl::train_scheduler(env, tc);
  }
  ensure_dir(out);
  drl::save_policy(result.policy, (fs::path(out) / "policy.json").string());
  write_text((fs::path(out) / "curve.csv").string(), drl::curve_csv(result.curve));
}

std::vector<metrics::ComparisonRow> cmd_compare(const std::string& baseline, const std::string& candidate,
                                                const std::string& out, std::ostream& log) {
  require_file(baseline, "baseline");
  require_file(candidate, "candidate");
  log << nlohmann::json{{"baseline", baseline}, {"candidate", candidate}, {"out", out}}.dump(2) << '\n';
  const auto a = metrics::summary_from_json(json_util::read_file(baseline));
  const auto b = metrics::summary_from_json(json_util::read_file(candidate));
  std::vector<metrics::ComparisonRow> rows;
  try {
    rows = metrics::compare_runs(a, b);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("compare", e.what());
  }
  const std::string csv = metrics::comparison_csv(rows);
  ensure_dir(out);
  write_text((fs::path(out) / "comparison.csv").string(), csv);
  log << csv;
  return rows;
}

}  // namespace tradesim::experiment
