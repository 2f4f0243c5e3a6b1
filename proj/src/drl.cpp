#include "tradesim/drl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tradesim/json_util.hpp"
#include "tradesim/metrics.hpp"

namespace tradesim::drl {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

double clamp5(double x) { return std::clamp(x, -5.0, 5.0); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Numerically stable softmax of v.
Vec softmax(const Eigen::Ref<const Vec>& v) {
  Vec e = (v.array() - v.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

std::size_t encoded_dim(std::size_t k, std::size_t n, Encoding mode) {
  if (mode == Encoding::kCompact) return 4;
  return k + n * cluster::kResourceCount + k + 2 * k + 2 * k;
}

Vec encode_state(const cluster::SystemState& s, const EncodeSpec& spec) {
  Vec out;
  if (spec.mode == Encoding::kCompact) {
    const auto c = cluster::encode_compact_state(s, spec.queue_reference);
    out = Vec(4);
    for (int i = 0; i < 4; ++i) out[i] = clamp5(c[static_cast<std::size_t>(i)]);
  } else {
    out = Vec(static_cast<Eigen::Index>(encoded_dim(s.service_count, s.node_count, Encoding::kFull)));
    Eigen::Index i = 0;
    for (double x : s.load) out[i++] = clamp5(x / spec.load_scale);
    for (double x : s.utilization) out[i++] = clamp5(x);
    for (double x : s.queue_len) out[i++] = clamp5(x / spec.queue_reference);
    for (double x : s.hist_mean) out[i++] = clamp5(x / spec.load_scale);
    for (double x : s.hist_var) out[i++] = clamp5(x / (spec.load_scale * spec.load_scale));
    for (double x : s.latency_ms) out[i++] = clamp5(x / spec.latency_scale_ms);
    for (double x : s.throughput) out[i++] = clamp5(x / spec.throughput_scale);
    if (i != out.size()) throw std::invalid_argument("encode_state: state fields have inconsistent sizes");
  }
  if (spec.expected_dim != 0 && static_cast<std::size_t>(out.size()) != spec.expected_dim) {
    throw std::invalid_argument("encode_state: encoded width " + std::to_string(out.size()) + " != configured " +
                                std::to_string(spec.expected_dim));
  }
  return out;
}

Vec dueling_combine(double value, const Vec& advantage) {
  return (advantage.array() - advantage.mean() + value).matrix();
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(nn::NetShape shape, int dueling_group, Rng& rng) : net_(std::move(shape)), dueling_group_(dueling_group) {
  params_ = net_.init(rng);
}

Policy::Policy(nn::NetShape shape, int dueling_group, Vec params)
    : net_(std::move(shape)), params_(std::move(params)), dueling_group_(dueling_group) {
  if (params_.size() != net_.param_count()) throw std::invalid_argument("Policy: parameter count mismatch");
}

ActionSample Policy::act(const Vec& features, Mode mode, Rng& rng) const {
  const Mat out = net_.forward(params_, features);
  const auto& shape = net_.shape();
  ActionSample a;
  Eigen::Index off = 0;
  for (int n : shape.categorical) {
    const Vec p = softmax(out.col(0).segment(off, n));
    int c = 0;
    if (mode == Mode::kSample) {
      c = static_cast<int>(rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(n))));
    } else {
      p.maxCoeff(&c);
    }
    a.choices.push_back(c);
    a.log_prob += std::log(p[c]);
    off += n;
  }
  const auto log_std = net_.log_std(params_);
  a.u = Vec(shape.gaussian);
  for (int i = 0; i < shape.gaussian; ++i) {
    const double mu = out(off + i, 0);
    const double sd = std::exp(log_std[i]);
    const double u = mode == Mode::kSample ? mu + sd * rng.normal() : mu;
    a.u[i] = u;
    const double z = (u - mu) / sd;
    a.log_prob += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  a.value = out(shape.value_row(), 0);
  return a;
}

Vec Policy::dueling_q(const Vec& features) const {
  const Mat out = net_.forward(params_, features);
  const auto& shape = net_.shape();
  return dueling_combine(out(shape.value_row(), 0), out.col(0).segment(shape.advantage_row(), shape.advantage));
}

double Policy::state_value(const Vec& features) const {
  return net_.forward(params_, features)(net_.shape().value_row(), 0);
}

std::vector<Vec> Policy::probabilities(const Vec& features) const {
  const Mat out = net_.forward(params_, features);
  std::vector<Vec> probs;
  Eigen::Index off = 0;
  for (int n : net_.shape().categorical) {
    probs.push_back(softmax(out.col(0).segment(off, n)));
    off += n;
  }
  return probs;
}

double Policy::log_prob(const Vec& features, const std::vector<int>& choices, const Vec& u) const {
  const Mat out = net_.forward(params_, features);
  const auto& shape = net_.shape();
  double lp = 0.0;
  Eigen::Index off = 0;
  for (std::size_t g = 0; g < shape.categorical.size(); ++g) {
    const int n = shape.categorical[g];
    lp += std::log(softmax(out.col(0).segment(off, n))[choices[g]]);
    off += n;
  }
  const auto log_std = net_.log_std(params_);
  for (int i = 0; i < shape.gaussian; ++i) {
    const double z = (u[i] - out(off + i, 0)) / std::exp(log_std[i]);
    lp += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return lp;
}

nlohmann::json to_json(const Policy& p) {
  return {{"format", "tradesim-policy"},
          {"version", 1},
          {"shape", nn::to_json(p.net().shape())},
          {"dueling_group", p.dueling_group()},
          {"param_count", p.params().size()},
          {"params", std::vector<double>(p.params().data(), p.params().data() + p.params().size())}};
}

Policy policy_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tradesim-policy") throw ConfigError("policy", "not a policy checkpoint");
  if (j.value("version", 0) != 1) throw ConfigError("policy.version", "unsupported checkpoint version");
  const auto values = j.at("params").get<std::vector<double>>();
  Vec params = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
  return Policy(nn::shape_from_json(j.at("shape")), j.at("dueling_group").get<int>(), std::move(params));
}

void save_policy(const Policy& p, const std::string& path) { json_util::write_file(path, to_json(p)); }

Policy load_policy(const std::string& path) {
  const auto j = json_util::read_file(path);
  try {
    return policy_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path, std::string("malformed policy: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

// ---------------------------------------------------------------------------
// Returns and advantages

ReturnsAdvantages compute_returns_and_advantages(std::span<const double> rewards, std::span<const double> values,
                                                 std::span<const bool> dones, double gamma, double lambda,
                                                 bool normalize) {
  const std::size_t n = rewards.size();
  if (n == 0) throw std::invalid_argument("compute_returns_and_advantages: empty trajectory");
  if (values.size() != n || dones.size() != n) throw std::invalid_argument("compute_returns_and_advantages: length mismatch");
  ReturnsAdvantages out;
  out.returns.assign(n, 0.0);
  out.advantages.assign(n, 0.0);
  double g = 0.0;
  double gae = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const bool last = dones[i] || i + 1 == n;
    g = rewards[i] + (last ? 0.0 : gamma * g);
    const double next_value = last ? 0.0 : values[i + 1];
    const double delta = rewards[i] + gamma * next_value - values[i];
    gae = delta + (last ? 0.0 : gamma * lambda * gae);
    out.returns[i] = g;
    out.advantages[i] = gae;
  }
  if (normalize) {
    const double mean = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (double& a : out.advantages) a = sd > 1e-8 ? (a - mean) / sd : a - mean;
  }
  return out;
}

void compute_returns_and_advantages(std::vector<Transition>& traj, double gamma, double lambda, bool normalize) {
  std::vector<double> r, v;
  std::vector<char> d;
  for (const auto& t : traj) {
    r.push_back(t.reward);
    v.push_back(t.value);
    d.push_back(t.done ? 1 : 0);
  }
  // std::vector<bool> has no contiguous storage to span over.
  std::unique_ptr<bool[]> dones(new bool[d.size()]);
  for (std::size_t i = 0; i < d.size(); ++i) dones[i] = d[i] != 0;
  const auto ra = compute_returns_and_advantages(r, v, std::span<const bool>(dones.get(), d.size()), gamma, lambda, normalize);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    traj[i].ret = ra.returns[i];
    traj[i].advantage = ra.advantages[i];
  }
}

// ---------------------------------------------------------------------------
// Clipped objective

PpoResult ppo_loss(const Policy& policy, const Vec& params, std::span<const Transition> batch, const PpoConfig& cfg) {
  const auto& net = policy.net();
  const auto& shape = net.shape();
  PpoResult res;
  res.grad = Vec::Zero(net.param_count());
  if (batch.empty()) return res;

  const auto b = static_cast<Eigen::Index>(batch.size());
  Mat x(shape.input, b);
  for (Eigen::Index i = 0; i < b; ++i) x.col(i) = batch[static_cast<std::size_t>(i)].state;
  nn::Network::Cache cache;
  const Mat out = net.forward(params, x, &cache);
  const auto log_std = net.log_std(params);
  const int logits = shape.logits_total();
  const int dg = policy.dueling_group();

  Mat dout = Mat::Zero(out.rows(), b);
  Vec dls = Vec::Zero(shape.gaussian);
  const double gauss_entropy = log_std.sum() + shape.gaussian * (0.5 + kHalfLog2Pi);

  std::vector<Eigen::Index> used;
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& tr = batch[static_cast<std::size_t>(i)];
    Vec dlogp = Vec::Zero(out.rows());
    Vec dent = Vec::Zero(out.rows());
    Vec dlogp_ls = Vec::Zero(shape.gaussian);
    double logp = 0.0;
    double entropy = gauss_entropy;
    Eigen::Index off = 0;
    for (std::size_t g = 0; g < shape.categorical.size(); ++g) {
      const int n = shape.categorical[g];
      const Vec p = softmax(out.col(i).segment(off, n));
      const int c = tr.choices[g];
      logp += std::log(p[c]);
      dlogp.segment(off, n) = -p;
      dlogp[off + c] += 1.0;
      const Vec logp_vec = p.array().log();
      const double h = -(p.array() * logp_vec.array()).sum();
      entropy += h;
      dent.segment(off, n) = (-(p.array() * (logp_vec.array() + h))).matrix();
      off += n;
    }
    for (int k = 0; k < shape.gaussian; ++k) {
      const double sd = std::exp(log_std[k]);
      const double z = (tr.u[k] - out(logits + k, i)) / sd;
      logp += -0.5 * z * z - log_std[k] - kHalfLog2Pi;
      dlogp[logits + k] = z / sd;
      dlogp_ls[k] = z * z - 1.0;
    }
    const double ratio = std::exp(logp - tr.old_log_prob);
    if (!std::isfinite(ratio) || !std::isfinite(logp)) {
      ++res.excluded;
      continue;
    }
    used.push_back(i);
    const double a = tr.advantage;
    const double surrogate = clipped_surrogate(ratio, a, cfg.clip_eps);
    const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    // The unclipped branch carries the gradient whenever it is the minimum.
    const double ds_dlogp = ratio * a <= clipped_ratio * a ? ratio * a : 0.0;
    if (std::fabs(ratio - 1.0) > cfg.clip_eps) res.clip_fraction += 1.0;

    double q = out(shape.value_row(), i);
    Vec dq = Vec::Zero(out.rows());
    dq[shape.value_row()] = 1.0;
    if (dg >= 0 && shape.advantage > 0) {
      const auto adv = out.col(i).segment(shape.advantage_row(), shape.advantage);
      const int c = tr.choices[static_cast<std::size_t>(dg)];
      q += adv[c] - adv.mean();
      dq.segment(shape.advantage_row(), shape.advantage).setConstant(-1.0 / shape.advantage);
      dq[shape.advantage_row() + c] += 1.0;
    }
    const double verr = q - tr.ret;

    res.objective += surrogate;
    res.value_loss += verr * verr;
    res.entropy += entropy;
    dout.col(i) = -ds_dlogp * dlogp + 2.0 * cfg.value_coef * verr * dq - cfg.entropy_coef * dent;
    dls += -ds_dlogp * dlogp_ls - cfg.entropy_coef * Vec::Ones(shape.gaussian);
  }
  if (used.empty()) return res;
  const double n = static_cast<double>(used.size());
  res.objective /= n;
  res.value_loss /= n;
  res.entropy /= n;
  res.clip_fraction /= n;
  res.loss = -res.objective + cfg.value_coef * res.value_loss - cfg.entropy_coef * res.entropy;
  dout /= n;
  dls /= n;
  res.grad = net.backward(params, cache, dout, dls);
  return res;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("train.gamma", "must be in (0,1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("train.lambda", "must be in [0,1]");
  if (!(clip_eps > 0.0)) throw ConfigError("train.clip_eps", "must be > 0");
  if (lr < 0.0) throw ConfigError("train.lr", "must be >= 0");
  if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (minibatch < 1) throw ConfigError("train.minibatch", "must be >= 1");
  if (episode_length < 1) throw ConfigError("train.episode_length", "must be >= 1");
  if (episodes < 1) throw ConfigError("train.episodes", "must be >= 1");
  if (episodes_per_update < 1) throw ConfigError("train.episodes_per_update", "must be >= 1");
  if (hidden.empty()) throw ConfigError("train.hidden", "needs at least one layer");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"lambda", c.lambda},
          {"clip_eps", c.clip_eps},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"minibatch", c.minibatch},
          {"episode_length", c.episode_length},
          {"episodes", c.episodes},
          {"episodes_per_update", c.episodes_per_update},
          {"value_coef", c.value_coef},
          {"entropy_coef", c.entropy_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"hidden", c.hidden},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where) {
  TrainConfig c;
  using json_util::get_opt;
  get_opt(j, "gamma", c.gamma, where);
  get_opt(j, "lambda", c.lambda, where);
  get_opt(j, "clip_eps", c.clip_eps, where);
  get_opt(j, "lr", c.lr, where);
  get_opt(j, "epochs", c.epochs, where);
  get_opt(j, "minibatch", c.minibatch, where);
  get_opt(j, "episode_length", c.episode_length, where);
  get_opt(j, "episodes", c.episodes, where);
  get_opt(j, "episodes_per_update", c.episodes_per_update, where);
  get_opt(j, "value_coef", c.value_coef, where);
  get_opt(j, "entropy_coef", c.entropy_coef, where);
  get_opt(j, "max_grad_norm", c.max_grad_norm, where);
  get_opt(j, "hidden", c.hidden, where);
  get_opt(j, "seed", c.seed, where);
  c.validate();
  return c;
}

TrainResult train_scheduler(Env& env, const TrainConfig& config) {
  config.validate();
  nn::NetShape shape;
  shape.input = env.obs_dim();
  shape.hidden = config.hidden;
  shape.categorical = env.categorical();
  shape.gaussian = env.gaussian();
  const int dg = env.dueling_group();
  shape.advantage = dg >= 0 ? shape.categorical.at(static_cast<std::size_t>(dg)) : 0;
  Rng init(derive_seed(config.seed, 1));
  return train_scheduler(env, config, Policy(shape, dg, init));
}

TrainResult train_scheduler(Env& env, const TrainConfig& config, Policy policy) {
  config.validate();
  Rng act_rng(derive_seed(config.seed, 3));
  Rng shuffle_rng(derive_seed(config.seed, 4));
  nn::Adam adam;
  adam.lr = config.lr;
  adam.reset(policy.params().size());
  const PpoConfig ppo{config.clip_eps, config.value_coef, config.entropy_coef};

  TrainResult result;
  std::vector<Transition> buffer;
  double last_loss = 0.0, last_clip = 0.0;

  for (int ep = 0; ep < config.episodes; ++ep) {
    Vec obs = env.reset(derive_seed(config.seed, 2, static_cast<std::uint64_t>(ep)));
    double reward_sum = 0.0;
    int steps = 0;
    for (int t = 0; t < config.episode_length; ++t) {
      const ActionSample a = policy.act(obs, Mode::kSample, act_rng);
      StepResult sr = env.step(a);
      Transition tr;
      tr.state = obs;
      tr.choices = a.choices;
      tr.u = a.u;
      tr.old_log_prob = a.log_prob;
      tr.reward = sr.reward;
      tr.value = a.value;
      tr.done = sr.done || t + 1 == config.episode_length;
      buffer.push_back(std::move(tr));
      reward_sum += sr.reward;
      ++steps;
      obs = std::move(sr.obs);
      if (sr.done) break;
    }

    if ((ep + 1) % config.episodes_per_update == 0 || ep + 1 == config.episodes) {
      compute_returns_and_advantages(buffer, config.gamma, config.lambda, true);
      std::vector<std::size_t> order(buffer.size());
      for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        double loss_sum = 0.0, clip_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.minibatch)) {
          const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.minibatch));
          std::vector<Transition> mb;
          mb.reserve(end - start);
          for (std::size_t i = start; i < end; ++i) mb.push_back(buffer[order[i]]);
          PpoResult r = ppo_loss(policy, policy.params(), mb, ppo);
          result.excluded += r.excluded;
          if (!std::isfinite(r.loss) || !r.grad.allFinite()) {
            std::ostringstream msg;
            msg << "training diverged at episode " << ep << ", epoch " << epoch << ": loss=" << r.loss
                << " objective=" << r.objective << " value_loss=" << r.value_loss
                << " param_norm=" << policy.params().norm();
            throw DivergenceError(msg.str());
          }
          nn::clip_grad_norm(r.grad, config.max_grad_norm);
          adam.step(policy.params(), r.grad);
          loss_sum += r.loss;
          clip_sum += r.clip_fraction;
          ++batches;
        }
        last_loss = loss_sum / batches;
        last_clip = clip_sum / batches;
      }
      if (!policy.params().allFinite()) throw DivergenceError("training diverged: non-finite parameters");
      buffer.clear();
    }
    result.curve.push_back({ep, reward_sum / steps, last_loss, last_clip});
  }
  result.policy = std::move(policy);
  return result;
}

std::string curve_csv(const std::vector<CurveRow>& curve) {
  std::ostringstream out;
  out << "episode,mean_reward,loss,clip_fraction\n";
  for (const auto& r : curve) {
    out << r.episode << ',' << metrics::format_double(r.mean_reward) << ',' << metrics::format_double(r.loss) << ','
        << metrics::format_double(r.clip_fraction) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Bandit

Vec BanditEnv::observation(int context) {
  Vec v = Vec::Zero(2);
  v[context] = 1.0;
  return v;
}

Vec BanditEnv::draw() {
  context_ = static_cast<int>(rng_.below(2));
  return observation(context_);
}

Vec BanditEnv::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  t_ = 0;
  return draw();
}

StepResult BanditEnv::step(const ActionSample& action) {
  StepResult r;
  r.reward = action.choices.at(0) == context_ ? 0.0 : -1.0;
  ++t_;
  r.done = t_ >= length_;
  r.obs = draw();
  return r;
}

double bandit_optimal_rate(const Policy& policy, int trials, std::uint64_t seed) {
  Rng rng(seed);
  int good = 0;
  for (int i = 0; i < trials; ++i) {
    const int c = static_cast<int>(rng.below(2));
    if (policy.act(BanditEnv::observation(c), Mode::kGreedy, rng).choices[0] == c) ++good;
  }
  return static_cast<double>(good) / trials;
}

// ---------------------------------------------------------------------------
// Cluster environment

std::vector<std::pair<int, int>> migration_shortlist(const cluster::SystemState& state, int size) {
  const int n = static_cast<int>(state.node_count);
  std::vector<int> busy(static_cast<std::size_t>(n));
  std::iota(busy.begin(), busy.end(), 0);
  std::stable_sort(busy.begin(), busy.end(), [&](int a, int b) {
    return state.util(static_cast<std::size_t>(a), cluster::kCpu) > state.util(static_cast<std::size_t>(b), cluster::kCpu);
  });
  std::vector<int> idle(busy.rbegin(), busy.rend());
  std::vector<std::pair<int, int>> pairs;
  for (int src : busy) {
    for (int dst : idle) {
      if (static_cast<int>(pairs.size()) >= size) return pairs;
      if (src != dst) pairs.emplace_back(src, dst);
    }
  }
  return pairs;
}

nn::NetShape scheduling_shape(std::size_t k, std::size_t n, const SchedulingEnvConfig& cfg, std::vector<int> hidden) {
  nn::NetShape s;
  s.input = static_cast<int>(encoded_dim(k, n, cfg.encode.mode));
  s.hidden = std::move(hidden);
  s.categorical.assign(k, 3);
  s.categorical.push_back(cfg.shortlist + 1);
  s.gaussian = static_cast<int>(2 * k);
  s.advantage = cfg.shortlist + 1;
  return s;
}

cluster::SchedulingAction decode_action(const ActionSample& sample, const cluster::SystemState& observed,
                                        const cluster::ClusterSim& sim, const SchedulingEnvConfig& cfg) {
  const std::size_t k = sim.topology().service_count();
  const std::size_t n = sim.topology().node_count();
  if (sample.choices.size() != k + 1 || static_cast<std::size_t>(sample.u.size()) != 2 * k) {
    throw std::invalid_argument("decode_action: sample does not match the cluster");
  }
  cluster::SchedulingAction a;
  a.instance_delta.resize(k);
  for (std::size_t s = 0; s < k; ++s) a.instance_delta[s] = sample.choices[s] - 1;
  const int m = sample.choices[k];
  const auto pairs = migration_shortlist(observed, cfg.shortlist);
  if (m < static_cast<int>(pairs.size())) {
    const auto [src, dst] = pairs[static_cast<std::size_t>(m)];
    const auto placement = sim.placement_matrix();
    int pick = -1;
    for (std::size_t s = 0; s < k; ++s) {
      if (placement[s][static_cast<std::size_t>(src)] == 0) continue;
      if (pick < 0 || observed.service_util[s] > observed.service_util[static_cast<std::size_t>(pick)]) pick = static_cast<int>(s);
    }
    if (pick >= 0) {
      a.migration.assign(k, {});
      a.migration[static_cast<std::size_t>(pick)].assign(n, 0);
      a.migration[static_cast<std::size_t>(pick)][static_cast<std::size_t>(dst)] = 1;
    }
  }
  a.priority.resize(k);
  a.quota.resize(k);
  for (std::size_t s = 0; s < k; ++s) {
    a.priority[s] = sigmoid(sample.u[static_cast<Eigen::Index>(s)]);
    a.quota[s] = sigmoid(sample.u[static_cast<Eigen::Index>(k + s)]);
  }
  return a;
}

SchedulingEnv::SchedulingEnv(cluster::Topology topology, workload::WorkloadScenario scenario, SchedulingEnvConfig cfg)
    : topology_(std::move(topology)), scenario_(std::move(scenario)), cfg_(std::move(cfg)) {
  topology_.validate();
  scenario_.validate();
  cfg_.reward.validate();
  if (scenario_.service_count() != topology_.service_count()) {
    throw ConfigError("scenario.service_mix", "service count differs from the topology");
  }
  if (cfg_.decision_interval < 1) throw ConfigError("drl.decision_interval", "must be >= 1");
  if (cfg_.shortlist < 1) throw ConfigError("drl.shortlist", "must be >= 1");
  active_ = scenario_;
}

int SchedulingEnv::obs_dim() const {
  return static_cast<int>(encoded_dim(topology_.service_count(), topology_.node_count(), cfg_.encode.mode));
}

std::vector<int> SchedulingEnv::categorical() const {
  return scheduling_shape(topology_.service_count(), topology_.node_count(), cfg_).categorical;
}

int SchedulingEnv::gaussian() const { return static_cast<int>(2 * topology_.service_count()); }

Vec SchedulingEnv::reset(std::uint64_t seed) {
  active_ = scenario_;
  active_.seed = derive_seed(scenario_.seed, seed);
  sim_ = std::make_unique<cluster::ClusterSim>(topology_);
  rng_ = Rng(derive_seed(seed, 7));
  t_ = 0;
  return encode_state(sim_->observe_state(), cfg_.encode);
}

StepResult SchedulingEnv::step(const ActionSample& sample) {
  if (!sim_) throw std::logic_error("SchedulingEnv::step before reset");
  const cluster::SystemState before = sim_->observe_state();
  const cluster::SchedulingAction action = decode_action(sample, before, *sim_, cfg_);
  cluster::ActionEffect effect;
  for (int i = 0; i < cfg_.decision_interval && t_ < active_.horizon; ++i, ++t_) {
    const auto reqs = workload::generate_tick(active_, t_);
    sim_->step(i == 0 ? action : cluster::SchedulingAction::noop(), reqs, rng_);
    effect += sim_->last_report().effect;
  }
  StepResult r;
  r.reward = cluster::reward(before, sim_->true_state(), effect, cfg_.reward);
  r.done = t_ >= active_.horizon;
  r.obs = encode_state(sim_->observe_state(), cfg_.encode);
  return r;
}

}  // namespace tradesim::drl
