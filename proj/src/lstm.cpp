#include "tradesim/lstm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tradesim/json_util.hpp"
#include "tradesim/metrics.hpp"

namespace tradesim::lstm {

namespace {

Mat sigmoid(const Mat& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

LstmParams::LstmParams(LstmShape shape) : shape_(shape) {
  if (shape.input <= 0 || shape.hidden <= 0 || shape.layers <= 0) throw std::invalid_argument("LstmShape: sizes must be > 0");
  Eigen::Index off = 0;
  const Eigen::Index h = shape.hidden;
  for (int l = 0; l < shape.layers; ++l) {
    w_.push_back(off);
    off += 4 * h * (layer_input(l) + h);
    b_.push_back(off);
    off += 4 * h;
  }
  out_ = off;
  off += h + 1;
  flat = Vec::Zero(off);
}

LstmParams LstmParams::init(LstmShape shape, Rng& rng) {
  LstmParams p(shape);
  const int h = shape.hidden;
  for (int l = 0; l < shape.layers; ++l) {
    auto w = p.W(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
    }
    p.b(l).segment(h, h).setOnes();  // forget gate
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (int i = 0; i < h; ++i) p.flat[p.out_ + i] = rng.uniform(-bound, bound);
  return p;
}

Eigen::Map<Mat> LstmParams::W(int l) {
  return {flat.data() + w_[static_cast<std::size_t>(l)], 4 * shape_.hidden, layer_input(l) + shape_.hidden};
}
Eigen::Map<const Mat> LstmParams::W(int l) const {
  return {flat.data() + w_[static_cast<std::size_t>(l)], 4 * shape_.hidden, layer_input(l) + shape_.hidden};
}
Eigen::Map<Vec> LstmParams::b(int l) { return {flat.data() + b_[static_cast<std::size_t>(l)], 4 * shape_.hidden}; }
Eigen::Map<const Vec> LstmParams::b(int l) const {
  return {flat.data() + b_[static_cast<std::size_t>(l)], 4 * shape_.hidden};
}
Eigen::Map<const Vec> LstmParams::w_out() const { return {flat.data() + out_, shape_.hidden}; }

// ---------------------------------------------------------------------------
// Forward / backward

CellState cell_forward(const Mat& x, const Mat& h, const Mat& c, const Eigen::Ref<const Mat>& W,
                       const Eigen::Ref<const Vec>& b) {
  const Eigen::Index H = h.rows();
  if (W.rows() != 4 * H || W.cols() != x.rows() + H || b.size() != 4 * H || c.rows() != H || x.cols() != h.cols()) {
    throw std::invalid_argument("cell_forward: shape mismatch");
  }
  Mat xh(x.rows() + H, x.cols());
  xh.topRows(x.rows()) = x;
  xh.bottomRows(H) = h;
  Mat z = W * xh;
  z.colwise() += b;
  CellState s;
  s.i = sigmoid(z.topRows(H));
  s.f = sigmoid(z.middleRows(H, H));
  s.o = sigmoid(z.middleRows(2 * H, H));
  s.g = z.bottomRows(H).array().tanh().matrix();
  s.c = (s.f.array() * c.array() + s.i.array() * s.g.array()).matrix();
  s.tanh_c = s.c.array().tanh().matrix();
  s.h = (s.o.array() * s.tanh_c.array()).matrix();
  return s;
}

Vec forward(const LstmParams& p, const std::vector<Mat>& seq, const Dropout& dropout, ForwardCache* cache) {
  const auto& shape = p.shape();
  if (seq.empty()) throw std::invalid_argument("lstm forward: empty sequence");
  const Eigen::Index B = seq.front().cols();
  const int L = shape.layers;
  const Eigen::Index H = shape.hidden;
  std::vector<Mat> h(static_cast<std::size_t>(L), Mat::Zero(H, B)), c(h);
  if (cache != nullptr) {
    *cache = ForwardCache{};
    cache->input.resize(seq.size());
    cache->mask.resize(seq.size());
    cache->cell.resize(seq.size());
    cache->h_prev.resize(seq.size());
    cache->c_prev.resize(seq.size());
  }
  const bool drop = dropout.enabled && dropout.rate > 0.0;
  if (drop && dropout.rng == nullptr) throw std::invalid_argument("lstm forward: dropout needs a generator");
  const double keep = 1.0 - dropout.rate;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq[t].rows() != shape.input || seq[t].cols() != B) {
      throw std::invalid_argument("lstm forward: expected " + std::to_string(shape.input) + " features per step");
    }
    Mat in = seq[t];
    for (int l = 0; l < L; ++l) {
      const auto li = static_cast<std::size_t>(l);
      CellState s = cell_forward(in, h[li], c[li], p.W(l), p.b(l));
      if (!s.h.allFinite() || !s.c.allFinite()) {
        throw DivergenceError("lstm forward: non-finite activation in layer " + std::to_string(l));
      }
      Mat out = s.h;
      Mat mask;
      if (drop && l + 1 < L) {
        mask.resize(H, B);
        for (Eigen::Index j = 0; j < B; ++j) {
          for (Eigen::Index r = 0; r < H; ++r) mask(r, j) = dropout.rng->bernoulli(keep) ? 1.0 / keep : 0.0;
        }
        out.array() *= mask.array();
      }
      if (cache != nullptr) {
        cache->input[t].push_back(std::move(in));
        cache->mask[t].push_back(std::move(mask));
        cache->h_prev[t].push_back(h[li]);
        cache->c_prev[t].push_back(c[li]);
      }
      h[li] = s.h;
      c[li] = s.c;
      if (cache != nullptr) cache->cell[t].push_back(std::move(s));
      in = std::move(out);
    }
  }
  Vec pred = (p.w_out().transpose() * h.back()).transpose();
  pred.array() += p.b_out();
  return pred;
}

LossGrad loss_and_gradients(const LstmParams& p, const std::vector<Mat>& seq, const Vec& targets, const Dropout& dropout) {
  ForwardCache cache;
  const Vec pred = forward(p, seq, dropout, &cache);
  if (targets.size() != pred.size()) throw std::invalid_argument("loss_and_gradients: target count mismatch");
  const auto& shape = p.shape();
  const int L = shape.layers;
  const Eigen::Index H = shape.hidden;
  const Eigen::Index B = pred.size();
  const Vec err = pred - targets;

  LossGrad out;
  out.mse = err.squaredNorm() / static_cast<double>(B);
  LstmParams g(shape);
  const Vec dpred = 2.0 * err / static_cast<double>(B);  // d mse / d pred

  const std::size_t T = seq.size();
  const Mat& h_last = cache.cell[T - 1][static_cast<std::size_t>(L - 1)].h;
  g.flat.segment(g.flat.size() - H - 1, H) = h_last * dpred;
  g.flat[g.flat.size() - 1] = dpred.sum();

  std::vector<Mat> dh_next(static_cast<std::size_t>(L), Mat::Zero(H, B)), dc_next(dh_next);
  dh_next.back() = p.w_out() * dpred.transpose();
  for (std::size_t t = T; t-- > 0;) {
    Mat dh_above;  // gradient arriving from the layer above at this step
    for (int l = L; l-- > 0;) {
      const auto li = static_cast<std::size_t>(l);
      const CellState& s = cache.cell[t][li];
      Mat dh = dh_next[li];
      if (l + 1 < L) {
        const Mat& mask = cache.mask[t][li];
        dh += mask.size() > 0 ? Mat(dh_above.array() * mask.array()) : dh_above;
      }
      const Mat dc = dc_next[li] + Mat(dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square()));
      Mat dz(4 * H, B);
      dz.topRows(H) = dc.array() * s.g.array() * s.i.array() * (1.0 - s.i.array());
      dz.middleRows(H, H) = dc.array() * cache.c_prev[t][li].array() * s.f.array() * (1.0 - s.f.array());
      dz.middleRows(2 * H, H) = dh.array() * s.tanh_c.array() * s.o.array() * (1.0 - s.o.array());
      dz.bottomRows(H) = dc.array() * s.i.array() * (1.0 - s.g.array().square());

      const Mat& x = cache.input[t][li];
      Mat xh(x.rows() + H, B);
      xh.topRows(x.rows()) = x;
      xh.bottomRows(H) = cache.h_prev[t][li];
      g.W(l).noalias() += dz * xh.transpose();
      g.b(l) += dz.rowwise().sum();

      const Mat dxh = p.W(l).transpose() * dz;
      dh_above = dxh.topRows(x.rows());
      dh_next[li] = dxh.bottomRows(H);
      dc_next[li] = (dc.array() * s.f.array()).matrix();
    }
  }
  out.grad = std::move(g.flat);
  return out;
}

// ---------------------------------------------------------------------------
// Config

void TrainSpec::validate() const {
  if (lr < 0.0) throw ConfigError("predictor.lr", "must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("predictor", "decay rates must be in (0,1)");
  if (!(eps > 0.0)) throw ConfigError("predictor.eps", "must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("predictor.dropout", "must be in [0,1)");
  if (batch < 1) throw ConfigError("predictor.batch", "must be >= 1");
  if (epochs < 0) throw ConfigError("predictor.epochs", "must be >= 0");
  if (shape.hidden < 1 || shape.layers < 1) throw ConfigError("predictor.shape", "sizes must be >= 1");
  if (shape.input != static_cast<int>(workload::kFeatureCount)) throw ConfigError("predictor.shape.input", "must be 18");
}

nlohmann::json to_json(const TrainSpec& s) {
  return {{"lr", s.lr},           {"beta1", s.beta1},         {"beta2", s.beta2},
          {"eps", s.eps},         {"dropout", s.dropout},     {"batch", s.batch},
          {"epochs", s.epochs},   {"clip_norm", s.clip_norm}, {"hidden", s.shape.hidden},
          {"layers", s.shape.layers}, {"seed", s.seed}};
}

TrainSpec train_spec_from_json(const nlohmann::json& j, const std::string& where) {
  using json_util::get_opt;
  TrainSpec s;
  get_opt(j, "lr", s.lr, where);
  get_opt(j, "beta1", s.beta1, where);
  get_opt(j, "beta2", s.beta2, where);
  get_opt(j, "eps", s.eps, where);
  get_opt(j, "dropout", s.dropout, where);
  get_opt(j, "batch", s.batch, where);
  get_opt(j, "epochs", s.epochs, where);
  get_opt(j, "clip_norm", s.clip_norm, where);
  get_opt(j, "hidden", s.shape.hidden, where);
  get_opt(j, "layers", s.shape.layers, where);
  get_opt(j, "seed", s.seed, where);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Data

Dataset make_dataset(const workload::VolumeHistory& h, const DatasetSpec& spec) {
  if (spec.window < 1 || spec.seq_len < 1 || spec.seq_stride < 1 || spec.horizon < 1 || spec.sample_stride < 1) {
    throw ConfigError("dataset", "window, seq_len, strides and horizon must be >= 1");
  }
  const auto n = static_cast<Tick>(h.size());
  const Tick span = static_cast<Tick>(spec.seq_len - 1) * spec.seq_stride;
  const Tick first = spec.window + span;
  std::vector<workload::FeatureVector> feats(h.size() + 1);
  for (Tick e = spec.window; e <= n; ++e) feats[static_cast<std::size_t>(e)] = workload::extract_features_at(h, static_cast<std::size_t>(e), static_cast<std::size_t>(spec.window));
  Dataset d;
  for (Tick e = first; e + spec.horizon <= n; e += spec.sample_stride) {
    std::vector<workload::FeatureVector> seq;
    for (int j = 0; j < spec.seq_len; ++j) seq.push_back(feats[static_cast<std::size_t>(e - span + j * spec.seq_stride)]);
    double sum = 0.0;
    for (Tick t = e; t < e + spec.horizon; ++t) sum += h.volume[static_cast<std::size_t>(t)];
    d.end_ticks.push_back(e);
    d.sequences.push_back(std::move(seq));
    d.targets.push_back(sum / spec.horizon);
  }
  return d;
}

std::pair<Dataset, Dataset> split_by_time(const Dataset& d, double frac, const DatasetSpec& spec) {
  const auto n_train = static_cast<std::size_t>(std::floor(frac * static_cast<double>(d.size())));
  Dataset tr, va;
  for (std::size_t i = 0; i < n_train; ++i) {
    tr.end_ticks.push_back(d.end_ticks[i]);
    tr.sequences.push_back(d.sequences[i]);
    tr.targets.push_back(d.targets[i]);
  }
  const Tick fence = n_train > 0 ? d.end_ticks[n_train - 1] + spec.horizon : 0;
  const Tick lookback = spec.window + static_cast<Tick>(spec.seq_len - 1) * spec.seq_stride;
  for (std::size_t i = n_train; i < d.size(); ++i) {
    if (d.end_ticks[i] - lookback < fence) continue;
    va.end_ticks.push_back(d.end_ticks[i]);
    va.sequences.push_back(d.sequences[i]);
    va.targets.push_back(d.targets[i]);
  }
  return {std::move(tr), std::move(va)};
}

namespace {

std::vector<Mat> batch_sequence(const Dataset& d, std::span<const std::size_t> idx, const workload::FeatureScaler& scaler) {
  const std::size_t T = d.sequences[idx[0]].size();
  std::vector<Mat> seq(T, Mat(workload::kFeatureCount, static_cast<Eigen::Index>(idx.size())));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto x = scaler.apply(d.sequences[idx[j]][t]);
      for (std::size_t f = 0; f < workload::kFeatureCount; ++f) {
        seq[t](static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j)) = x[f];
      }
    }
  }
  return seq;
}

std::vector<double> predict_scaled(const Model& m, const Dataset& d) {
  std::vector<double> out;
  out.reserve(d.size());
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + kChunk); ++i) idx.push_back(i);
    const Vec p = forward(m.params, batch_sequence(d, idx, m.scaler), Dropout{});
    for (Eigen::Index i = 0; i < p.size(); ++i) out.push_back(p[i]);
  }
  return out;
}

double scaled_mse(const Model& m, const Dataset& d) {
  const auto p = predict_scaled(m, d);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = p[i] - (d.targets[i] - m.target_offset) / m.target_scale;
    s += e * e;
  }
  return s / static_cast<double>(p.size());
}

}  // namespace

std::vector<double> predict(const Model& m, const Dataset& d) {
  auto p = predict_scaled(m, d);
  for (double& x : p) x = x * m.target_scale + m.target_offset;
  return p;
}

TrainOutput train(const Dataset& train_set, const Dataset& val_set, const DatasetSpec& data, const TrainSpec& spec) {
  spec.validate();
  if (train_set.size() == 0) throw ConfigError("predictor", "training set is empty");
  TrainOutput out;
  Model& m = out.model;
  m.data = data;
  Rng init_rng(derive_seed(spec.seed, 1));
  m.params = LstmParams::init(spec.shape, init_rng);

  std::vector<workload::FeatureVector> all;
  for (const auto& s : train_set.sequences) all.insert(all.end(), s.begin(), s.end());
  m.scaler = workload::FeatureScaler::fit(all);
  double mean = std::accumulate(train_set.targets.begin(), train_set.targets.end(), 0.0) / static_cast<double>(train_set.size());
  double var = 0.0;
  for (double y : train_set.targets) var += (y - mean) * (y - mean);
  const double sd = std::sqrt(var / static_cast<double>(train_set.size()));
  m.target_offset = mean;
  m.target_scale = sd > 1e-8 ? sd : 1.0;

  nn::Adam adam;
  adam.lr = spec.lr;
  adam.beta1 = spec.beta1;
  adam.beta2 = spec.beta2;
  adam.eps = spec.eps;
  adam.reset(m.params.flat.size());
  Rng shuffle(derive_seed(spec.seed, 2));
  Rng drop_rng(derive_seed(spec.seed, 3));
  const Dropout dropout{spec.dropout > 0.0, spec.dropout, &drop_rng};
  const Dataset& val = val_set.size() > 0 ? val_set : train_set;

  Vec best = m.params.flat;
  double best_val = scaled_mse(m, val);
  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(spec.batch));
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Vec y(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) {
        y[static_cast<Eigen::Index>(j)] = (train_set.targets[idx[j]] - m.target_offset) / m.target_scale;
      }
      LossGrad lg = loss_and_gradients(m.params, batch_sequence(train_set, idx, m.scaler), y, dropout);
      if (!std::isfinite(lg.mse) || !lg.grad.allFinite()) {
        throw DivergenceError("predictor training diverged at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches) + " (loss " + std::to_string(lg.mse) + ")");
      }
      nn::clip_grad_norm(lg.grad, spec.clip_norm);
      adam.step(m.params.flat, lg.grad);
      loss_sum += lg.mse;
      ++batches;
    }
    const double v = scaled_mse(m, val);
    out.curve.push_back({epoch, loss_sum / batches, v});
    if (v < best_val) {
      best_val = v;
      best = m.params.flat;
      out.best_epoch = epoch;
    }
  }
  m.params.flat = best;

  // Band from relative residuals on validation data.
  const auto pred = predict(m, val);
  std::vector<double> rel;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 0.0) rel.push_back(val.targets[i] / pred[i] - 1.0);
  }
  if (!rel.empty()) {
    const double tail = (1.0 - m.band_level) / 2.0;
    m.residual_low = std::min(0.0, metrics::percentile(rel, std::max(tail, 1e-9)));
    m.residual_high = std::max(0.0, metrics::percentile(rel, 1.0 - tail));
  }
  return out;
}

std::string curve_csv(const std::vector<EpochRow>& curve) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  for (const auto& r : curve) {
    out << r.epoch << ',' << metrics::format_double(r.train_loss) << ',' << metrics::format_double(r.val_loss) << '\n';
  }
  return out.str();
}

Forecast predict_and_warn(const workload::VolumeHistory& history, const Model& model, double threshold) {
  return predict_and_warn_at(history, history.size(), model, threshold);
}

Forecast predict_and_warn_at(const workload::VolumeHistory& h, std::size_t end, const Model& m, double threshold) {
  const auto& ds = m.data;
  const auto lookback = static_cast<std::size_t>(ds.window + (ds.seq_len - 1) * ds.seq_stride);
  if (end < lookback) {
    throw WarmupError("predict_and_warn: need " + std::to_string(lookback) + " ticks of history, have " + std::to_string(end));
  }
  std::vector<Mat> seq;
  for (int j = 0; j < ds.seq_len; ++j) {
    const std::size_t e = end - static_cast<std::size_t>((ds.seq_len - 1 - j) * ds.seq_stride);
    const auto x = m.scaler.apply(workload::extract_features_at(h, e, static_cast<std::size_t>(ds.window)));
    seq.push_back(Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size())));
  }
  Forecast f;
  f.predicted = forward(m.params, seq, Dropout{})[0] * m.target_scale + m.target_offset;
  double sum = 0.0;
  for (std::size_t t = end - static_cast<std::size_t>(ds.window); t < end; ++t) sum += h.volume[t];
  f.baseline = sum / ds.window;
  f.burst_flag = f.predicted > threshold * f.baseline;
  f.low = f.predicted * (1.0 + m.residual_low);
  f.high = f.predicted * (1.0 + m.residual_high);
  if (f.low > f.high) std::swap(f.low, f.high);  // negative predictions flip the band
  return f;
}

Accuracy accuracy(std::span<const double> pred, std::span<const double> actual, double tolerance) {
  if (pred.size() != actual.size()) throw std::invalid_argument("accuracy: length mismatch");
  Accuracy a;
  std::size_t good = 0, counted = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(actual[i] > 0.0)) {
      ++a.excluded;
      continue;
    }
    ++counted;
    if (std::fabs(pred[i] - actual[i]) / actual[i] <= tolerance) ++good;
  }
  a.fraction = counted > 0 ? static_cast<double>(good) / static_cast<double>(counted) : 0.0;
  return a;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json tensor(const std::string& name, std::initializer_list<Eigen::Index> dims, const double* data) {
  Eigen::Index n = 1;
  for (auto d : dims) n *= d;
  return {{"name", name}, {"shape", std::vector<Eigen::Index>(dims)}, {"data", std::vector<double>(data, data + n)}};
}

}  // namespace

nlohmann::json to_json(const Model& m) {
  const auto& s = m.params.shape();
  nlohmann::json tensors = nlohmann::json::array();
  for (int l = 0; l < s.layers; ++l) {
    const auto w = m.params.W(l);
    tensors.push_back(tensor("layer" + std::to_string(l) + ".W", {w.rows(), w.cols()}, w.data()));
    tensors.push_back(tensor("layer" + std::to_string(l) + ".b", {w.rows()}, m.params.b(l).data()));
  }
  tensors.push_back(tensor("readout.w", {s.hidden}, m.params.w_out().data()));
  const double bo = m.params.b_out();
  tensors.push_back(tensor("readout.b", {1}, &bo));
  return {{"format", "tradesim-lstm"},
          {"version", 1},
          {"shape", {{"input", s.input}, {"hidden", s.hidden}, {"layers", s.layers}}},
          {"tensors", tensors},
          {"scaler", workload::to_json(m.scaler)},
          {"target_offset", m.target_offset},
          {"target_scale", m.target_scale},
          {"data",
           {{"window", m.data.window},
            {"seq_len", m.data.seq_len},
            {"seq_stride", m.data.seq_stride},
            {"horizon", m.data.horizon},
            {"sample_stride", m.data.sample_stride}}},
          {"residual_low", m.residual_low},
          {"residual_high", m.residual_high},
          {"band_level", m.band_level}};
}

Model model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "tradesim-lstm") throw ConfigError("model", "not a predictor checkpoint");
  if (j.value("version", 0) != 1) throw ConfigError("model.version", "unsupported checkpoint version");
  Model m;
  LstmShape s;
  s.input = j.at("shape").at("input").get<int>();
  s.hidden = j.at("shape").at("hidden").get<int>();
  s.layers = j.at("shape").at("layers").get<int>();
  m.params = LstmParams(s);
  Eigen::Index off = 0;
  for (const auto& t : j.at("tensors")) {
    const auto data = t.at("data").get<std::vector<double>>();
    if (off + static_cast<Eigen::Index>(data.size()) > m.params.flat.size()) throw ConfigError("model.tensors", "too many values");
    std::copy(data.begin(), data.end(), m.params.flat.data() + off);
    off += static_cast<Eigen::Index>(data.size());
  }
  if (off != m.params.flat.size()) throw ConfigError("model.tensors", "parameter count does not match the shape");
  m.scaler = workload::scaler_from_json(j.at("scaler"));
  m.target_offset = j.at("target_offset").get<double>();
  m.target_scale = j.at("target_scale").get<double>();
  const auto& d = j.at("data");
  m.data.window = d.at("window").get<int>();
  m.data.seq_len = d.at("seq_len").get<int>();
  m.data.seq_stride = d.at("seq_stride").get<int>();
  m.data.horizon = d.at("horizon").get<int>();
  m.data.sample_stride = d.at("sample_stride").get<int>();
  m.residual_low = j.at("residual_low").get<double>();
  m.residual_high = j.at("residual_high").get<double>();
  m.band_level = j.at("band_level").get<double>();
  return m;
}

void save_model(const Model& m, const std::string& path) { json_util::write_file(path, to_json(m)); }

Model load_model(const std::string& path) {
  const auto j = json_util::read_file(path);
  try {
    return model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path, std::string("malformed predictor checkpoint: ") + e.what());
  }
}

std::string history_csv(const workload::VolumeHistory& h) {
  std::ostringstream out;
  out << "tick,volume,price,orders,cancels,burst_flag,max_util\n";
  auto at = [](const std::vector<double>& v, std::size_t i) { return i < v.size() ? v[i] : 0.0; };
  for (std::size_t i = 0; i < h.size(); ++i) {
    out << h.start_tick + static_cast<Tick>(i) << ',' << metrics::format_double(h.volume[i]) << ','
        << metrics::format_double(at(h.price, i)) << ',' << metrics::format_double(at(h.orders, i)) << ','
        << metrics::format_double(at(h.cancels, i)) << ',' << metrics::format_double(at(h.burst_flag, i)) << ','
        << metrics::format_double(at(h.max_util, i)) << '\n';
  }
  return out.str();
}

workload::VolumeHistory parse_history_csv(const std::string& text, const workload::Clock& clock, double tick_length) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("tick,volume", 0) != 0) throw ConfigError("dataset", "expected header tick,volume,...");
  workload::VolumeHistory h;
  h.clock = clock;
  h.tick_length = tick_length;
  std::size_t lineno = 1;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> f;
    std::istringstream ls(line);
    std::string cell;
    try {
      while (std::getline(ls, cell, ',')) f.push_back(metrics::parse_double(cell));
    } catch (const std::exception&) {
      throw ConfigError("dataset:" + std::to_string(lineno), "non-numeric value");
    }
    if (f.size() < 2) throw ConfigError("dataset:" + std::to_string(lineno), "need at least tick and volume");
    f.resize(7, 0.0);
    if (first) {
      h.start_tick = static_cast<Tick>(f[0]);
      first = false;
    }
    h.append(f[1], f[2], f[3], f[4], f[5], f[6]);
  }
  return h;
}

}  // namespace tradesim::lstm
