#include "tradesim/nn.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tradesim::nn {

void Adam::reset(Eigen::Index n) {
  m = Vec::Zero(n);
  v = Vec::Zero(n);
  t = 0;
}

void Adam::step(Vec& params, const Vec& grad) {
  if (m.size() != params.size()) reset(params.size());
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

double clip_grad_norm(Vec& grad, double max_norm) {
  const double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

int NetShape::logits_total() const { return std::accumulate(categorical.begin(), categorical.end(), 0); }

nlohmann::json to_json(const NetShape& s) {
  return {{"input", s.input}, {"hidden", s.hidden}, {"categorical", s.categorical},
          {"gaussian", s.gaussian}, {"advantage", s.advantage}};
}

NetShape shape_from_json(const nlohmann::json& j) {
  NetShape s;
  s.input = j.at("input").get<int>();
  s.hidden = j.at("hidden").get<std::vector<int>>();
  s.categorical = j.at("categorical").get<std::vector<int>>();
  s.gaussian = j.at("gaussian").get<int>();
  s.advantage = j.at("advantage").get<int>();
  return s;
}

Network::Network(NetShape shape) : shape_(std::move(shape)) {
  if (shape_.input <= 0) throw std::invalid_argument("Network: input width must be > 0");
  int in = shape_.input;
  Eigen::Index off = 0;
  auto add = [&](int rows, int cols) {
    Layer l;
    l.rows = rows;
    l.cols = cols;
    l.w = off;
    off += static_cast<Eigen::Index>(rows) * cols;
    l.b = off;
    off += rows;
    layers_.push_back(l);
  };
  for (int h : shape_.hidden) {
    if (h <= 0) throw std::invalid_argument("Network: hidden widths must be > 0");
    add(h, in);
    in = h;
  }
  add(shape_.output(), in);
  log_std_ = off;
  count_ = off + shape_.gaussian;
}

Vec Network::init(Rng& rng, double head_scale, double log_std) const {
  Vec p = Vec::Zero(count_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.cols));
    const double scale = i + 1 == layers_.size() ? head_scale : 1.0;
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(l.rows) * l.cols; ++k) {
      p[l.w + k] = scale * rng.uniform(-bound, bound);
    }
  }
  p.segment(log_std_, shape_.gaussian).setConstant(log_std);
  return p;
}

Eigen::Map<const Vec> Network::log_std(const Vec& params) const {
  return Eigen::Map<const Vec>(params.data() + log_std_, shape_.gaussian);
}

Mat Network::forward(const Vec& params, const Mat& x, Cache* cache) const {
  if (x.rows() != shape_.input) throw std::invalid_argument("Network::forward: input width mismatch");
  if (params.size() != count_) throw std::invalid_argument("Network::forward: parameter count mismatch");
  Mat a = x;
  if (cache != nullptr) {
    cache->acts.clear();
    cache->acts.push_back(a);
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    Eigen::Map<const Mat> w(params.data() + l.w, l.rows, l.cols);
    Eigen::Map<const Vec> b(params.data() + l.b, l.rows);
    Mat z = w * a;
    z.colwise() += b;
    if (i + 1 < layers_.size()) {
      a = z.array().tanh().matrix();
      if (cache != nullptr) cache->acts.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  if (cache != nullptr) cache->out = a;
  return a;
}

Vec Network::backward(const Vec& params, const Cache& cache, const Mat& dout, const Vec& dlog_std) const {
  Vec g = Vec::Zero(count_);
  Mat delta = dout;
  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    const auto& l = layers_[ii];
    const Mat& in = cache.acts[ii];
    Eigen::Map<Mat> gw(g.data() + l.w, l.rows, l.cols);
    gw.noalias() = delta * in.transpose();
    g.segment(l.b, l.rows) = delta.rowwise().sum();
    if (ii == 0) break;
    Eigen::Map<const Mat> w(params.data() + l.w, l.rows, l.cols);
    Mat back = w.transpose() * delta;
    // d tanh = 1 - a^2 on the activation that fed this layer.
    delta = back.array() * (1.0 - in.array().square());
  }
  if (shape_.gaussian > 0) g.segment(log_std_, shape_.gaussian) += dlog_std;
  return g;
}

}  // namespace tradesim::nn
