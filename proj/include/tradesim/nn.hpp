#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "tradesim/rng.hpp"

namespace tradesim::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Bias-corrected adaptive-moment optimizer over a flat parameter vector.
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vec m;
  Vec v;
  std::int64_t t = 0;

  void reset(Eigen::Index n);
  /// One update; `grad` is d loss / d params.
  void step(Vec& params, const Vec& grad);
};

/// Scales `grad` in place so that its L2 norm is at most `max_norm`. Returns the original norm.
double clip_grad_norm(Vec& grad, double max_norm);

/// Shape of an actor-critic network: a tanh MLP trunk feeding one linear
/// output layer whose rows are, in order, the categorical logits of every
/// group, the Gaussian means, the state value V, and the advantage stream A.
/// Gaussian log standard deviations are free parameters (state-independent).
struct NetShape {
  int input = 0;
  std::vector<int> hidden{64, 64};
  std::vector<int> categorical;  // sizes of each categorical group
  int gaussian = 0;
  int advantage = 0;  // 0 disables the dueling stream

  int logits_total() const;
  int output() const { return logits_total() + gaussian + 1 + advantage; }
  int value_row() const { return logits_total() + gaussian; }
  int advantage_row() const { return value_row() + 1; }
  bool operator==(const NetShape&) const = default;
};

nlohmann::json to_json(const NetShape& s);
NetShape shape_from_json(const nlohmann::json& j);

/// Parameter layout over a flat vector: per trunk layer W (out x in, column-major) then b;
/// head W then b; then log_std.
class Network {
 public:
  Network() = default;
  explicit Network(NetShape shape);

  const NetShape& shape() const { return shape_; }
  Eigen::Index param_count() const { return count_; }

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases; head weights scaled by `head_scale`.
  Vec init(Rng& rng, double head_scale = 0.01, double log_std = -0.5) const;

  struct Cache {
    std::vector<Mat> acts;  // acts[0] = input, acts[l+1] = tanh output of trunk layer l
    Mat out;                // head output, output() x batch
  };

  /// Forward pass over columns of `x`.
  Mat forward(const Vec& params, const Mat& x, Cache* cache = nullptr) const;

  /// Backpropagates d loss / d out (output() x batch). `dlog_std` is added to the log_std gradient.
  Vec backward(const Vec& params, const Cache& cache, const Mat& dout, const Vec& dlog_std) const;

  Eigen::Map<const Vec> log_std(const Vec& params) const;

 private:
  struct Layer {
    Eigen::Index w = 0, b = 0;
    int rows = 0, cols = 0;
  };
  NetShape shape_;
  std::vector<Layer> layers_;  // trunk layers then the head
  Eigen::Index log_std_ = 0;
  Eigen::Index count_ = 0;
};

}  // namespace tradesim::nn
