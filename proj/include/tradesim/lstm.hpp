#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tradesim/features.hpp"
#include "tradesim/nn.hpp"
#include "tradesim/rng.hpp"

namespace tradesim::lstm {

using nn::Mat;
using nn::Vec;

struct LstmShape {
  int input = static_cast<int>(workload::kFeatureCount);
  int hidden = 128;
  int layers = 3;
  bool operator==(const LstmShape&) const = default;
};

/// Stacked LSTM plus a scalar linear readout, stored as one flat vector.
/// Per layer: W (4H x (in + H)) with gate rows ordered input, forget, output,
/// candidate, acting on [x; h]; then b (4H). Finally w_out (H) and b_out.
class LstmParams {
 public:
  LstmParams() = default;
  explicit LstmParams(LstmShape shape);

  /// Uniform(+-1/sqrt(fan_in)) weights, zero biases except forget gates at 1.
  static LstmParams init(LstmShape shape, Rng& rng);

  const LstmShape& shape() const { return shape_; }
  int layer_input(int layer) const { return layer == 0 ? shape_.input : shape_.hidden; }

  Eigen::Map<Mat> W(int layer);
  Eigen::Map<const Mat> W(int layer) const;
  Eigen::Map<Vec> b(int layer);
  Eigen::Map<const Vec> b(int layer) const;
  Eigen::Map<const Vec> w_out() const;
  double b_out() const { return flat[out_ + shape_.hidden]; }

  Vec flat;

 private:
  LstmShape shape_;
  std::vector<Eigen::Index> w_, b_;
  Eigen::Index out_ = 0;
};

struct CellState {
  Mat h, c;
  Mat i, f, o, g;  // gate activations (kept for backprop)
  Mat tanh_c;
};

/// One step for a batch (columns). c' = f*c + i*g, h' = o*tanh(c').
CellState cell_forward(const Mat& x, const Mat& h, const Mat& c, const Eigen::Ref<const Mat>& W,
                       const Eigen::Ref<const Vec>& b);

struct Dropout {
  bool enabled = false;
  double rate = 0.3;
  Rng* rng = nullptr;
};

/// Activations of a forward pass, indexed [t][layer].
struct ForwardCache {
  std::vector<std::vector<Mat>> input;  // layer input after dropout
  std::vector<std::vector<Mat>> mask;   // inverted-dropout mask applied to this layer's output (empty if none)
  std::vector<std::vector<CellState>> cell;
  std::vector<std::vector<Mat>> h_prev, c_prev;
};

/// Runs a sequence of T input matrices (input x batch) through the stack; returns
/// one prediction per column. Throws std::invalid_argument on a width mismatch and
/// DivergenceError naming the layer on non-finite activations.
Vec forward(const LstmParams& params, const std::vector<Mat>& sequence, const Dropout& dropout,
            ForwardCache* cache = nullptr);

struct LossGrad {
  double mse = 0.0;
  Vec grad;
};

LossGrad loss_and_gradients(const LstmParams& params, const std::vector<Mat>& sequence, const Vec& targets,
                            const Dropout& dropout);

struct TrainSpec {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double dropout = 0.3;
  int batch = 32;
  int epochs = 20;
  double clip_norm = 5.0;
  LstmShape shape;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const TrainSpec& s);
TrainSpec train_spec_from_json(const nlohmann::json& j, const std::string& where = "predictor");

/// How samples are cut from a history.
struct DatasetSpec {
  int window = 60;    // ticks summarized by each feature vector
  int seq_len = 12;   // feature vectors per sample
  int seq_stride = 5; // ticks between consecutive feature vectors
  int horizon = 60;   // target = mean volume over the next `horizon` ticks
  int sample_stride = 2;
  bool operator==(const DatasetSpec&) const = default;
};

struct Dataset {
  std::vector<Tick> end_ticks;              // history index the sample ends at (exclusive)
  std::vector<std::vector<workload::FeatureVector>> sequences;  // unscaled
  std::vector<double> targets;              // unscaled volume per tick
  std::size_t size() const { return targets.size(); }
};

/// Samples whose feature windows and target horizon fit inside the history.
Dataset make_dataset(const workload::VolumeHistory& history, const DatasetSpec& spec);

/// Splits by time: the first `train_fraction` of samples train, and validation
/// starts once its features no longer overlap the last training target.
std::pair<Dataset, Dataset> split_by_time(const Dataset& d, double train_fraction, const DatasetSpec& spec);

struct Model {
  LstmParams params;
  workload::FeatureScaler scaler;
  double target_offset = 0.0;
  double target_scale = 1.0;
  DatasetSpec data;
  double residual_low = 0.0;   // relative residual quantiles on validation
  double residual_high = 0.0;
  double band_level = 0.9;
};

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainOutput {
  Model model;
  std::vector<EpochRow> curve;
  int best_epoch = -1;
};

/// Minibatch training on scaled data with the best-validation parameters retained.
/// Throws DivergenceError on non-finite losses.
TrainOutput train(const Dataset& train_set, const Dataset& val_set, const DatasetSpec& data, const TrainSpec& spec);

std::string curve_csv(const std::vector<EpochRow>& curve);

/// Batch inference in volume units.
std::vector<double> predict(const Model& model, const Dataset& d);

struct Forecast {
  double predicted = 0.0;  // mean volume per tick over the horizon
  bool burst_flag = false;
  double low = 0.0;
  double high = 0.0;
  double baseline = 0.0;
};

/// Forecast from the end of `history`; throws WarmupError when it is too short.
Forecast predict_and_warn(const workload::VolumeHistory& history, const Model& model, double burst_threshold);
/// Same at history index `end` (exclusive).
Forecast predict_and_warn_at(const workload::VolumeHistory& history, std::size_t end, const Model& model,
                             double burst_threshold);

struct Accuracy {
  double fraction = 0.0;
  int excluded = 0;  // non-positive actuals
};

/// Fraction of points with |pred - actual| / actual <= tolerance.
Accuracy accuracy(std::span<const double> predictions, std::span<const double> actuals, double tolerance = 0.10);

nlohmann::json to_json(const Model& m);
Model model_from_json(const nlohmann::json& j);
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

/// Dataset CSV: tick,volume,price,orders,cancels,burst_flag,max_util.
std::string history_csv(const workload::VolumeHistory& h);
workload::VolumeHistory parse_history_csv(const std::string& text, const workload::Clock& clock, double tick_length);

}  // namespace tradesim::lstm
