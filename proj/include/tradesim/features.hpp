#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tradesim/workload.hpp"

namespace tradesim::workload {

inline constexpr std::size_t kFeatureCount = 18;

/// Fixed predictor input layout.
///   0-7   volume statistics: mean, std, min, max, last, slope, lag-1, lag-5
///   8-13  time: sin/cos time-of-day, weekday flag, day index / 6,
///         minutes since open, minutes to close (both signed)
///   14-17 market: price volatility, order/cancel ratio, burst-flag count,
///         busiest-service utilization
enum Feature : std::size_t {
  kVolMean = 0, kVolStd, kVolMin, kVolMax, kVolLast, kVolSlope, kVolLag1, kVolLag5,
  kTodSin, kTodCos, kWeekday, kDayIndex, kMinutesSinceOpen, kMinutesToClose,
  kPriceVolatility, kOrderCancelRatio, kBurstCount, kBusiestUtil,
};

using FeatureVector = std::array<double, kFeatureCount>;

const std::array<const char*, kFeatureCount>& feature_names();

/// Per-tick series the features are computed from. Auxiliary series may be
/// empty, in which case the corresponding feature is 0.
struct VolumeHistory {
  std::vector<double> volume;
  std::vector<double> price;
  std::vector<double> orders;
  std::vector<double> cancels;
  std::vector<double> burst_flag;
  std::vector<double> max_util;
  Clock clock;
  double tick_length = 1.0;
  Tick start_tick = 0;

  std::size_t size() const { return volume.size(); }
  void append(double vol, double px, double ord, double cxl, double burst, double util);
};

/// Affine normalization (x - offset) / scale stored with the model.
struct FeatureScaler {
  FeatureVector offset{};
  FeatureVector scale = [] {
    FeatureVector s;
    s.fill(1.0);
    return s;
  }();

  FeatureVector apply(const FeatureVector& x) const;
  /// Mean/std fit; constant features get scale 1.
  static FeatureScaler fit(std::span<const FeatureVector> samples);
  bool operator==(const FeatureScaler&) const = default;
};

nlohmann::json to_json(const FeatureScaler& s);
FeatureScaler scaler_from_json(const nlohmann::json& j);

/// Features over history ticks [end - window, end). Throws WarmupError when
/// end < window. `end` defaults to the full history.
FeatureVector extract_features(const VolumeHistory& history, std::size_t window,
                               const FeatureScaler& scaler = {});
FeatureVector extract_features_at(const VolumeHistory& history, std::size_t end, std::size_t window,
                                  const FeatureScaler& scaler = {});

/// Least-squares slope of `values` against their index.
double ls_slope(std::span<const double> values);

/// Auxiliary market series for a scenario: a seeded log-price walk whose
/// volatility follows the offered rate, order/cancel splits of the volume,
/// and the burst indicator. Ticks must be recorded in order.
class MarketTape {
 public:
  MarketTape(const WorkloadScenario& scenario, Tick begin);
  /// Appends tick `t` with the given request volume to `history`.
  void record(VolumeHistory& history, Tick t, double volume);

 private:
  const WorkloadScenario* scenario_;
  Rng market_;
  double log_price_;
};

/// Builds a market history by generating the scenario's request stream:
/// per-tick counts, a seeded log-price walk whose volatility follows the
/// offered rate, order/cancel splits, and the burst indicator.
VolumeHistory simulate_history(const WorkloadScenario& scenario, Tick begin, Tick end);

}  // namespace tradesim::workload
