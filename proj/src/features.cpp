#include "tradesim/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tradesim::workload {

const std::array<const char*, kFeatureCount>& feature_names() {
  static const std::array<const char*, kFeatureCount> names = {
      "vol_mean", "vol_std", "vol_min", "vol_max", "vol_last", "vol_slope", "vol_lag1", "vol_lag5",
      "tod_sin", "tod_cos", "weekday", "day_index", "minutes_since_open", "minutes_to_close",
      "price_volatility", "order_cancel_ratio", "burst_count", "busiest_util"};
  return names;
}

void VolumeHistory::append(double vol, double px, double ord, double cxl, double burst, double util) {
  volume.push_back(vol);
  price.push_back(px);
  orders.push_back(ord);
  cancels.push_back(cxl);
  burst_flag.push_back(burst);
  max_util.push_back(util);
}

FeatureVector FeatureScaler::apply(const FeatureVector& x) const {
  FeatureVector y;
  for (std::size_t i = 0; i < kFeatureCount; ++i) y[i] = (x[i] - offset[i]) / scale[i];
  return y;
}

FeatureScaler FeatureScaler::fit(std::span<const FeatureVector> samples) {
  FeatureScaler s;
  if (samples.empty()) return s;
  const double n = static_cast<double>(samples.size());
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    double mean = 0.0;
    for (const auto& x : samples) mean += x[f];
    mean /= n;
    double var = 0.0;
    for (const auto& x : samples) var += (x[f] - mean) * (x[f] - mean);
    const double sd = std::sqrt(var / n);
    s.offset[f] = mean;
    s.scale[f] = sd > 1e-8 ? sd : 1.0;
  }
  return s;
}

nlohmann::json to_json(const FeatureScaler& s) { return {{"offset", s.offset}, {"scale", s.scale}}; }

FeatureScaler scaler_from_json(const nlohmann::json& j) {
  FeatureScaler s;
  s.offset = j.at("offset").get<FeatureVector>();
  s.scale = j.at("scale").get<FeatureVector>();
  return s;
}

double ls_slope(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double xm = (static_cast<double>(n) - 1.0) / 2.0;
  double ym = 0.0;
  for (double v : values) ym += v;
  ym /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    sxy += dx * (values[i] - ym);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

FeatureVector extract_features(const VolumeHistory& history, std::size_t window, const FeatureScaler& scaler) {
  return extract_features_at(history, history.size(), window, scaler);
}

FeatureVector extract_features_at(const VolumeHistory& h, std::size_t end, std::size_t window,
                                  const FeatureScaler& scaler) {
  if (window == 0) throw std::invalid_argument("extract_features: window must be >= 1");
  if (end > h.size()) throw std::invalid_argument("extract_features: end beyond history");
  if (end < window) {
    throw WarmupError("extract_features: need " + std::to_string(window) + " ticks of history, have " +
                      std::to_string(end));
  }
  FeatureVector x{};
  const std::size_t begin = end - window;
  std::span<const double> vol(h.volume.data() + begin, window);

  double sum = 0.0, lo = vol[0], hi = vol[0];
  for (double v : vol) {
    sum += v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double mean = sum / static_cast<double>(window);
  double var = 0.0;
  for (double v : vol) var += (v - mean) * (v - mean);
  x[kVolMean] = mean;
  x[kVolStd] = std::sqrt(var / static_cast<double>(window));
  x[kVolMin] = lo;
  x[kVolMax] = hi;
  x[kVolLast] = vol.back();
  x[kVolSlope] = ls_slope(vol);
  x[kVolLag1] = h.volume[end >= 2 ? end - 2 : 0];
  x[kVolLag5] = h.volume[end >= 6 ? end - 6 : 0];

  // Time of the last tick in the window.
  const double t_s = h.clock.start_s + static_cast<double>(h.start_tick + static_cast<Tick>(end) - 1) * h.tick_length;
  const double day_len = h.clock.day_length_s;
  const double day_count = std::floor(t_s / day_len);
  const double tod = t_s - day_count * day_len;
  const double phase = 2.0 * std::numbers::pi * tod / day_len;
  x[kTodSin] = std::sin(phase);
  x[kTodCos] = std::cos(phase);
  const int dow = static_cast<int>(std::fmod(h.clock.start_day + day_count, 7.0));
  x[kWeekday] = dow < 5 ? 1.0 : 0.0;
  x[kDayIndex] = dow / 6.0;
  x[kMinutesSinceOpen] = (tod - h.clock.open_s) / 60.0;
  x[kMinutesToClose] = (h.clock.close_s - tod) / 60.0;

  if (h.price.size() >= end && window >= 2) {
    double rsum = 0.0, rsq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = begin + 1; i < end; ++i) {
      if (h.price[i] > 0.0 && h.price[i - 1] > 0.0) {
        const double r = std::log(h.price[i] / h.price[i - 1]);
        rsum += r;
        rsq += r * r;
        ++n;
      }
    }
    if (n > 0) {
      const double m = rsum / static_cast<double>(n);
      x[kPriceVolatility] = std::sqrt(std::max(0.0, rsq / static_cast<double>(n) - m * m));
    }
  }
  if (h.orders.size() >= end && h.cancels.size() >= end) {
    double o = 0.0, c = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      o += h.orders[i];
      c += h.cancels[i];
    }
    x[kOrderCancelRatio] = o / std::max(1.0, c);
  }
  if (h.burst_flag.size() >= end) {
    double c = 0.0;
    for (std::size_t i = begin; i < end; ++i) c += h.burst_flag[i] > 0.5 ? 1.0 : 0.0;
    x[kBurstCount] = c;
  }
  if (h.max_util.size() >= end) x[kBusiestUtil] = h.max_util[end - 1];

  return scaler.apply(x);
}

MarketTape::MarketTape(const WorkloadScenario& scenario, Tick begin)
    : scenario_(&scenario), market_(derive_seed(scenario.seed, 0x6d61726b6574ULL)), log_price_(std::log(100.0)) {
  // Skip the price walk forward so that histories starting later stay on the same path.
  for (Tick t = 0; t < begin; ++t) market_.normal();
}

void MarketTape::record(VolumeHistory& h, Tick t, double vol) {
  const double intensity = rate_profile(*scenario_, t) / scenario_->base_rate;
  log_price_ += 0.0005 * std::sqrt(intensity) * market_.normal();
  const bool burst = burst_active(*scenario_, t);
  const double cancel_frac = burst ? 0.3 : 0.15;
  const double cancels = std::floor(vol * cancel_frac);
  // busiest-service utilization is not simulated in market histories
  h.append(vol, std::exp(log_price_), vol - cancels, cancels, burst ? 1.0 : 0.0, 0.0);
}

VolumeHistory simulate_history(const WorkloadScenario& scenario, Tick begin, Tick end) {
  VolumeHistory h;
  h.clock = scenario.clock;
  h.tick_length = scenario.tick_length;
  h.start_tick = begin;
  MarketTape tape(scenario, begin);
  for (Tick t = begin; t < end; ++t) {
    Rng rng = tick_rng(scenario, t);
    tape.record(h, t, static_cast<double>(generate_tick(scenario, t, rng).size()));
  }
  return h;
}

}  // namespace tradesim::workload
