#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tradesim {

using Tick = std::int64_t;

inline constexpr int kServiceCount = 8;

/// Bad or inconsistent configuration. `where` names the file/field path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
  ConfigError(const std::string& where, const std::string& msg)
      : std::runtime_error(where + ": " + msg) {}
};

/// Argument outside the operation's domain (out-of-horizon tick, f_max < f_avg, ...).
class RangeError : public std::out_of_range {
 public:
  explicit RangeError(const std::string& msg) : std::out_of_range(msg) {}
};

/// Not enough history yet (predictor and feature extraction).
class WarmupError : public std::runtime_error {
 public:
  explicit WarmupError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Training produced non-finite values.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tradesim
