#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "tradesim/common.hpp"

namespace tradesim::json_util {

inline nlohmann::json read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path, std::string("parse error: ") + e.what());
  }
}

inline void write_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

template <typename T>
void get_req(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(where + "." + key, "missing required field");
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key, std::string("wrong type: ") + e.what());
  }
}

template <typename T>
void get_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key, std::string("wrong type: ") + e.what());
  }
}

}  // namespace tradesim::json_util
