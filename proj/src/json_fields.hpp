#pragma once

#include <json.hpp>
#include <set>
#include <string>

#include "msdnet/errors.hpp"

namespace msdnet::jsonf {

[[noreturn]] inline void field_error(const std::string& field, const std::string& what) {
  throw ConfigError("config field '" + field + "': " + what);
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) field_error(where.empty() ? key : where + "." + key, "unknown key");
  }
}

template <typename T>
inline T get_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) field_error(path, "missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    field_error(path, std::string("wrong type (") + e.what() + ")");
  }
}

template <typename T>
inline T get_optional(const nlohmann::json& j, const std::string& key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  return get_field<T>(j, key, path);
}

}  // namespace msdnet::jsonf
