#pragma once

#include <json.hpp>
#include <string>

#include "msdnet/config.hpp"

namespace msdnet {

// Config files are JSON objects carrying "version": 1. Unknown keys are rejected.
inline constexpr int kConfigVersion = 1;

nlohmann::json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

// Accepts a bare network object or an experiment file with a "network" section.
NetworkConfig load_network_config(const std::string& path);
// ConfigError unless j["version"] == kConfigVersion.
void check_config_version(const nlohmann::json& j, const std::string& path);

// FNV-1a 64 over arbitrary bytes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace msdnet
