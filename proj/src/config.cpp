#include <fstream>
#include <iomanip>
#include <sstream>

#include "msdnet/config.hpp"
#include "msdnet/errors.hpp"
#include "msdnet/serialization.hpp"
#include "json_fields.hpp"

namespace msdnet {

using nlohmann::json;

namespace {

using jsonf::field_error;
using jsonf::get_field;
using jsonf::get_optional;
using jsonf::reject_unknown;

const char* placement_name(PlacementKind kind) {
  switch (kind) {
    case PlacementKind::Anytime: return "anytime";
    case PlacementKind::Budgeted: return "budgeted";
    case PlacementKind::Explicit: return "explicit";
  }
  return "?";
}

}  // namespace

void NetworkConfig::validate() const {
  if (num_scales < 1) field_error("num_scales", "must be >= 1");
  if (num_layers < 1) field_error("num_layers", "must be >= 1");
  if (static_cast<int>(growth_rates.size()) != num_scales) {
    field_error("growth_rates", "expected " + std::to_string(num_scales) + " entries, got " +
                                    std::to_string(growth_rates.size()));
  }
  for (int k : growth_rates) {
    if (k <= 0 || k % 2 != 0) field_error("growth_rates", "entries must be even positive integers");
  }
  if (seed_multiplier < 1) field_error("seed_multiplier", "must be >= 1");
  if (num_classes < 2) field_error("num_classes", "must be >= 2");
  if (input_channels < 1 || input_height < 1 || input_width < 1) field_error("input_shape", "dims must be positive");
  if (classifier_channels < 1) field_error("classifier_channels", "must be >= 1");
  if (bottleneck_factor < 1) field_error("bottleneck_factor", "must be >= 1");
  switch (placement.kind) {
    case PlacementKind::Anytime:
      if (num_layers < 4) field_error("classifier_placement", "anytime placement needs at least 4 layers");
      break;
    case PlacementKind::Budgeted:
      if (placement.count < 0) field_error("classifier_placement.count", "must be >= 0");
      break;
    case PlacementKind::Explicit: {
      const auto& ls = placement.layers;
      if (ls.empty()) field_error("classifier_placement.layers", "must not be empty");
      for (std::size_t i = 0; i < ls.size(); ++i) {
        if (ls[i] < 1 || ls[i] > num_layers) field_error("classifier_placement.layers", "index outside [1, L]");
        if (i && ls[i] <= ls[i - 1]) field_error("classifier_placement.layers", "must be strictly increasing");
      }
      if (ls.back() != num_layers) field_error("classifier_placement.layers", "must include the last layer L");
      break;
    }
  }
  const int effective_scales = multi_scale ? num_scales : 1;
  if (reduction && num_layers < effective_scales) {
    field_error("num_layers", "network reduction needs at least one layer per scale block");
  }
}

NetworkConfig cifar_anytime_config(int num_classes) {
  NetworkConfig c;
  c.num_scales = 3;
  c.num_layers = 24;
  c.growth_rates = {6, 12, 24};
  c.num_classes = num_classes;
  c.placement.kind = PlacementKind::Anytime;
  c.reduction = true;
  return c;
}

json to_json(const NetworkConfig& c) {
  json placement{{"kind", placement_name(c.placement.kind)}};
  if (c.placement.kind == PlacementKind::Budgeted) placement["count"] = c.placement.count;
  if (c.placement.kind == PlacementKind::Explicit) placement["layers"] = c.placement.layers;
  return json{
      {"num_scales", c.num_scales},
      {"num_layers", c.num_layers},
      {"growth_rates", c.growth_rates},
      {"seed_multiplier", c.seed_multiplier},
      {"num_classes", c.num_classes},
      {"classifier_placement", placement},
      {"reduction", c.reduction},
      {"dense_connectivity", c.dense_connectivity},
      {"multi_scale", c.multi_scale},
      {"intermediate_classifiers", c.intermediate_classifiers},
      {"densenet_star", c.densenet_star},
      {"input_shape", {c.input_channels, c.input_height, c.input_width}},
      {"classifier_channels", c.classifier_channels},
      {"bottleneck_factor", c.bottleneck_factor},
  };
}

NetworkConfig network_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("network config must be a JSON object");
  reject_unknown(j,
                 {"num_scales", "num_layers", "growth_rates", "seed_multiplier", "num_classes",
                  "classifier_placement", "reduction", "dense_connectivity", "multi_scale",
                  "intermediate_classifiers", "densenet_star", "input_shape", "classifier_channels",
                  "bottleneck_factor"},
                 "network");
  NetworkConfig c;
  c.num_scales = get_field<int>(j, "num_scales", "num_scales");
  c.num_layers = get_field<int>(j, "num_layers", "num_layers");
  c.growth_rates = get_field<std::vector<int>>(j, "growth_rates", "growth_rates");
  c.seed_multiplier = get_optional<int>(j, "seed_multiplier", c.seed_multiplier, "seed_multiplier");
  c.num_classes = get_field<int>(j, "num_classes", "num_classes");
  c.reduction = get_optional<bool>(j, "reduction", c.reduction, "reduction");
  c.dense_connectivity = get_optional<bool>(j, "dense_connectivity", true, "dense_connectivity");
  c.multi_scale = get_optional<bool>(j, "multi_scale", true, "multi_scale");
  c.intermediate_classifiers = get_optional<bool>(j, "intermediate_classifiers", true, "intermediate_classifiers");
  c.densenet_star = get_optional<bool>(j, "densenet_star", false, "densenet_star");
  c.classifier_channels = get_optional<int>(j, "classifier_channels", c.classifier_channels, "classifier_channels");
  c.bottleneck_factor = get_optional<int>(j, "bottleneck_factor", c.bottleneck_factor, "bottleneck_factor");

  const auto shape = get_field<std::vector<int>>(j, "input_shape", "input_shape");
  if (shape.size() != 3) field_error("input_shape", "expected [C, H, W]");
  c.input_channels = shape[0];
  c.input_height = shape[1];
  c.input_width = shape[2];

  const json p = get_field<json>(j, "classifier_placement", "classifier_placement");
  if (!p.is_object()) field_error("classifier_placement", "must be an object with a 'kind'");
  reject_unknown(p, {"kind", "count", "layers"}, "classifier_placement");
  const auto kind = get_field<std::string>(p, "kind", "classifier_placement.kind");
  if (kind == "anytime") {
    c.placement.kind = PlacementKind::Anytime;
  } else if (kind == "budgeted") {
    c.placement.kind = PlacementKind::Budgeted;
    c.placement.count = get_optional<int>(p, "count", 0, "classifier_placement.count");
  } else if (kind == "explicit") {
    c.placement.kind = PlacementKind::Explicit;
    c.placement.layers = get_field<std::vector<int>>(p, "layers", "classifier_placement.layers");
  } else {
    field_error("classifier_placement.kind", "expected anytime, budgeted or explicit, got '" + kind + "'");
  }
  c.validate();
  return c;
}

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  check_config_version(j, path);
  if (j.contains("network")) {
    reject_unknown(j, {"version", "network", "training", "data"}, "");
    return network_config_from_json(j.at("network"));
  }
  json body = j;
  body.erase("version");
  return network_config_from_json(body);
}

void check_config_version(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  const int version = get_field<int>(j, "version", "version");
  if (version != kConfigVersion) {
    field_error("version", "unsupported version " + std::to_string(version) + " (expected " +
                               std::to_string(kConfigVersion) + ")");
  }
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const NetworkConfig& config) {
  // nlohmann::json keeps object keys sorted, so dump() is canonical.
  return fnv1a64(to_json(config).dump());
}

std::string hash_hex(std::uint64_t hash) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

}  // namespace msdnet
