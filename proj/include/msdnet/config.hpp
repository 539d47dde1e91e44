#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msdnet {

enum class PlacementKind { Anytime, Budgeted, Explicit };

struct ClassifierPlacement {
  PlacementKind kind = PlacementKind::Anytime;
  // Budgeted: number of classifiers before truncation at L; 0 means one at
  // every triangular layer index.
  int count = 0;
  // Explicit: strictly increasing 1-based layer indices ending at L.
  std::vector<int> layers;
};

// Full MSDNet architecture recipe.
struct NetworkConfig {
  int num_scales = 3;
  int num_layers = 24;
  std::vector<int> growth_rates{6, 12, 24};
  int seed_multiplier = 2;
  int num_classes = 10;
  ClassifierPlacement placement;
  bool reduction = true;

  // Ablation switches; all on for the full model.
  bool dense_connectivity = true;
  bool multi_scale = true;
  bool intermediate_classifiers = true;

  bool densenet_star = false;

  // Per-sample input shape C, H, W.
  int input_channels = 3;
  int input_height = 32;
  int input_width = 32;

  // Width of the two down-sampling convs in each classifier head.
  int classifier_channels = 128;
  // Bottleneck (1x1) width = min(input channels, factor * output channels).
  int bottleneck_factor = 4;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// The CIFAR configuration used for the anytime setting: 3 scales, growth 6/12/24,
// 24 layers with network reduction and classifiers every second layer from 4.
NetworkConfig cifar_anytime_config(int num_classes = 10);

// Stable 64-bit FNV-1a over the canonical serialized form.
std::uint64_t config_hash(const NetworkConfig& config);
std::string hash_hex(std::uint64_t hash);

}  // namespace msdnet
