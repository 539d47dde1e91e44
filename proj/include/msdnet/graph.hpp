#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msdnet/config.hpp"
#include "msdnet/ops.hpp"

namespace msdnet {

enum class NodeKind {
  Input,
  SeedConv,         // layer 1: 3x3 conv (strided for s > 1), BN, ReLU
  HTransform,       // same-scale bottleneck: 1x1 conv-BN-ReLU, 3x3 conv-BN-ReLU
  HTildeTransform,  // finer-to-coarser bottleneck with a strided 3x3 conv
  Concat,
  Transition,       // 1x1 conv-BN-ReLU halving the channel count
  ClassifierHead,   // two strided 3x3 conv-BN-ReLU, average pool, linear
};

const char* node_kind_name(NodeKind kind);

// One conv-BN-ReLU unit.
struct ConvStage {
  Tensor weight;  // [Cout, Cin, K, K]
  BatchNormParams bn;
  int stride = 1;
  int padding = 0;
};

struct GraphNode {
  int id = 0;
  NodeKind kind = NodeKind::Input;
  int scale = 1;  // 1 = finest
  int layer = 0;  // 0 for the input node
  std::vector<int> inputs;
  std::vector<ConvStage> stages;

  // Classifier heads only.
  int classifier_index = -1;  // 0-based position among classifiers
  std::size_t pool_h = 0;
  std::size_t pool_w = 0;
  Tensor linear_weight;  // [classes, features]
  Tensor linear_bias;    // [classes]

  // Per-sample spatial size of the first input.
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  // Per-sample output shape; heads report [classes, 1, 1].
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

// Immutable MSDNet topology with its (trainable) parameters. Nodes are stored
// in topological order and node ids equal their position.
class NetworkGraph {
 public:
  const NetworkConfig& config() const { return config_; }
  std::span<const GraphNode> nodes() const { return nodes_; }
  const GraphNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  GraphNode& mutable_node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }

  // Classifier head node ids in layer order.
  const std::vector<int>& classifiers() const { return classifiers_; }
  std::size_t num_classifiers() const { return classifiers_.size(); }
  std::vector<int> classifier_layers() const;

  // Node holding the feature history x_l^s (or the latest output when dense
  // connectivity is off); -1 if scale s is not alive at layer l.
  int state_node(int layer, int scale) const;
  std::size_t state_channels(int layer, int scale) const;

  // Number of scales actually built (1 when multi-scale is ablated).
  int num_scales() const { return num_scales_; }
  // 1-based block index of a layer (always 1 without reduction).
  int block_of_layer(int layer) const;
  int num_blocks() const { return static_cast<int>(block_sizes_.size()); }
  const std::vector<int>& block_sizes() const { return block_sizes_; }

  // True for nodes some classifier depends on.
  bool live(int id) const { return live_.at(static_cast<std::size_t>(id)); }

  // Trainable tensors: conv weights, BN gamma/beta, linear weight/bias.
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  std::vector<BatchNormParams*> batch_norms();
  std::vector<const BatchNormParams*> batch_norms() const;

 private:
  friend NetworkGraph build(const NetworkConfig& config, std::uint64_t init_seed);
  NetworkConfig config_;
  std::vector<GraphNode> nodes_;
  std::vector<int> classifiers_;
  std::vector<std::vector<int>> state_;  // [layer][scale] -> node id
  std::vector<int> block_sizes_;
  std::vector<bool> live_;
  int num_scales_ = 1;
};

// Layer indices (1-based) where classifiers attach.
std::vector<int> classifier_placement(PlacementKind kind, int num_layers, int num_classifiers,
                                      std::span<const int> explicit_layers = {});
std::vector<int> classifier_placement(const NetworkConfig& config);

// Builds the DAG and initialises parameters deterministically from init_seed.
NetworkGraph build(const NetworkConfig& config, std::uint64_t init_seed = 0);

// Conv of one stage; stride-2 3x3 stages use the ceil(H/2) downsampling conv.
Tensor conv2d_stage(const Tensor& x, const ConvStage& stage, Tape* tape = nullptr);

// Applies a node to its input tensors (in node.inputs order). BN uses batch
// statistics (and updates running stats) in Train mode.
Tensor apply_node(GraphNode& node, std::span<const Tensor> inputs, BnMode mode, Tape* tape = nullptr);
// Eval-mode application that leaves the node untouched.
Tensor apply_node(const GraphNode& node, std::span<const Tensor> inputs, Tape* tape = nullptr);

}  // namespace msdnet
