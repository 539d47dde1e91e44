#include "msdnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "msdnet/errors.hpp"

namespace msdnet {

const char* node_kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::Input: return "input";
    case NodeKind::SeedConv: return "seed-conv";
    case NodeKind::HTransform: return "h-transform";
    case NodeKind::HTildeTransform: return "h~-transform";
    case NodeKind::Concat: return "concat";
    case NodeKind::Transition: return "transition";
    case NodeKind::ClassifierHead: return "classifier-head";
  }
  return "?";
}

std::vector<int> classifier_placement(PlacementKind kind, int num_layers, int num_classifiers,
                                      std::span<const int> explicit_layers) {
  if (num_layers < 1) throw ConfigError("classifier placement needs at least one layer");
  std::vector<int> layers;
  switch (kind) {
    case PlacementKind::Anytime:
      if (num_layers < 4) throw ConfigError("anytime placement needs L >= 4, got " + std::to_string(num_layers));
      for (int i = 1; 2 * (i + 1) <= num_layers; ++i) layers.push_back(2 * (i + 1));
      break;
    case PlacementKind::Budgeted:
      // A count of 0 places a classifier at every triangular number <= L.
      if (num_classifiers < 0) throw ConfigError("budgeted placement needs a non-negative classifier count");
      for (int k = 1, t = 1; (num_classifiers == 0 || k <= num_classifiers) && t <= num_layers; ++k, t += k) {
        layers.push_back(t);
      }
      break;
    case PlacementKind::Explicit:
      layers.assign(explicit_layers.begin(), explicit_layers.end());
      if (layers.empty()) throw ConfigError("explicit placement is empty");
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i] < 1 || layers[i] > num_layers || (i && layers[i] <= layers[i - 1])) {
          throw ConfigError("explicit placement must be strictly increasing within [1, L]");
        }
      }
      break;
  }
  // Every network exposes a full-depth prediction.
  if (layers.back() != num_layers) layers.push_back(num_layers);
  return layers;
}

std::vector<int> classifier_placement(const NetworkConfig& config) {
  if (!config.intermediate_classifiers) return {config.num_layers};
  return classifier_placement(config.placement.kind, config.num_layers, config.placement.count,
                              config.placement.layers);
}

std::vector<int> NetworkGraph::classifier_layers() const {
  std::vector<int> out;
  for (int id : classifiers_) out.push_back(nodes_[static_cast<std::size_t>(id)].layer);
  return out;
}

int NetworkGraph::state_node(int layer, int scale) const {
  if (layer < 1 || layer >= static_cast<int>(state_.size()) || scale < 1 || scale > num_scales_) return -1;
  return state_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(scale)];
}

std::size_t NetworkGraph::state_channels(int layer, int scale) const {
  const int id = state_node(layer, scale);
  return id < 0 ? 0 : nodes_[static_cast<std::size_t>(id)].channels;
}

int NetworkGraph::block_of_layer(int layer) const {
  int end = 0;
  for (std::size_t b = 0; b < block_sizes_.size(); ++b) {
    end += block_sizes_[b];
    if (layer <= end) return static_cast<int>(b) + 1;
  }
  throw ConfigError("layer " + std::to_string(layer) + " beyond network depth");
}

std::vector<Tensor> NetworkGraph::parameters() const {
  std::vector<Tensor> params;
  for (const auto& n : nodes_) {
    for (const auto& st : n.stages) {
      params.push_back(st.weight);
      params.push_back(st.bn.gamma);
      params.push_back(st.bn.beta);
    }
    if (n.linear_weight.defined()) {
      params.push_back(n.linear_weight);
      params.push_back(n.linear_bias);
    }
  }
  return params;
}

std::size_t NetworkGraph::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.numel();
  return total;
}

std::vector<BatchNormParams*> NetworkGraph::batch_norms() {
  std::vector<BatchNormParams*> out;
  for (auto& n : nodes_) {
    for (auto& st : n.stages) out.push_back(&st.bn);
  }
  return out;
}

std::vector<const BatchNormParams*> NetworkGraph::batch_norms() const {
  std::vector<const BatchNormParams*> out;
  for (const auto& n : nodes_) {
    for (const auto& st : n.stages) out.push_back(&st.bn);
  }
  return out;
}

namespace {

std::size_t halve_ceil(std::size_t v) { return (v + 1) / 2; }

class GraphAssembler {
 public:
  GraphAssembler(const NetworkConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {}

  std::vector<GraphNode> nodes;

  int add_input() {
    GraphNode n;
    n.kind = NodeKind::Input;
    n.layer = 0;
    n.scale = 1;
    n.channels = static_cast<std::size_t>(config_.input_channels);
    n.height = static_cast<std::size_t>(config_.input_height);
    n.width = static_cast<std::size_t>(config_.input_width);
    return push(std::move(n));
  }

  int add_seed(int layer, int scale, int input, std::size_t out_channels, bool strided) {
    GraphNode n = make(NodeKind::SeedConv, layer, scale, {input});
    const auto& in = nodes[static_cast<std::size_t>(input)];
    n.stages.push_back(stage(in.channels, out_channels, 3, strided ? 2 : 1, 1));
    n.channels = out_channels;
    n.height = strided ? halve_ceil(in.height) : in.height;
    n.width = strided ? halve_ceil(in.width) : in.width;
    return push(std::move(n));
  }

  int add_bottleneck(NodeKind kind, int layer, int scale, int input, std::size_t out_channels) {
    GraphNode n = make(kind, layer, scale, {input});
    const auto& in = nodes[static_cast<std::size_t>(input)];
    const std::size_t inner =
        std::min(in.channels, static_cast<std::size_t>(config_.bottleneck_factor) * out_channels);
    const bool strided = kind == NodeKind::HTildeTransform;
    n.stages.push_back(stage(in.channels, inner, 1, 1, 0));
    n.stages.push_back(stage(inner, out_channels, 3, strided ? 2 : 1, 1));
    n.channels = out_channels;
    n.height = strided ? halve_ceil(in.height) : in.height;
    n.width = strided ? halve_ceil(in.width) : in.width;
    return push(std::move(n));
  }

  int add_concat(int layer, int scale, std::vector<int> inputs) {
    GraphNode n = make(NodeKind::Concat, layer, scale, std::move(inputs));
    const auto& first = nodes[static_cast<std::size_t>(n.inputs.front())];
    n.height = first.height;
    n.width = first.width;
    for (int id : n.inputs) n.channels += nodes[static_cast<std::size_t>(id)].channels;
    return push(std::move(n));
  }

  int add_transition(int layer, int scale, int input) {
    GraphNode n = make(NodeKind::Transition, layer, scale, {input});
    const auto& in = nodes[static_cast<std::size_t>(input)];
    const std::size_t out_channels = in.channels / 2;
    if (out_channels == 0) throw ConfigError("transition would leave zero channels");
    n.stages.push_back(stage(in.channels, out_channels, 1, 1, 0));
    n.channels = out_channels;
    n.height = in.height;
    n.width = in.width;
    return push(std::move(n));
  }

  int add_classifier(int layer, int scale, int input, int index) {
    const auto& in = nodes[static_cast<std::size_t>(input)];
    if (in.channels == 0) {
      throw ConfigError("classifier at layer " + std::to_string(layer) + " sees zero channels at the coarsest scale");
    }
    if (in.height < 2 || in.width < 2) {
      throw ConfigError("coarsest feature map " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                        " is smaller than the classifier pooling window");
    }
    GraphNode n = make(NodeKind::ClassifierHead, layer, scale, {input});
    const auto width = static_cast<std::size_t>(config_.classifier_channels);
    n.stages.push_back(stage(in.channels, width, 3, 2, 1));
    n.stages.push_back(stage(width, width, 3, 2, 1));
    const std::size_t h = halve_ceil(halve_ceil(in.height));
    const std::size_t w = halve_ceil(halve_ceil(in.width));
    // 2x2 pooling where the map allows it, global average otherwise.
    if (h >= 2 && w >= 2) {
      n.pool_h = 2;
      n.pool_w = 2;
    } else {
      n.pool_h = h;
      n.pool_w = w;
    }
    const std::size_t features = width * (h / n.pool_h) * (w / n.pool_w);
    const auto classes = static_cast<std::size_t>(config_.num_classes);
    n.linear_weight = kaiming({classes, features}, features);
    n.linear_bias = Tensor::zeros({classes});
    n.classifier_index = index;
    n.channels = classes;
    n.height = 1;
    n.width = 1;
    return push(std::move(n));
  }

 private:
  GraphNode make(NodeKind kind, int layer, int scale, std::vector<int> inputs) {
    GraphNode n;
    n.kind = kind;
    n.layer = layer;
    n.scale = scale;
    n.inputs = std::move(inputs);
    const auto& first = nodes[static_cast<std::size_t>(n.inputs.front())];
    n.in_height = first.height;
    n.in_width = first.width;
    return n;
  }

  int push(GraphNode n) {
    n.id = static_cast<int>(nodes.size());
    nodes.push_back(std::move(n));
    return nodes.back().id;
  }

  Tensor kaiming(Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : t.data()) v = dist(rng_);
    return t;
  }

  ConvStage stage(std::size_t cin, std::size_t cout, std::size_t k, int stride, int padding) {
    ConvStage st;
    st.weight = kaiming({cout, cin, k, k}, cin * k * k);
    st.bn = BatchNormParams::identity(cout);
    st.stride = stride;
    st.padding = padding;
    return st;
  }

  const NetworkConfig& config_;
  std::mt19937_64 rng_;
};

}  // namespace

NetworkGraph build(const NetworkConfig& config, std::uint64_t init_seed) {
  config.validate();
  NetworkGraph g;
  g.config_ = config;
  const int S = config.multi_scale ? config.num_scales : 1;
  const int L = config.num_layers;
  g.num_scales_ = S;

  // Equal blocks, remainder spread over the later blocks.
  const int blocks = config.reduction ? S : 1;
  g.block_sizes_.assign(static_cast<std::size_t>(blocks), L / blocks);
  for (int r = 0; r < L % blocks; ++r) g.block_sizes_[static_cast<std::size_t>(blocks - 1 - r)] += 1;

  // Spatial sizes per scale come out of the strided convs; verify the coarsest
  // scale still exists before allocating anything.
  {
    std::size_t h = static_cast<std::size_t>(config.input_height), w = static_cast<std::size_t>(config.input_width);
    for (int s = 2; s <= S; ++s) {
      h = halve_ceil(h);
      w = halve_ceil(w);
    }
    if (h < 2 || w < 2) {
      throw ConfigError("input " + std::to_string(config.input_height) + "x" + std::to_string(config.input_width) +
                        " is too small for " + std::to_string(S) + " scales and a 2x2 classifier pool");
    }
  }

  auto growth = [&](int scale, int block) {
    const int base = config.growth_rates[static_cast<std::size_t>(scale - 1)];
    return static_cast<std::size_t>(config.densenet_star ? base << (block - 1) : base);
  };

  GraphAssembler a(config, init_seed);
  g.state_.assign(static_cast<std::size_t>(L + 1), std::vector<int>(static_cast<std::size_t>(S + 1), -1));
  const std::vector<int> placement = classifier_placement(config);

  const int input = a.add_input();
  // Layer 1 seeds every scale.
  for (int s = 1; s <= S; ++s) {
    const int src = s == 1 ? input : g.state_[1][static_cast<std::size_t>(s - 1)];
    const std::size_t channels = static_cast<std::size_t>(config.seed_multiplier) * growth(s, 1);
    g.state_[1][static_cast<std::size_t>(s)] = a.add_seed(1, s, src, channels, s > 1);
  }

  std::size_t next_classifier = 0;
  auto attach_classifier = [&](int layer) {
    if (next_classifier < placement.size() && placement[next_classifier] == layer) {
      const int id = a.add_classifier(layer, S, g.state_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(S)],
                                      static_cast<int>(next_classifier));
      g.classifiers_.push_back(id);
      ++next_classifier;
    }
  };
  attach_classifier(1);

  // prev[s]: the node a layer's same-scale transform reads (state or transition).
  std::vector<int> prev(static_cast<std::size_t>(S + 1), -1);
  for (int s = 1; s <= S; ++s) prev[static_cast<std::size_t>(s)] = g.state_[1][static_cast<std::size_t>(s)];
  int dropped_state = -1;  // history of the scale removed at the last transition

  int block_last = 0;
  for (int b = 1; b <= blocks; ++b) {
    const int finest = config.reduction ? b : 1;
    const int first = b == 1 ? 2 : block_last + 1;
    block_last += g.block_sizes_[static_cast<std::size_t>(b - 1)];
    for (int layer = first; layer <= block_last; ++layer) {
      const auto l = static_cast<std::size_t>(layer);
      for (int s = finest; s <= S; ++s) {
        const std::size_t k = growth(s, b);
        int diag_src = -1;
        if (s > finest) {
          diag_src = g.state_[l - 1][static_cast<std::size_t>(s - 1)];
        } else if (dropped_state >= 0) {
          diag_src = dropped_state;
        }
        const int same_src = prev[static_cast<std::size_t>(s)];
        std::vector<int> fresh;
        if (diag_src >= 0) {
          fresh.push_back(a.add_bottleneck(NodeKind::HTransform, layer, s, same_src, k / 2));
          fresh.push_back(a.add_bottleneck(NodeKind::HTildeTransform, layer, s, diag_src, k / 2));
        } else {
          fresh.push_back(a.add_bottleneck(NodeKind::HTransform, layer, s, same_src, k));
        }
        int state;
        if (config.dense_connectivity) {
          std::vector<int> parts{same_src};
          parts.insert(parts.end(), fresh.begin(), fresh.end());
          state = a.add_concat(layer, s, std::move(parts));
        } else if (fresh.size() == 1) {
          state = fresh.front();
        } else {
          state = a.add_concat(layer, s, fresh);
        }
        g.state_[l][static_cast<std::size_t>(s)] = state;
      }
      for (int s = finest; s <= S; ++s) prev[static_cast<std::size_t>(s)] = g.state_[l][static_cast<std::size_t>(s)];
      dropped_state = -1;
      attach_classifier(layer);
    }
    if (b < blocks) {
      // Drop the finest scale; halve the surviving histories, which restart dense growth.
      dropped_state = prev[static_cast<std::size_t>(finest)];
      for (int s = finest + 1; s <= S; ++s) {
        prev[static_cast<std::size_t>(s)] = a.add_transition(block_last, s, prev[static_cast<std::size_t>(s)]);
      }
      prev[static_cast<std::size_t>(finest)] = -1;
    }
  }

  g.nodes_ = std::move(a.nodes);

  // Liveness: everything some classifier head transitively reads.
  g.live_.assign(g.nodes_.size(), false);
  for (int c : g.classifiers_) g.live_[static_cast<std::size_t>(c)] = true;
  for (std::size_t i = g.nodes_.size(); i-- > 0;) {
    if (!g.live_[i]) continue;
    for (int in : g.nodes_[i].inputs) g.live_[static_cast<std::size_t>(in)] = true;
  }
  return g;
}

namespace {

template <typename Node, typename Normalize>
Tensor apply_node_impl(Node& node, std::span<const Tensor> inputs, Tape* tape, Normalize&& normalize) {
  if (inputs.size() != node.inputs.size()) {
    throw UsageError("node " + std::to_string(node.id) + " expects " + std::to_string(node.inputs.size()) +
                     " inputs");
  }
  switch (node.kind) {
    case NodeKind::Input:
      return inputs.empty() ? Tensor{} : inputs.front();
    case NodeKind::Concat:
      return concat_channels(inputs, tape);
    default:
      break;
  }
  Tensor x = inputs.front();
  for (auto& st : node.stages) {
    x = conv2d_stage(x, st, tape);
    x = normalize(x, st.bn);
    x = relu(x, tape);
  }
  if (node.kind == NodeKind::ClassifierHead) {
    x = avg_pool(x, node.pool_h, node.pool_w, tape);
    x = flatten(x, tape);
    x = linear(x, node.linear_weight, node.linear_bias, tape);
  }
  return x;
}

}  // namespace

Tensor conv2d_stage(const Tensor& x, const ConvStage& st, Tape* tape) {
  if (st.stride == 2 && st.weight.dim(2) == 3) return strided_downsample_conv(x, st.weight, tape);
  return conv2d(x, st.weight, st.stride, st.padding, tape);
}

Tensor apply_node(GraphNode& node, std::span<const Tensor> inputs, BnMode mode, Tape* tape) {
  return apply_node_impl(node, inputs, tape,
                         [&](const Tensor& x, BatchNormParams& bn) { return batch_norm(x, bn, mode, tape); });
}

Tensor apply_node(const GraphNode& node, std::span<const Tensor> inputs, Tape* tape) {
  return apply_node_impl(node, inputs, tape,
                         [&](const Tensor& x, const BatchNormParams& bn) { return batch_norm(x, bn, tape); });
}

}  // namespace msdnet
