#include "msdnet/cost_model.hpp"

#include <ostream>

namespace msdnet {

std::uint64_t conv_flops(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, std::size_t ho,
                         std::size_t wo) {
  return 2ULL * kh * kw * cin * cout * ho * wo;
}

std::uint64_t linear_flops(std::size_t in, std::size_t out) { return 2ULL * in * out; }

std::uint64_t node_flops(const GraphNode& node) {
  std::uint64_t total = 0;
  std::size_t h = node.in_height, w = node.in_width;
  for (const auto& st : node.stages) {
    const std::size_t cout = st.weight.dim(0), cin = st.weight.dim(1);
    const std::size_t kh = st.weight.dim(2), kw = st.weight.dim(3);
    const std::size_t ho = (h + 2 * static_cast<std::size_t>(st.padding) - kh) / static_cast<std::size_t>(st.stride) + 1;
    const std::size_t wo = (w + 2 * static_cast<std::size_t>(st.padding) - kw) / static_cast<std::size_t>(st.stride) + 1;
    const std::uint64_t elems = static_cast<std::uint64_t>(cout) * ho * wo;
    total += conv_flops(kh, kw, cin, cout, ho, wo) + 4 * elems + elems;
    h = ho;
    w = wo;
  }
  if (node.kind == NodeKind::ClassifierHead) {
    const std::size_t channels = node.stages.back().weight.dim(0);
    const std::size_t ph = h / node.pool_h, pw = w / node.pool_w;
    total += static_cast<std::uint64_t>(channels) * ph * pw * node.pool_h * node.pool_w;
    total += linear_flops(node.linear_weight.dim(1), node.linear_weight.dim(0));
  }
  return total;
}

std::vector<bool> dependency_closure(const NetworkGraph& graph, std::size_t k) {
  std::vector<bool> in(graph.size(), false);
  for (std::size_t j = 0; j < k && j < graph.num_classifiers(); ++j) {
    in[static_cast<std::size_t>(graph.classifiers()[j])] = true;
  }
  // Nodes are topologically ordered, so one reverse sweep closes over ancestors.
  for (std::size_t i = graph.size(); i-- > 0;) {
    if (!in[i]) continue;
    for (int p : graph.node(static_cast<int>(i)).inputs) in[static_cast<std::size_t>(p)] = true;
  }
  return in;
}

CostTable classifier_costs(const NetworkGraph& graph) {
  CostTable table;
  table.node_flops.reserve(graph.size());
  for (const auto& n : graph.nodes()) table.node_flops.push_back(node_flops(n));
  for (std::size_t k = 1; k <= graph.num_classifiers(); ++k) {
    const auto closure = dependency_closure(graph, k);
    std::uint64_t c = 0;
    for (std::size_t i = 0; i < closure.size(); ++i) {
      if (closure[i]) c += table.node_flops[i];
    }
    table.classifier_costs.push_back(c);
  }
  return table;
}

void write_cost_csv(std::ostream& os, const NetworkGraph& graph, const CostTable& costs) {
  os << "node_id,kind,layer,scale,flops\n";
  for (const auto& n : graph.nodes()) {
    os << n.id << ',' << node_kind_name(n.kind) << ',' << n.layer << ',' << n.scale << ','
       << costs.node_flops[static_cast<std::size_t>(n.id)] << '\n';
  }
  os << "\nclassifier,layer,cost\n";
  const auto layers = graph.classifier_layers();
  for (std::size_t k = 0; k < costs.classifier_costs.size(); ++k) {
    os << k + 1 << ',' << layers[k] << ',' << costs.classifier_costs[k] << '\n';
  }
}

}  // namespace msdnet
