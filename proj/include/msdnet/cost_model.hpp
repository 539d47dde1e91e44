#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "msdnet/graph.hpp"

namespace msdnet {

// FLOPs per sample. A multiply-accumulate counts as 2; BN as 4 per element;
// ReLU as 1; average pooling as window size per output; concat is free.
std::uint64_t conv_flops(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, std::size_t ho,
                         std::size_t wo);
std::uint64_t linear_flops(std::size_t in, std::size_t out);
std::uint64_t node_flops(const GraphNode& node);

struct CostTable {
  std::vector<std::uint64_t> node_flops;        // indexed by node id
  std::vector<std::uint64_t> classifier_costs;  // C_1..C_K, index k-1
};

// Node set needed to evaluate classifiers 1..k (ancestors plus the heads
// themselves), as a membership mask over node ids. k is 1-based.
std::vector<bool> dependency_closure(const NetworkGraph& graph, std::size_t k);

// C_k = FLOPs of dependency_closure(k).
CostTable classifier_costs(const NetworkGraph& graph);

// CSV: node table (id,kind,layer,scale,flops) then classifier table (k,layer,cost).
void write_cost_csv(std::ostream& os, const NetworkGraph& graph, const CostTable& costs);

}  // namespace msdnet
