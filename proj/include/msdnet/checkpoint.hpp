#pragma once

#include <string>

#include "msdnet/graph.hpp"

namespace msdnet {

// Flat little-endian layout:
//   "MSDNCKPT"  u32 version (1)  u64 config hash  u64 tensor count
//   per tensor: u64 element count, then that many float64
// Tensors are the graph's parameters() in order, followed by running mean and
// running variance of every batch norm in batch_norms() order.
void save_checkpoint(const NetworkGraph& graph, const std::string& path);

// Loads into a graph built from the same config. A config-hash or size mismatch
// throws InputError.
void load_checkpoint(NetworkGraph& graph, const std::string& path);

}  // namespace msdnet
