#include "msdnet/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"
#include "msdnet/errors.hpp"

namespace msdnet {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::span<double>> state_views(NetworkGraph& graph) {
  std::vector<std::span<double>> views;
  for (auto& p : graph.parameters()) views.push_back(p.data());
  for (auto* bn : graph.batch_norms()) {
    views.emplace_back(bn->running_mean);
    views.emplace_back(bn->running_var);
  }
  return views;
}

}  // namespace

void save_checkpoint(const NetworkGraph& graph, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write checkpoint " + path);
  // Tensors are shared handles, so the views alias the graph's storage.
  auto views = state_views(const_cast<NetworkGraph&>(graph));
  os.write("MSDNCKPT", 8);
  binio::write_u32(os, kCheckpointVersion);
  binio::write_u64(os, config_hash(graph.config()));
  binio::write_u64(os, views.size());
  for (const auto& v : views) {
    binio::write_u64(os, v.size());
    for (double x : v) binio::write_f64(os, x);
  }
  if (!os) throw InputError("failed writing checkpoint " + path);
}

void load_checkpoint(NetworkGraph& graph, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint " + path);
  binio::expect_magic(is, "MSDNCKPT", path);
  const auto version = binio::read_u32(is);
  if (version != kCheckpointVersion) {
    throw InputError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto stored = binio::read_u64(is);
  const auto expected = config_hash(graph.config());
  if (stored != expected) {
    throw InputError(path + ": checkpoint config hash " + hash_hex(stored) + " does not match config hash " +
                     hash_hex(expected));
  }
  auto views = state_views(graph);
  if (binio::read_u64(is) != views.size()) throw InputError(path + ": tensor count mismatch");
  for (auto& v : views) {
    if (binio::read_u64(is) != v.size()) throw InputError(path + ": tensor size mismatch");
    for (double& x : v) x = binio::read_f64(is);
  }
}

}  // namespace msdnet
