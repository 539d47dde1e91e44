#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "msdnet/cost_model.hpp"
#include "msdnet/serialization.hpp"

using namespace msdnet;

namespace {

const std::string kData = MSDNET_TEST_DATA_DIR;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  EXPECT_TRUE(in.good()) << path;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(NodeFlops, HandCounts) {
  EXPECT_EQ(conv_flops(3, 3, 2, 4, 8, 8), 9216u);
  EXPECT_EQ(linear_flops(10, 5), 100u);
}

TEST(NodeFlops, ConcatAndInputAreFree) {
  const NetworkGraph g = build(load_network_config(kData + "/golden/micro_flat.json"));
  for (const auto& n : g.nodes()) {
    if (n.kind == NodeKind::Concat || n.kind == NodeKind::Input) EXPECT_EQ(node_flops(n), 0u);
  }
}

TEST(NodeFlops, SeedConvByHand) {
  // 1 -> 4 channels, 3x3, 8x8 output: conv 2*9*1*4*64, BN 4*4*64, ReLU 4*64.
  const NetworkGraph g = build(load_network_config(kData + "/golden/micro_flat.json"));
  const GraphNode& seed = g.node(1);
  ASSERT_EQ(seed.kind, NodeKind::SeedConv);
  EXPECT_EQ(node_flops(seed), 2u * 9 * 1 * 4 * 64 + 4u * 4 * 64 + 4u * 64);
}

class Golden : public ::testing::TestWithParam<std::string> {};

TEST_P(Golden, MatchesNodeByNode) {
  const std::string stem = kData + "/golden/" + GetParam();
  const NetworkGraph g = build(load_network_config(stem + ".json"));
  std::ostringstream ours;
  write_cost_csv(ours, g, classifier_costs(g));
  const std::string expected = read_file(stem + ".costs.csv");
  std::istringstream a(ours.str()), b(expected);
  std::string la, lb;
  int line = 0;
  while (std::getline(b, lb)) {
    ++line;
    ASSERT_TRUE(static_cast<bool>(std::getline(a, la))) << "missing line " << line;
    EXPECT_EQ(la, lb) << "line " << line;
  }
  EXPECT_FALSE(static_cast<bool>(std::getline(a, la))) << "extra line: " << la;
}

INSTANTIATE_TEST_SUITE_P(MicroConfigs, Golden, ::testing::Values("micro_flat", "micro_reduced", "micro_star"));

TEST(ClassifierCosts, MicroFlatValues) {
  const NetworkGraph g = build(load_network_config(kData + "/golden/micro_flat.json"));
  EXPECT_EQ(classifier_costs(g).classifier_costs, (std::vector<std::uint64_t>{12376, 42800}));
}

NetworkConfig random_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> scales(1, 3), extra(0, 4), half_k(1, 3);
  NetworkConfig c;
  c.num_scales = scales(rng);
  c.num_layers = c.num_scales + extra(rng);
  c.growth_rates.clear();
  for (int s = 0; s < c.num_scales; ++s) c.growth_rates.push_back(2 * half_k(rng));
  c.num_classes = 3;
  c.placement = {PlacementKind::Budgeted, 0, {}};
  c.reduction = rng() & 1;
  c.input_channels = 1;
  c.input_height = c.input_width = 12;
  c.classifier_channels = 4;
  return c;
}

TEST(ClassifierCosts, MonotoneAndEqualToClosureSums) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const NetworkGraph g = build(random_config(rng));
    const CostTable t = classifier_costs(g);
    ASSERT_EQ(t.classifier_costs.size(), g.num_classifiers());
    std::vector<bool> prev(g.size(), false);
    for (std::size_t k = 1; k <= g.num_classifiers(); ++k) {
      const auto closure = dependency_closure(g, k);
      std::uint64_t total = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (prev[i]) EXPECT_TRUE(closure[i]);
        if (closure[i]) total += node_flops(g.nodes()[i]);
      }
      EXPECT_EQ(t.classifier_costs[k - 1], total);
      if (k > 1) EXPECT_GE(t.classifier_costs[k - 1], t.classifier_costs[k - 2]);
      prev = closure;
    }
    std::uint64_t live_total = 0;
    for (std::size_t i = 0; i < g.size(); ++i) live_total += g.live(static_cast<int>(i)) ? t.node_flops[i] : 0;
    EXPECT_EQ(t.classifier_costs.back(), live_total);
  }
}

TEST(ClassifierCosts, SingleClassifierChainSumsEverything) {
  NetworkConfig c;
  c.num_scales = 1;
  c.num_layers = 4;
  c.growth_rates = {4};
  c.num_classes = 2;
  c.placement = {PlacementKind::Explicit, 0, {4}};
  c.reduction = false;
  c.dense_connectivity = false;
  c.input_channels = 1;
  c.input_height = c.input_width = 8;
  c.classifier_channels = 4;
  const NetworkGraph g = build(c);
  const CostTable t = classifier_costs(g);
  EXPECT_EQ(t.classifier_costs.front(), std::accumulate(t.node_flops.begin(), t.node_flops.end(), std::uint64_t{0}));
}

TEST(ClassifierCosts, Deterministic) {
  const NetworkConfig c = cifar_anytime_config();
  EXPECT_EQ(classifier_costs(build(c, 1)).classifier_costs, classifier_costs(build(c, 2)).classifier_costs);
}

}  // namespace
