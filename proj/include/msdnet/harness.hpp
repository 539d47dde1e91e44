#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "msdnet/cost_model.hpp"
#include "msdnet/dataset.hpp"
#include "msdnet/exit_policy.hpp"
#include "msdnet/graph.hpp"
#include "msdnet/trainer.hpp"

namespace msdnet {

// n log-spaced per-sample budgets over [lo, hi] (both ends included).
std::vector<double> log_budget_grid(double lo, double hi, std::size_t n);
// 20 points over [C_1, 1.2 C_K].
std::vector<double> default_budget_grid(const NetworkGraph& graph);

// Max-softmax confidence and correctness of every classifier on every sample.
ConfidenceProfile confidence_profile(const NetworkGraph& graph, const Dataset& data, std::size_t chunk = 256);

// Solves for q at total budget B over batch_size samples, then calibrates
// thresholds on the profile.
ExitPlan make_exit_plan(const NetworkGraph& graph, const ConfidenceProfile& profile, std::size_t batch_size,
                        double budget);

struct AnytimeRow {
  double budget = 0.0;  // per-sample FLOPs
  bool has_prediction = false;
  double accuracy = 0.0;
  std::size_t classifier = 0;  // 0 with no prediction
};

std::vector<AnytimeRow> run_anytime_curve(const NetworkGraph& graph, const Dataset& test,
                                          std::span<const double> budgets);
// budget,accuracy,classifier; rows below C_1 read "no-prediction".
void write_anytime_csv(std::ostream& os, std::span<const AnytimeRow> rows);

struct BudgetRow {
  double budget = 0.0;      // B for the whole test batch
  double avg_budget = 0.0;  // B / M
  double q = 1.0;
  std::string clamp = "none";
  double realized_avg_flops = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> exit_counts;
};

// avg_budgets are per-sample; B = |test| * avg_budget. Thresholds are
// calibrated on val and applied to test.
std::vector<BudgetRow> run_budgeted_curve(const NetworkGraph& graph, const Dataset& val, const Dataset& test,
                                          std::span<const double> avg_budgets);
// budget,avg_budget,q,clamp,realized_avg_flops,accuracy,exits_1..exits_K
void write_budget_csv(std::ostream& os, std::span<const BudgetRow> rows);

struct AblationVariant {
  std::string name;  // full, no-dense, no-multiscale, no-intermediate
  NetworkConfig config;
  std::uint64_t final_cost = 0;  // C_K
  bool matched = false;          // C_K within 10% of the full model
};

// Variants of base with growth rates rescaled so C_K tracks the full model.
std::vector<AblationVariant> ablation_variants(const NetworkConfig& base);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t classifier = 0;
  int layer = 0;
  std::uint64_t cost = 0;
  double accuracy = 0.0;
};

// Trains every variant for every seed (init and shuffle seeded alike) and
// reports per-classifier test accuracy.
std::vector<AblationRow> run_ablation_suite(const NetworkConfig& base, const TrainConfig& train_cfg,
                                            const Dataset& data, std::span<const std::uint64_t> seeds);
// variant,seed,classifier,layer,cost,accuracy
void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows);

// Human-readable summary: node table, channels of x_l^s per (layer, scale),
// classifier placement and C_k.
void write_graph_summary(std::ostream& os, const NetworkGraph& graph, const CostTable& costs);
nlohmann::json graph_summary_json(const NetworkGraph& graph, const CostTable& costs);

// <out_dir>/<config hash>, created on demand.
std::filesystem::path results_dir(const std::filesystem::path& out_dir, const NetworkConfig& config);

}  // namespace msdnet
