#include "msdnet/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include "msdnet/cost_model.hpp"
#include "msdnet/errors.hpp"
#include "msdnet/runtime.hpp"

namespace msdnet {

std::vector<double> log_budget_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0) || !(hi >= lo)) throw ConfigError("budget grid needs 0 < lo <= hi");
  if (n == 0) return {};
  if (n == 1) return {lo};
  std::vector<double> grid(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) {
    grid[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

std::vector<double> default_budget_grid(const NetworkGraph& graph) {
  const auto costs = classifier_costs(graph).classifier_costs;
  return log_budget_grid(static_cast<double>(costs.front()), 1.2 * static_cast<double>(costs.back()), 20);
}

ConfidenceProfile confidence_profile(const NetworkGraph& graph, const Dataset& data, std::size_t chunk) {
  const std::size_t K = graph.num_classifiers();
  ConfidenceProfile profile(K);
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = forward_full(graph, select_rows(data.images, idx));
    std::vector<std::vector<RowDecision>> d;
    for (const auto& l : logits) d.push_back(decide(l));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::vector<double> conf(K);
      std::vector<bool> correct(K);
      for (std::size_t k = 0; k < K; ++k) {
        conf[k] = d[k][r].confidence;
        correct[k] = d[k][r].prediction == data.labels[start + r];
      }
      profile.add_sample(std::move(conf), std::move(correct));
    }
  }
  return profile;
}

ExitPlan make_exit_plan(const NetworkGraph& graph, const ConfidenceProfile& profile, std::size_t batch_size,
                        double budget) {
  const auto table = classifier_costs(graph);
  std::vector<double> costs(table.classifier_costs.begin(), table.classifier_costs.end());
  const auto sol = solve_budget(costs, batch_size, budget);
  ExitPlan plan;
  plan.q = sol.q;
  plan.exit_probs = exit_distribution(sol.q, costs.size());
  plan.thresholds = calibrate_thresholds(profile, plan.exit_probs).thresholds;
  plan.costs = costs;
  plan.budget = budget;
  plan.batch_size = batch_size;
  plan.clamp = clamp_name(sol.clamp);
  plan.config_hash = hash_hex(config_hash(graph.config()));
  return plan;
}

std::vector<AnytimeRow> run_anytime_curve(const NetworkGraph& graph, const Dataset& test,
                                          std::span<const double> budgets) {
  const LazySchedule schedule = make_schedule(graph);
  const auto& costs = schedule.costs.classifier_costs;
  // The classifier reached depends only on the budget, so each distinct depth
  // is evaluated over the test set once.
  std::map<std::size_t, std::pair<double, std::size_t>> by_depth;
  std::vector<AnytimeRow> rows;
  for (double b : budgets) {
    AnytimeRow row;
    row.budget = b;
    if (b < static_cast<double>(costs.front())) {
      rows.push_back(row);
      continue;
    }
    const auto budget_flops = static_cast<std::uint64_t>(std::floor(b));
    std::size_t depth = 0;
    while (depth < costs.size() && costs[depth] <= budget_flops) ++depth;
    auto it = by_depth.find(depth);
    if (it == by_depth.end()) {
      std::size_t correct = 0, exit = 0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const std::size_t one[] = {i};
        const auto r = evaluate_anytime(graph, schedule, select_rows(test.images, one), budget_flops);
        if (r.prediction == test.labels[i]) ++correct;
        exit = r.trace.exit;
      }
      const double acc = test.size() ? static_cast<double>(correct) / static_cast<double>(test.size()) : 0.0;
      it = by_depth.emplace(depth, std::make_pair(acc, exit)).first;
    }
    row.has_prediction = true;
    row.accuracy = it->second.first;
    row.classifier = it->second.second;
    rows.push_back(row);
  }
  return rows;
}

void write_anytime_csv(std::ostream& os, std::span<const AnytimeRow> rows) {
  os << "budget,accuracy,classifier\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows) {
    os << r.budget << ',';
    if (r.has_prediction) {
      os << r.accuracy << ',' << r.classifier << '\n';
    } else {
      os << "no-prediction,no-prediction\n";
    }
  }
  os.precision(old);
}

std::vector<BudgetRow> run_budgeted_curve(const NetworkGraph& graph, const Dataset& val, const Dataset& test,
                                          std::span<const double> avg_budgets) {
  if (val.size() == 0 || test.size() == 0) throw InputError("budgeted curve needs non-empty val and test sets");
  const LazySchedule schedule = make_schedule(graph);
  const ConfidenceProfile profile = confidence_profile(graph, val);
  const std::size_t M = test.size();
  std::vector<BudgetRow> rows;
  for (double b : avg_budgets) {
    BudgetRow row;
    row.avg_budget = b;
    row.budget = b * static_cast<double>(M);
    const ExitPlan plan = make_exit_plan(graph, profile, M, row.budget);
    row.q = plan.q;
    row.clamp = plan.clamp;
    const auto traces = evaluate_budgeted(graph, schedule, test.images, plan, test.labels);
    row.exit_counts.assign(graph.num_classifiers(), 0);
    double flops = 0.0;
    std::size_t correct = 0;
    for (const auto& t : traces) {
      flops += static_cast<double>(t.flops);
      if (t.prediction == t.label) ++correct;
      ++row.exit_counts[t.exit - 1];
    }
    row.realized_avg_flops = flops / static_cast<double>(M);
    row.accuracy = static_cast<double>(correct) / static_cast<double>(M);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_budget_csv(std::ostream& os, std::span<const BudgetRow> rows) {
  const std::size_t K = rows.empty() ? 0 : rows.front().exit_counts.size();
  os << "budget,avg_budget,q,clamp,realized_avg_flops,accuracy";
  for (std::size_t k = 1; k <= K; ++k) os << ",exits_" << k;
  os << '\n';
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows) {
    os << r.budget << ',' << r.avg_budget << ',' << r.q << ',' << r.clamp << ',' << r.realized_avg_flops << ','
       << r.accuracy;
    for (auto c : r.exit_counts) os << ',' << c;
    os << '\n';
  }
  os.precision(old);
}

namespace {

std::uint64_t final_cost(const NetworkConfig& config) {
  return classifier_costs(build(config)).classifier_costs.back();
}

NetworkConfig rescaled(const NetworkConfig& config, double factor, bool heads) {
  NetworkConfig c = config;
  for (auto& g : c.growth_rates) {
    g = std::max(2, 2 * static_cast<int>(std::lround(factor * g / 2.0)));
  }
  if (heads) c.classifier_channels = std::max(1, static_cast<int>(std::lround(factor * c.classifier_channels)));
  return c;
}

// C_K grows with width, so each sweep walks a geometric grid of factors upward
// and stops once the cost is clearly past the target.
AblationVariant matched_variant(const std::string& name, const NetworkConfig& config, std::uint64_t target) {
  AblationVariant best{name, config, final_cost(config), false};
  auto gap = [&](std::uint64_t c) {
    return std::abs(static_cast<double>(c) - static_cast<double>(target)) / static_cast<double>(target);
  };
  std::map<std::pair<std::vector<int>, int>, std::uint64_t> seen;
  auto consider = [&](const NetworkConfig& c) {
    const auto key = std::make_pair(c.growth_rates, c.classifier_channels);
    auto it = seen.find(key);
    if (it == seen.end()) it = seen.emplace(key, final_cost(c)).first;
    if (gap(it->second) < gap(best.final_cost)) best = {name, c, it->second, false};
    return it->second;
  };
  for (bool heads : {false, true}) {
    if (gap(best.final_cost) <= 0.10) break;
    for (double f = 0.05; f <= 20.0; f *= 1.03) {
      if (static_cast<double>(consider(rescaled(config, f, heads))) > 1.5 * static_cast<double>(target)) break;
    }
    // Uniform scaling moves in coarse steps for small widths; nudge one growth
    // rate (kept even) or the head width at a time while the gap keeps shrinking.
    for (bool improved = true; improved;) {
      improved = false;
      const NetworkConfig from = best.config;
      std::vector<NetworkConfig> moves;
      for (std::size_t s = 0; s < from.growth_rates.size(); ++s) {
        for (int step : {-2, 2}) {
          NetworkConfig c = from;
          c.growth_rates[s] += step;
          if (c.growth_rates[s] >= 2) moves.push_back(std::move(c));
        }
      }
      if (heads) {
        for (int step : {-1, 1}) {
          NetworkConfig c = from;
          c.classifier_channels += step;
          if (c.classifier_channels >= 1) moves.push_back(std::move(c));
        }
      }
      for (const auto& c : moves) {
        const double before = gap(best.final_cost);
        consider(c);
        improved = improved || gap(best.final_cost) < before;
      }
    }
  }
  best.matched = gap(best.final_cost) <= 0.10;
  return best;
}

}  // namespace

std::vector<AblationVariant> ablation_variants(const NetworkConfig& base) {
  base.validate();
  std::vector<AblationVariant> out;
  const auto target = final_cost(base);
  out.push_back({"full", base, target, true});

  NetworkConfig no_dense = base;
  no_dense.dense_connectivity = false;
  out.push_back(matched_variant("no-dense", no_dense, target));

  NetworkConfig no_ms = base;
  no_ms.multi_scale = false;
  out.push_back(matched_variant("no-multiscale", no_ms, target));

  NetworkConfig no_ic = base;
  no_ic.intermediate_classifiers = false;
  out.push_back(matched_variant("no-intermediate", no_ic, target));
  return out;
}

std::vector<AblationRow> run_ablation_suite(const NetworkConfig& base, const TrainConfig& train_cfg,
                                            const Dataset& data, std::span<const std::uint64_t> seeds) {
  const Dataset train_set = data.subset(Split::Train);
  const Dataset val_set = data.subset(Split::Val);
  const Dataset test_set = data.subset(Split::Test);
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants(base)) {
    for (std::uint64_t seed : seeds) {
      NetworkGraph graph = build(v.config, seed);
      TrainConfig cfg = train_cfg;
      cfg.seed = seed;
      cfg.loss_weights.clear();
      train(graph, train_set, val_set, cfg);
      const auto acc = classifier_accuracies(graph, test_set);
      const auto costs = classifier_costs(graph).classifier_costs;
      const auto layers = graph.classifier_layers();
      for (std::size_t k = 0; k < acc.size(); ++k) {
        rows.push_back({v.name, seed, k + 1, layers[k], costs[k], acc[k]});
      }
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "variant,seed,classifier,layer,cost,accuracy\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows) {
    os << r.variant << ',' << r.seed << ',' << r.classifier << ',' << r.layer << ',' << r.cost << ',' << r.accuracy
       << '\n';
  }
  os.precision(old);
}

void write_graph_summary(std::ostream& os, const NetworkGraph& graph, const CostTable& costs) {
  const auto& c = graph.config();
  os << "config " << hash_hex(config_hash(c)) << "\n";
  os << "scales " << graph.num_scales() << "  layers " << c.num_layers << "  blocks " << graph.num_blocks()
     << "  parameters " << graph.parameter_count() << "\n\n";
  os << "nodes\n";
  os << "  id  kind               layer scale  channels  size     flops\n";
  for (const auto& n : graph.nodes()) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-3d %-18s %5d %5d %9zu  %-7s %llu\n", n.id, node_kind_name(n.kind), n.layer,
                  n.scale, n.channels, (std::to_string(n.height) + "x" + std::to_string(n.width)).c_str(),
                  static_cast<unsigned long long>(costs.node_flops[static_cast<std::size_t>(n.id)]));
    os << line;
  }
  os << "\nchannels per (layer, scale)\n  layer";
  for (int s = 1; s <= graph.num_scales(); ++s) os << "  s" << s;
  os << "\n";
  for (int l = 1; l <= c.num_layers; ++l) {
    os << "  " << l;
    for (int s = 1; s <= graph.num_scales(); ++s) {
      const int id = graph.state_node(l, s);
      os << "  " << (id < 0 ? std::string("-") : std::to_string(graph.state_channels(l, s)));
    }
    os << "\n";
  }
  os << "\nclassifiers " << graph.num_classifiers() << "\n  k  layer  C_k\n";
  const auto layers = graph.classifier_layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    os << "  " << k + 1 << "  " << layers[k] << "  " << costs.classifier_costs[k] << "\n";
  }
}

nlohmann::json graph_summary_json(const NetworkGraph& graph, const CostTable& costs) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : graph.nodes()) {
    nodes.push_back({{"id", n.id},
                     {"kind", node_kind_name(n.kind)},
                     {"layer", n.layer},
                     {"scale", n.scale},
                     {"inputs", n.inputs},
                     {"shape", {n.channels, n.height, n.width}},
                     {"flops", costs.node_flops[static_cast<std::size_t>(n.id)]}});
  }
  nlohmann::json channels = nlohmann::json::array();
  for (int l = 1; l <= graph.config().num_layers; ++l) {
    nlohmann::json row = nlohmann::json::array();
    for (int s = 1; s <= graph.num_scales(); ++s) row.push_back(graph.state_channels(l, s));
    channels.push_back(row);
  }
  return {{"config_hash", hash_hex(config_hash(graph.config()))},
          {"num_scales", graph.num_scales()},
          {"num_blocks", graph.num_blocks()},
          {"parameters", graph.parameter_count()},
          {"nodes", nodes},
          {"channels", channels},
          {"classifier_layers", graph.classifier_layers()},
          {"classifier_costs", costs.classifier_costs}};
}

std::filesystem::path results_dir(const std::filesystem::path& out_dir, const NetworkConfig& config) {
  const auto dir = out_dir / hash_hex(config_hash(config));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace msdnet
