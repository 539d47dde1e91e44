#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "msdnet/checkpoint.hpp"
#include "msdnet/cost_model.hpp"
#include "msdnet/errors.hpp"
#include "msdnet/experiment.hpp"
#include "msdnet/harness.hpp"
#include "msdnet/runtime.hpp"
#include "msdnet/serialization.hpp"

namespace fs = std::filesystem;
using namespace msdnet;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string plan;
  std::string budget_grid;
  std::string format = "text";
  std::string split = "test";
  std::string out_dir;
  double budget = -1.0;
  std::int64_t seed = -1;
  std::size_t batch_size = 0;
  std::size_t num_seeds = 1;
};

std::string default_out_dir() {
  const char* env = std::getenv("MSDNET_OUT_DIR");
  return env && *env ? env : "results";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  os << text;
}

ExperimentConfig load(const Options& o) {
  ExperimentConfig e = load_experiment_config(o.config);
  if (o.seed >= 0) {
    e.training.seed = static_cast<std::uint64_t>(o.seed);
    e.data.seed = static_cast<std::uint64_t>(o.seed);
  }
  return e;
}

NetworkGraph load_trained(const ExperimentConfig& e, const Options& o) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  NetworkGraph graph = build(e.network);
  load_checkpoint(graph, o.checkpoint);
  return graph;
}

Dataset split_of(const Dataset& all, const std::string& name) {
  if (name == "train") return all.subset(Split::Train);
  if (name == "val") return all.subset(Split::Val);
  if (name == "test") return all.subset(Split::Test);
  throw UsageError("--split must be train, val or test");
}

// "default", "lo:hi:n" (log-spaced) or a comma-separated list.
std::vector<double> parse_grid(const std::string& spec, const NetworkGraph& graph) {
  if (spec.empty() || spec == "default") return default_budget_grid(graph);
  std::vector<double> out;
  try {
    if (spec.find(':') != std::string::npos) {
      std::stringstream ss(spec);
      std::string lo, hi, n;
      std::getline(ss, lo, ':');
      std::getline(ss, hi, ':');
      std::getline(ss, n);
      return log_budget_grid(std::stod(lo), std::stod(hi), std::stoul(n));
    }
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  } catch (const std::logic_error&) {
    throw UsageError("cannot parse --budget-grid '" + spec + "'");
  }
  return out;
}

std::vector<double> budgets_of(const Options& o, const NetworkGraph& graph) {
  if (o.budget >= 0.0) return {o.budget};
  return parse_grid(o.budget_grid, graph);
}

int cmd_build(const Options& o) {
  const NetworkConfig config = load_network_config(o.config);
  const NetworkGraph graph = build(config);
  const CostTable costs = classifier_costs(graph);
  std::ostringstream text, csv;
  write_graph_summary(text, graph, costs);
  write_cost_csv(csv, graph, costs);
  std::cout << (o.format == "csv" ? csv.str() : text.str());
  if (!o.out_dir.empty()) {
    const auto dir = results_dir(o.out_dir, config);
    write_file(dir / "graph.txt", text.str());
    write_file(dir / "costs.csv", csv.str());
    write_file(dir / "graph.json", graph_summary_json(graph, costs).dump(2) + "\n");
  }
  return 0;
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig e = load(o);
  const Dataset ds = make_dataset(e.data);
  const fs::path dir = o.out_dir.empty() ? fs::path(default_out_dir()) : fs::path(o.out_dir);
  fs::create_directories(dir);
  save_dataset(ds, (dir / "dataset.bin").string(), (dir / "labels.csv").string());
  std::cout << "wrote " << ds.size() << " samples to " << (dir / "dataset.bin").string() << " and "
            << (dir / "labels.csv").string() << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig e = load(o);
  const Dataset ds = make_dataset(e.data);
  NetworkGraph graph = build(e.network, e.training.seed);
  const auto dir = results_dir(o.out_dir, e.network);
  const TrainResult result = train(graph, ds.subset(Split::Train), ds.subset(Split::Val), e.training,
                                   [](const EpochMetrics& m) {
                                     std::cerr << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.train_loss;
                                     for (double a : m.val_accuracy) std::cerr << ' ' << a;
                                     std::cerr << '\n';
                                   });
  const auto ckpt = o.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(o.checkpoint);
  save_checkpoint(graph, ckpt.string());
  std::ostringstream csv;
  write_metrics_csv(csv, result);
  write_file(dir / "metrics.csv", csv.str());
  std::cout << "config " << hash_hex(config_hash(e.network)) << "\ncheckpoint " << ckpt.string() << "\nmetrics "
            << (dir / "metrics.csv").string() << "\n";
  return 0;
}

int cmd_eval_anytime(const Options& o) {
  const ExperimentConfig e = load(o);
  const NetworkGraph graph = load_trained(e, o);
  const Dataset test = split_of(make_dataset(e.data), o.split);
  const auto rows = run_anytime_curve(graph, test, budgets_of(o, graph));
  std::ostringstream csv;
  write_anytime_csv(csv, rows);
  write_file(results_dir(o.out_dir, e.network) / "anytime.csv", csv.str());
  if (o.format == "csv") {
    std::cout << csv.str();
  } else {
    std::cout << "config " << hash_hex(config_hash(e.network)) << "\n";
    for (const auto& r : rows) {
      std::cout << "budget " << r.budget << ": ";
      if (r.has_prediction) {
        std::cout << "accuracy " << r.accuracy << " (classifier " << r.classifier << ")\n";
      } else {
        std::cout << "no prediction (budget below C_1)\n";
      }
    }
  }
  return 0;
}

int cmd_calibrate(const Options& o) {
  if (o.budget < 0.0) throw UsageError("--budget (average FLOPs per sample) is required");
  const ExperimentConfig e = load(o);
  const NetworkGraph graph = load_trained(e, o);
  const Dataset all = make_dataset(e.data);
  const Dataset val = all.subset(Split::Val);
  const std::size_t M = o.batch_size ? o.batch_size : all.subset(Split::Test).size();
  const ConfidenceProfile profile = confidence_profile(graph, val);
  const ExitPlan plan = make_exit_plan(graph, profile, M, o.budget * static_cast<double>(M));
  const auto cal = calibrate_thresholds(profile, plan.exit_probs);
  const auto dir = results_dir(o.out_dir, e.network);
  write_file(dir / "exit_plan.json", to_json(plan).dump(2) + "\n");
  std::ostringstream prof;
  profile.write_csv(prof);
  write_file(dir / "val_profile.csv", prof.str());
  for (const auto& w : cal.warnings) std::cerr << "warning: " << w << "\n";
  if (o.format == "csv") {
    std::cout << "classifier,exit_prob,threshold,target_exits,val_exits\n";
    for (std::size_t k = 0; k < plan.num_classifiers(); ++k) {
      std::cout << k + 1 << ',' << plan.exit_probs[k] << ',' << plan.thresholds[k] << ',' << cal.target_exits[k]
                << ',' << cal.exit_counts[k] << '\n';
    }
  } else {
    std::cout << "config " << plan.config_hash << "\nq " << plan.q << " (clamp " << plan.clamp << ")\n";
    for (std::size_t k = 0; k < plan.num_classifiers(); ++k) {
      std::cout << "  k=" << k + 1 << "  q_k " << plan.exit_probs[k] << "  theta " << plan.thresholds[k]
                << "  n_k " << cal.target_exits[k] << "  val exits " << cal.exit_counts[k] << "\n";
    }
    std::cout << "plan " << (dir / "exit_plan.json").string() << "\n";
  }
  return 0;
}

int cmd_eval_budget(const Options& o) {
  const ExperimentConfig e = load(o);
  const NetworkGraph graph = load_trained(e, o);
  const Dataset all = make_dataset(e.data);
  const auto dir = results_dir(o.out_dir, e.network);
  const std::string hash = hash_hex(config_hash(e.network));

  if (!o.plan.empty()) {
    std::ifstream in(o.plan);
    if (!in) throw InputError("cannot open exit plan " + o.plan);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& err) {
      throw InputError(o.plan + " is not valid JSON: " + err.what());
    }
    const ExitPlan plan = exit_plan_from_json(j);
    if (plan.config_hash != hash) {
      throw InputError("exit plan config hash " + plan.config_hash + " does not match config hash " + hash);
    }
    const Dataset data = split_of(all, o.split);
    const auto traces = evaluate_budgeted(graph, data.images, plan, data.labels);
    std::ostringstream csv;
    write_traces_csv(csv, traces);
    write_file(dir / ("traces_" + o.split + ".csv"), csv.str());
    std::vector<std::size_t> exits(plan.num_classifiers(), 0);
    std::size_t correct = 0;
    double flops = 0.0;
    for (const auto& t : traces) {
      ++exits[t.exit - 1];
      correct += t.prediction == t.label;
      flops += static_cast<double>(t.flops);
    }
    if (o.format == "csv") {
      std::cout << csv.str();
    } else {
      std::cout << "config " << hash << "\nsamples " << traces.size() << "\naccuracy "
                << static_cast<double>(correct) / static_cast<double>(traces.size()) << "\navg_flops "
                << flops / static_cast<double>(traces.size()) << "\nexits";
      for (auto c : exits) std::cout << ' ' << c;
      std::cout << "\n";
    }
    return 0;
  }

  const auto rows = run_budgeted_curve(graph, all.subset(Split::Val), all.subset(Split::Test), budgets_of(o, graph));
  std::ostringstream csv;
  write_budget_csv(csv, rows);
  write_file(dir / "budgeted.csv", csv.str());
  if (o.format == "csv") {
    std::cout << csv.str();
  } else {
    std::cout << "config " << hash << "\n";
    for (const auto& r : rows) {
      std::cout << "avg budget " << r.avg_budget << ": accuracy " << r.accuracy << ", realized " << r.realized_avg_flops
                << " FLOPs/sample, q " << r.q;
      if (r.clamp != "none") std::cout << " [clamped: " << r.clamp << "]";
      std::cout << "\n";
    }
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  const ExperimentConfig e = load(o);
  const Dataset ds = make_dataset(e.data);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < o.num_seeds; ++i) seeds.push_back(e.training.seed + i);
  for (const auto& v : ablation_variants(e.network)) {
    std::cerr << v.name << ": C_K " << v.final_cost << (v.matched ? "" : " (not within 10% of the full model)")
              << "\n";
  }
  const auto rows = run_ablation_suite(e.network, e.training, ds, seeds);
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  write_file(results_dir(o.out_dir, e.network) / "ablation.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale dense network with early exits"};
  app.require_subcommand(1);
  Options o;
  o.out_dir = default_out_dir();

  auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", o.config, "Experiment or network config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out-dir", o.out_dir, "Results root (default $MSDNET_OUT_DIR or ./results)");
    sub->add_option("--format", o.format, "Stdout format")->check(CLI::IsMember({"text", "csv"}));
    sub->add_option("--seed", o.seed, "Overrides the training and data seeds");
    if (needs_checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  };

  auto* build_cmd = app.add_subcommand("build", "Print the graph summary and cost table");
  add_common(build_cmd, false);
  auto* gen = app.add_subcommand("gen-data", "Write the dataset described by the config");
  add_common(gen, false);
  auto* train_cmd = app.add_subcommand("train", "Train and write a checkpoint plus metrics");
  add_common(train_cmd, false);
  train_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint output path");
  auto* anytime = app.add_subcommand("eval-anytime", "Accuracy under per-sample budgets");
  add_common(anytime, true);
  anytime->add_option("--budget", o.budget, "Per-sample FLOP budget");
  anytime->add_option("--budget-grid", o.budget_grid, "default | lo:hi:n | b1,b2,...");
  anytime->add_option("--split", o.split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}));
  auto* calib = app.add_subcommand("calibrate", "Solve q and calibrate thresholds on the validation split");
  add_common(calib, true);
  calib->add_option("--budget", o.budget, "Average FLOPs per sample (B / M)")->required();
  calib->add_option("--batch-size", o.batch_size, "M (default: test split size)");
  auto* budget = app.add_subcommand("eval-budget", "Budgeted batch classification");
  add_common(budget, true);
  budget->add_option("--budget", o.budget, "Average FLOPs per sample (B / M)");
  budget->add_option("--budget-grid", o.budget_grid, "default | lo:hi:n | b1,b2,...");
  budget->add_option("--plan", o.plan, "Replay a calibrated exit plan instead of solving");
  budget->add_option("--split", o.split, "Split to replay the plan on")->check(CLI::IsMember({"train", "val", "test"}));
  auto* ablate = app.add_subcommand("ablate", "Train the ablation variants at matched cost");
  add_common(ablate, false);
  ablate->add_option("--num-seeds", o.num_seeds, "Seeds per variant");

  CLI11_PARSE(app, argc, argv);

  try {
    if (build_cmd->parsed()) return cmd_build(o);
    if (gen->parsed()) return cmd_gen_data(o);
    if (train_cmd->parsed()) return cmd_train(o);
    if (anytime->parsed()) return cmd_eval_anytime(o);
    if (calib->parsed()) return cmd_calibrate(o);
    if (budget->parsed()) return cmd_eval_budget(o);
    if (ablate->parsed()) return cmd_ablate(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
