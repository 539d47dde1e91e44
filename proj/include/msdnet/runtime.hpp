#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "msdnet/cost_model.hpp"
#include "msdnet/exit_policy.hpp"
#include "msdnet/graph.hpp"

namespace msdnet {

struct EvalTrace {
  std::size_t sample_id = 0;
  std::size_t exit = 0;  // 1-based classifier index
  double confidence = 0.0;
  int prediction = -1;
  int label = -1;  // -1 when unknown
  std::uint64_t flops = 0;
  // Logits of every classifier evaluated for this sample (optional profiling aid).
  std::vector<std::vector<double>> logits;
};

// Eager reference evaluator: every node once, in topological order, BN in eval
// mode. Returns one [B, classes] logits tensor per classifier.
std::vector<Tensor> forward_full(const NetworkGraph& graph, const Tensor& batch);

// Lazy evaluation plan ("diagonal blocks"): batch k holds the nodes classifier k
// needs that no earlier classifier needed, in topological order.
struct LazySchedule {
  std::vector<std::vector<int>> batches;
  std::vector<std::uint64_t> batch_flops;
  CostTable costs;
};

std::vector<std::vector<int>> lazy_closures(const NetworkGraph& graph);
LazySchedule make_schedule(const NetworkGraph& graph);

// Runs a graph one diagonal block at a time over a (shrinkable) batch,
// metering the FLOPs of every node it executes.
class LazyEvaluator {
 public:
  LazyEvaluator(const NetworkGraph& graph, const LazySchedule& schedule, const Tensor& batch);

  std::size_t completed() const { return completed_; }
  std::size_t num_classifiers() const { return schedule_.batches.size(); }
  std::size_t batch_size() const { return rows_; }
  // FLOPs executed per sample so far.
  std::uint64_t metered_flops() const { return metered_; }
  std::uint64_t next_batch_flops() const;

  // Executes the next diagonal block and returns that classifier's logits.
  Tensor run_next();
  // Keeps only the given rows (indices into the current batch) for later blocks.
  void keep_rows(std::span<const std::size_t> rows);

 private:
  const NetworkGraph& graph_;
  const LazySchedule& schedule_;
  std::vector<Tensor> cache_;
  std::size_t rows_ = 0;
  std::size_t completed_ = 0;
  std::uint64_t metered_ = 0;
};

// Max softmax probability and argmax of each row of a [B, classes] logits tensor.
struct RowDecision {
  double confidence;
  int prediction;
};
std::vector<RowDecision> decide(const Tensor& logits);

struct AnytimeResult {
  int prediction = -1;
  EvalTrace trace;
  Tensor logits;  // [1, classes] of the selected classifier
};

// Runs whole diagonal blocks while the next one fits in the remaining budget and
// answers with the deepest completed classifier. Throws BudgetTooSmallError if
// budget < C_1.
AnytimeResult evaluate_anytime(const NetworkGraph& graph, const LazySchedule& schedule, const Tensor& sample,
                               std::uint64_t budget_flops);
AnytimeResult evaluate_anytime(const NetworkGraph& graph, const Tensor& sample, std::uint64_t budget_flops);

// Dynamic evaluation with early exits at max-softmax >= theta_k; exited samples
// are masked out of later blocks. Traces come back in sample order.
std::vector<EvalTrace> evaluate_budgeted(const NetworkGraph& graph, const LazySchedule& schedule,
                                         const Tensor& batch, const ExitPlan& plan,
                                         std::span<const int> labels = {}, bool keep_logits = false);
std::vector<EvalTrace> evaluate_budgeted(const NetworkGraph& graph, const Tensor& batch, const ExitPlan& plan,
                                         std::span<const int> labels = {});

// sample_id,exit,confidence,prediction,label,flops
void write_traces_csv(std::ostream& os, std::span<const EvalTrace> traces);

// Validates [B, C, H, W] against the graph's input shape (InputError otherwise).
void check_input_shape(const NetworkGraph& graph, const Tensor& batch);

}  // namespace msdnet
