#include "msdnet/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "msdnet/errors.hpp"

namespace msdnet {

void check_input_shape(const NetworkGraph& graph, const Tensor& batch) {
  const auto& c = graph.config();
  if (!batch.defined() || batch.rank() != 4 || batch.dim(1) != static_cast<std::size_t>(c.input_channels) ||
      batch.dim(2) != static_cast<std::size_t>(c.input_height) ||
      batch.dim(3) != static_cast<std::size_t>(c.input_width)) {
    throw InputError("batch shape " + (batch.defined() ? shape_string(batch.shape()) : std::string("<undefined>")) +
                     " does not match network input [B," + std::to_string(c.input_channels) + "," +
                     std::to_string(c.input_height) + "," + std::to_string(c.input_width) + "]");
  }
}

namespace {

Tensor run_node(const NetworkGraph& graph, const std::vector<Tensor>& cache, int id, const Tensor& batch) {
  const GraphNode& n = graph.node(id);
  if (n.kind == NodeKind::Input) return batch;
  std::vector<Tensor> ins;
  ins.reserve(n.inputs.size());
  for (int p : n.inputs) ins.push_back(cache[static_cast<std::size_t>(p)]);
  return apply_node(n, ins);
}

}  // namespace

std::vector<Tensor> forward_full(const NetworkGraph& graph, const Tensor& batch) {
  check_input_shape(graph, batch);
  std::vector<Tensor> cache(graph.size());
  for (const auto& n : graph.nodes()) cache[static_cast<std::size_t>(n.id)] = run_node(graph, cache, n.id, batch);
  std::vector<Tensor> logits;
  for (int c : graph.classifiers()) logits.push_back(cache[static_cast<std::size_t>(c)]);
  return logits;
}

std::vector<std::vector<int>> lazy_closures(const NetworkGraph& graph) {
  std::vector<std::vector<int>> batches;
  std::vector<bool> done(graph.size(), false);
  for (std::size_t k = 1; k <= graph.num_classifiers(); ++k) {
    const auto closure = dependency_closure(graph, k);
    std::vector<int> batch;
    for (std::size_t i = 0; i < closure.size(); ++i) {
      if (closure[i] && !done[i]) {
        batch.push_back(static_cast<int>(i));
        done[i] = true;
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

LazySchedule make_schedule(const NetworkGraph& graph) {
  LazySchedule s;
  s.batches = lazy_closures(graph);
  s.costs = classifier_costs(graph);
  for (const auto& b : s.batches) {
    std::uint64_t f = 0;
    for (int id : b) f += s.costs.node_flops[static_cast<std::size_t>(id)];
    s.batch_flops.push_back(f);
  }
  return s;
}

LazyEvaluator::LazyEvaluator(const NetworkGraph& graph, const LazySchedule& schedule, const Tensor& batch)
    : graph_(graph), schedule_(schedule), cache_(graph.size()) {
  check_input_shape(graph, batch);
  rows_ = batch.dim(0);
  // The input node is free; seed it so every block can read it.
  for (const auto& n : graph.nodes()) {
    if (n.kind == NodeKind::Input) cache_[static_cast<std::size_t>(n.id)] = batch;
  }
}

std::uint64_t LazyEvaluator::next_batch_flops() const {
  if (completed_ >= schedule_.batches.size()) return 0;
  return schedule_.batch_flops[completed_];
}

Tensor LazyEvaluator::run_next() {
  if (completed_ >= schedule_.batches.size()) throw UsageError("all classifiers already evaluated");
  if (rows_ == 0) throw UsageError("lazy evaluator has no samples left");
  for (int id : schedule_.batches[completed_]) {
    const GraphNode& n = graph_.node(id);
    if (n.kind != NodeKind::Input) {
      std::vector<Tensor> ins;
      ins.reserve(n.inputs.size());
      for (int p : n.inputs) ins.push_back(cache_[static_cast<std::size_t>(p)]);
      cache_[static_cast<std::size_t>(id)] = apply_node(n, ins);
    }
    metered_ += node_flops(n);
  }
  const int head = graph_.classifiers()[completed_];
  ++completed_;
  return cache_[static_cast<std::size_t>(head)];
}

void LazyEvaluator::keep_rows(std::span<const std::size_t> rows) {
  if (rows.empty()) {
    rows_ = 0;
    for (auto& t : cache_) t = Tensor{};
    return;
  }
  for (auto& t : cache_) {
    if (t.defined()) t = select_rows(t, rows);
  }
  rows_ = rows.size();
}

std::vector<RowDecision> decide(const Tensor& logits) {
  const Tensor p = softmax(logits);
  const std::size_t rows = p.dim(0), cols = p.dim(1);
  std::vector<RowDecision> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pr = p.data().data() + r * cols;
    const auto best = std::max_element(pr, pr + cols);
    out[r] = RowDecision{*best, static_cast<int>(best - pr)};
  }
  return out;
}

AnytimeResult evaluate_anytime(const NetworkGraph& graph, const LazySchedule& schedule, const Tensor& sample,
                               std::uint64_t budget_flops) {
  if (sample.rank() != 4 || sample.dim(0) != 1) {
    throw InputError("anytime evaluation takes a single sample [1,C,H,W]");
  }
  const auto& costs = schedule.costs.classifier_costs;
  if (costs.empty() || budget_flops < costs.front()) {
    throw BudgetTooSmallError("budget " + std::to_string(budget_flops) + " FLOPs is below C_1 = " +
                              std::to_string(costs.empty() ? 0 : costs.front()));
  }
  LazyEvaluator ev(graph, schedule, sample);
  AnytimeResult result;
  while (ev.completed() < ev.num_classifiers() && ev.metered_flops() + ev.next_batch_flops() <= budget_flops) {
    result.logits = ev.run_next();
  }
  const auto d = decide(result.logits).front();
  result.prediction = d.prediction;
  result.trace.exit = ev.completed();
  result.trace.confidence = d.confidence;
  result.trace.prediction = d.prediction;
  result.trace.flops = ev.metered_flops();
  return result;
}

AnytimeResult evaluate_anytime(const NetworkGraph& graph, const Tensor& sample, std::uint64_t budget_flops) {
  const LazySchedule schedule = make_schedule(graph);
  return evaluate_anytime(graph, schedule, sample, budget_flops);
}

std::vector<EvalTrace> evaluate_budgeted(const NetworkGraph& graph, const LazySchedule& schedule,
                                         const Tensor& batch, const ExitPlan& plan, std::span<const int> labels,
                                         bool keep_logits) {
  const std::size_t K = graph.num_classifiers();
  if (plan.num_classifiers() != K) {
    throw ConfigError("exit plan has " + std::to_string(plan.num_classifiers()) + " thresholds for " +
                      std::to_string(K) + " classifiers");
  }
  check_input_shape(graph, batch);
  const std::size_t M = batch.dim(0);
  if (!labels.empty() && labels.size() != M) throw InputError("label count does not match batch size");

  std::vector<EvalTrace> traces(M);
  std::vector<std::size_t> alive(M);
  for (std::size_t i = 0; i < M; ++i) {
    alive[i] = i;
    traces[i].sample_id = i;
    traces[i].label = labels.empty() ? -1 : labels[i];
  }
  LazyEvaluator ev(graph, schedule, batch);
  for (std::size_t k = 0; k < K && !alive.empty(); ++k) {
    const Tensor logits = ev.run_next();
    const auto decisions = decide(logits);
    std::vector<std::size_t> keep_rows, keep_ids;
    for (std::size_t r = 0; r < alive.size(); ++r) {
      EvalTrace& t = traces[alive[r]];
      if (keep_logits) {
        const double* lr = logits.data().data() + r * logits.dim(1);
        t.logits.emplace_back(lr, lr + logits.dim(1));
      }
      if (k + 1 == K || decisions[r].confidence >= plan.thresholds[k]) {
        t.exit = k + 1;
        t.confidence = decisions[r].confidence;
        t.prediction = decisions[r].prediction;
        t.flops = ev.metered_flops();
      } else {
        keep_rows.push_back(r);
        keep_ids.push_back(alive[r]);
      }
    }
    if (keep_rows.size() != alive.size()) ev.keep_rows(keep_rows);
    alive.swap(keep_ids);
  }
  return traces;
}

std::vector<EvalTrace> evaluate_budgeted(const NetworkGraph& graph, const Tensor& batch, const ExitPlan& plan,
                                         std::span<const int> labels) {
  const LazySchedule schedule = make_schedule(graph);
  return evaluate_budgeted(graph, schedule, batch, plan, labels);
}

void write_traces_csv(std::ostream& os, std::span<const EvalTrace> traces) {
  os << "sample_id,exit,confidence,prediction,label,flops\n";
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& t : traces) {
    os << t.sample_id << ',' << t.exit << ',' << t.confidence << ',' << t.prediction << ',' << t.label << ','
       << t.flops << '\n';
  }
  os.precision(old);
}

}  // namespace msdnet
