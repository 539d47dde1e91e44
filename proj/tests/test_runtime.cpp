#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "msdnet/errors.hpp"
#include "msdnet/runtime.hpp"
#include "test_util.hpp"

using namespace msdnet;
using msdnet::testing::random_tensor;

namespace {

NetworkConfig random_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> scales(1, 3), extra(0, 4), half_k(1, 3), classes(2, 5);
  NetworkConfig c;
  c.num_scales = scales(rng);
  c.num_layers = c.num_scales + extra(rng);
  c.growth_rates.clear();
  for (int s = 0; s < c.num_scales; ++s) c.growth_rates.push_back(2 * half_k(rng));
  c.num_classes = classes(rng);
  c.placement = {PlacementKind::Budgeted, 0, {}};
  c.reduction = rng() & 1;
  c.densenet_star = c.reduction && (rng() & 1);
  c.dense_connectivity = rng() % 4 != 0;
  c.input_channels = 2;
  c.input_height = 12;
  c.input_width = 10;
  c.classifier_channels = 6;
  return c;
}

// Random BN statistics and affine terms so eval-mode BN is not the identity.
void randomize_batch_norms(NetworkGraph& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mean(-0.3, 0.3), var(0.5, 2.0), gamma(0.5, 1.5), beta(-0.2, 0.2);
  for (BatchNormParams* bn : g.batch_norms()) {
    for (auto& m : bn->running_mean) m = mean(rng);
    for (auto& v : bn->running_var) v = var(rng);
    for (double& v : bn->gamma.data()) v = gamma(rng);
    for (double& v : bn->beta.data()) v = beta(rng);
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor sample_row(const Tensor& batch, std::size_t i) {
  const std::vector<std::size_t> idx{i};
  return select_rows(batch, idx);
}

TEST(LazyEager, LogitsAgreeOnRandomConfigs) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    NetworkGraph g = build(random_config(rng), static_cast<std::uint64_t>(trial));
    randomize_batch_norms(g, rng);
    const Tensor batch = random_tensor({5, 2, 12, 10}, rng);
    const auto eager = forward_full(g, batch);
    const LazySchedule schedule = make_schedule(g);
    LazyEvaluator lazy(g, schedule, batch);
    for (std::size_t k = 0; k < g.num_classifiers(); ++k) {
      const Tensor logits = lazy.run_next();
      EXPECT_LE(max_abs_diff(logits, eager[k]), 1e-10) << "trial " << trial << " classifier " << k + 1;
      EXPECT_EQ(lazy.metered_flops(), schedule.costs.classifier_costs[k]) << "trial " << trial;
    }
    EXPECT_THROW(lazy.run_next(), UsageError);
  }
}

TEST(LazyEager, ClosuresPartitionLiveNodesInTopologicalOrder) {
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 10; ++trial) {
    const NetworkGraph g = build(random_config(rng));
    const auto batches = lazy_closures(g);
    ASSERT_EQ(batches.size(), g.num_classifiers());
    std::vector<bool> done(g.size(), false);
    std::uint64_t running = 0;
    const CostTable costs = classifier_costs(g);
    for (std::size_t k = 0; k < batches.size(); ++k) {
      for (int id : batches[k]) {
        EXPECT_FALSE(done[static_cast<std::size_t>(id)]);
        for (int p : g.node(id).inputs) EXPECT_TRUE(done[static_cast<std::size_t>(p)]) << "node " << id;
        done[static_cast<std::size_t>(id)] = true;
        running += costs.node_flops[static_cast<std::size_t>(id)];
      }
      EXPECT_EQ(running, costs.classifier_costs[k]);
      const auto closure = dependency_closure(g, k + 1);
      for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(done[i], closure[i]);
    }
  }
}

TEST(ForwardFull, ZeroLinearGivesUniformSoftmax) {
  std::mt19937_64 rng(63);
  NetworkGraph g = build(random_config(rng));
  for (int id : g.classifiers()) {
    for (double& v : g.mutable_node(id).linear_weight.data()) v = 0.0;
  }
  const auto logits = forward_full(g, random_tensor({3, 2, 12, 10}, rng));
  const double uniform = 1.0 / g.config().num_classes;
  for (const auto& l : logits) {
    for (const auto& d : decide(l)) EXPECT_NEAR(d.confidence, uniform, 1e-15);
  }
}

TEST(ForwardFull, ShapeMismatchIsInputError) {
  std::mt19937_64 rng(64);
  const NetworkGraph g = build(random_config(rng));
  EXPECT_THROW(forward_full(g, Tensor::zeros({1, 3, 12, 10})), InputError);
  EXPECT_THROW(forward_full(g, Tensor::zeros({1, 2, 10, 10})), InputError);
}

TEST(ForwardFull, SingleClassifierAblation) {
  std::mt19937_64 rng(65);
  NetworkConfig c = random_config(rng);
  c.intermediate_classifiers = false;
  EXPECT_EQ(forward_full(build(c), random_tensor({2, 2, 12, 10}, rng)).size(), 1u);
}

TEST(Anytime, BudgetSelectsDeepestAffordableClassifier) {
  std::mt19937_64 rng(66);
  for (int trial = 0; trial < 5; ++trial) {
    NetworkGraph g = build(random_config(rng));
    randomize_batch_norms(g, rng);
    const LazySchedule schedule = make_schedule(g);
    const auto& C = schedule.costs.classifier_costs;
    const Tensor batch = random_tensor({2, 2, 12, 10}, rng);
    const auto eager = forward_full(g, batch);
    const Tensor x = sample_row(batch, 1);
    std::vector<std::uint64_t> budgets{C.front(), C.back(), C.back() * 3};
    std::uniform_int_distribution<std::uint64_t> pick(C.front(), C.back() + 10);
    for (int i = 0; i < 20; ++i) budgets.push_back(pick(rng));
    std::sort(budgets.begin(), budgets.end());
    std::size_t prev_exit = 0;
    for (auto budget : budgets) {
      const auto r = evaluate_anytime(g, schedule, x, budget);
      const std::size_t k = r.trace.exit;
      ASSERT_GE(k, 1u);
      EXPECT_LE(r.trace.flops, budget);
      EXPECT_EQ(r.trace.flops, C[k - 1]);
      if (k < C.size()) EXPECT_GT(C[k], budget);
      EXPECT_GE(k, prev_exit);
      prev_exit = k;
      EXPECT_LE(max_abs_diff(r.logits, sample_row(eager[k - 1], 1)), 1e-10);
    }
    EXPECT_EQ(evaluate_anytime(g, schedule, x, C.back()).trace.exit, C.size());
  }
}

TEST(Anytime, BelowFirstCostThrows) {
  std::mt19937_64 rng(67);
  const NetworkGraph g = build(random_config(rng));
  const auto C = classifier_costs(g).classifier_costs;
  EXPECT_THROW(evaluate_anytime(g, random_tensor({1, 2, 12, 10}, rng), C.front() - 1), BudgetTooSmallError);
  EXPECT_THROW(evaluate_anytime(g, random_tensor({2, 2, 12, 10}, rng), C.back()), InputError);
}

ExitPlan plan_with(std::vector<double> thresholds) {
  ExitPlan p;
  p.thresholds = std::move(thresholds);
  p.exit_probs.assign(p.thresholds.size(), 1.0 / static_cast<double>(p.thresholds.size()));
  return p;
}

TEST(Budgeted, SentinelsSendEveryoneToTheEnd) {
  std::mt19937_64 rng(68);
  NetworkConfig c = random_config(rng);
  c.num_layers = std::max(c.num_layers, 3);
  c.reduction = false;
  NetworkGraph g = build(c);
  randomize_batch_norms(g, rng);
  const std::size_t K = g.num_classifiers();
  std::vector<double> th(K, never_exit_threshold());
  th.back() = 0.0;
  const Tensor batch = random_tensor({7, 2, 12, 10}, rng);
  const auto traces = evaluate_budgeted(g, batch, plan_with(th));
  const auto eager = decide(forward_full(g, batch).back());
  const auto C = classifier_costs(g).classifier_costs;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    EXPECT_EQ(traces[i].exit, K);
    EXPECT_EQ(traces[i].prediction, eager[i].prediction);
    EXPECT_EQ(traces[i].flops, C.back());
  }
}

TEST(Budgeted, ZeroThresholdsExitAtFirst) {
  std::mt19937_64 rng(69);
  const NetworkGraph g = build(random_config(rng));
  const auto traces =
      evaluate_budgeted(g, random_tensor({6, 2, 12, 10}, rng), plan_with(std::vector<double>(g.num_classifiers(), 0.0)));
  const auto C1 = classifier_costs(g).classifier_costs.front();
  for (const auto& t : traces) {
    EXPECT_EQ(t.exit, 1u);
    EXPECT_EQ(t.flops, C1);
  }
}

TEST(Budgeted, ResultsIndependentOfBatchComposition) {
  std::mt19937_64 rng(70);
  NetworkConfig c = random_config(rng);
  c.num_layers = 6;
  c.reduction = false;
  NetworkGraph g = build(c);
  randomize_batch_norms(g, rng);
  const std::size_t K = g.num_classifiers();
  const Tensor batch = random_tensor({12, 2, 12, 10}, rng);
  const auto eager = forward_full(g, batch);
  // Thresholds at the median confidence of each classifier give mixed exits.
  std::vector<double> th(K, 0.0);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    auto d = decide(eager[k]);
    std::vector<double> conf;
    for (auto& r : d) conf.push_back(r.confidence);
    std::nth_element(conf.begin(), conf.begin() + 6, conf.end());
    th[k] = conf[6];
  }
  const LazySchedule schedule = make_schedule(g);
  const auto traces = evaluate_budgeted(g, schedule, batch, plan_with(th), {}, true);
  const auto& C = schedule.costs.classifier_costs;
  std::uint64_t total = 0;
  std::vector<std::size_t> exits(K, 0);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    ASSERT_EQ(t.logits.size(), t.exit);
    for (std::size_t k = 0; k < t.exit; ++k) {
      for (std::size_t j = 0; j < t.logits[k].size(); ++j) {
        EXPECT_NEAR(t.logits[k][j], eager[k][i * t.logits[k].size() + j], 1e-10);
      }
    }
    const auto single = evaluate_budgeted(g, schedule, sample_row(batch, i), plan_with(th));
    EXPECT_EQ(single.front().exit, t.exit);
    EXPECT_EQ(single.front().prediction, t.prediction);
    EXPECT_EQ(t.flops, C[t.exit - 1]);
    total += t.flops;
    ++exits[t.exit - 1];
  }
  std::uint64_t by_exits = 0;
  for (std::size_t k = 0; k < K; ++k) by_exits += exits[k] * C[k];
  EXPECT_EQ(total, by_exits);
}

TEST(Budgeted, ReplayOfCalibrationReproducesTargets) {
  std::mt19937_64 rng(71);
  NetworkConfig c = random_config(rng);
  c.num_layers = 6;
  c.reduction = false;
  NetworkGraph g = build(c);
  randomize_batch_norms(g, rng);
  const std::size_t K = g.num_classifiers();
  const Tensor batch = random_tensor({40, 2, 12, 10}, rng);
  const auto eager = forward_full(g, batch);
  ConfidenceProfile profile(K);
  for (std::size_t i = 0; i < 40; ++i) {
    std::vector<double> conf;
    for (std::size_t k = 0; k < K; ++k) conf.push_back(decide(eager[k])[i].confidence);
    profile.add_sample(conf, std::vector<bool>(K, false));
  }
  const auto cal = calibrate_thresholds(profile, exit_distribution(0.3, K));
  ExitPlan plan = plan_with(cal.thresholds);
  const auto traces = evaluate_budgeted(g, batch, plan);
  std::vector<std::size_t> exits(K, 0);
  for (const auto& t : traces) ++exits[t.exit - 1];
  EXPECT_EQ(exits, cal.exit_counts);
}

TEST(Budgeted, PlanSizeMismatchIsConfigError) {
  std::mt19937_64 rng(72);
  const NetworkGraph g = build(random_config(rng));
  EXPECT_THROW(evaluate_budgeted(g, random_tensor({1, 2, 12, 10}, rng),
                                 plan_with(std::vector<double>(g.num_classifiers() + 1, 0.0))),
               ConfigError);
}

TEST(Traces, CsvHeaderAndRows) {
  EvalTrace t;
  t.sample_id = 3;
  t.exit = 2;
  t.confidence = 0.75;
  t.prediction = 1;
  t.label = 0;
  t.flops = 1234;
  std::ostringstream os;
  write_traces_csv(os, std::span<const EvalTrace>(&t, 1));
  EXPECT_EQ(os.str(), "sample_id,exit,confidence,prediction,label,flops\n3,2,0.75,1,0,1234\n");
}

}  // namespace
