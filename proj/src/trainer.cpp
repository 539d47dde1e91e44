#include "msdnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "msdnet/errors.hpp"
#include "msdnet/runtime.hpp"

namespace msdnet {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("training field 'epochs': must be >= 0");
  if (batch_size == 0) throw ConfigError("training field 'batch_size': must be positive");
  if (!(learning_rate >= 0.0)) throw ConfigError("training field 'learning_rate': must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("training field 'momentum': must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("training field 'weight_decay': must be >= 0");
  if (!(lr_factor > 0.0)) throw ConfigError("training field 'lr_factor': must be positive");
  if (!std::is_sorted(lr_drops.begin(), lr_drops.end())) throw ConfigError("training field 'lr_drops': must be sorted");
  for (double w : loss_weights) {
    if (!(w >= 0.0)) throw ConfigError("training field 'loss_weights': entries must be >= 0");
  }
}

TrainConfig full_scale_recipe() {
  TrainConfig c;
  c.epochs = 300;
  c.lr_drops = {150, 225};
  return c;
}

TrainConfig desk_recipe(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.lr_drops = {static_cast<int>(std::llround(epochs * 0.5)), static_cast<int>(std::llround(epochs * 0.75))};
  return c;
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  double lr = cfg.learning_rate;
  for (int d : cfg.lr_drops) {
    if (d <= epoch) lr *= cfg.lr_factor;
  }
  return lr;
}

Tensor cumulative_loss(std::span<const Tensor> logits, std::span<const int> labels, std::span<const double> weights,
                       Tape* tape) {
  if (logits.empty()) throw ConfigError("cumulative loss needs at least one classifier");
  if (!weights.empty() && weights.size() != logits.size()) {
    throw ConfigError("loss weights have " + std::to_string(weights.size()) + " entries for " +
                      std::to_string(logits.size()) + " classifiers");
  }
  Tensor total;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double w = weights.empty() ? 1.0 : weights[k];
    Tensor term = cross_entropy(logits[k], labels, tape);
    if (w != 1.0) term = scale(term, w, tape);
    total = total.defined() ? add(total, term, tape) : term;
  }
  return total;
}

void sgd_nesterov_step(std::span<Tensor> params, SgdState& state, double lr, double momentum,
                       double weight_decay) {
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  }
  if (state.velocity.size() != params.size()) throw UsageError("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].data();
    auto g = params[i].grad();
    auto& v = state.velocity[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gd = g[j] + weight_decay * w[j];
      v[j] = momentum * v[j] + gd;
      w[j] -= lr * (gd + momentum * v[j]);
    }
  }
}

std::vector<Tensor> forward_train(NetworkGraph& graph, const Tensor& batch, Tape* tape) {
  check_input_shape(graph, batch);
  std::vector<Tensor> cache(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const int id = static_cast<int>(i);
    if (!graph.live(id)) continue;
    GraphNode& n = graph.mutable_node(id);
    if (n.kind == NodeKind::Input) {
      cache[i] = batch;
      continue;
    }
    std::vector<Tensor> ins;
    ins.reserve(n.inputs.size());
    for (int p : n.inputs) ins.push_back(cache[static_cast<std::size_t>(p)]);
    cache[i] = apply_node(n, ins, BnMode::Train, tape);
  }
  std::vector<Tensor> logits;
  for (int c : graph.classifiers()) logits.push_back(cache[static_cast<std::size_t>(c)]);
  return logits;
}

std::vector<double> classifier_accuracies(const NetworkGraph& graph, const Dataset& data, std::size_t chunk) {
  const std::size_t K = graph.num_classifiers();
  std::vector<double> correct(K, 0.0);
  if (data.size() == 0) return correct;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = forward_full(graph, select_rows(data.images, idx));
    for (std::size_t k = 0; k < K; ++k) {
      const auto d = decide(logits[k]);
      for (std::size_t r = 0; r < d.size(); ++r) {
        if (d[r].prediction == data.labels[start + r]) correct[k] += 1.0;
      }
    }
  }
  for (auto& c : correct) c /= static_cast<double>(data.size());
  return correct;
}

TrainResult train(NetworkGraph& graph, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
#if defined(__GLIBC__)
  // Every step allocates and frees the same large activation buffers; keep
  // them on the heap instead of round-tripping through mmap.
  static const bool tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)tuned;
#endif
  cfg.validate();
  train_set.validate();
  check_input_shape(graph, train_set.images);
  if (!cfg.loss_weights.empty() && cfg.loss_weights.size() != graph.num_classifiers()) {
    throw ConfigError("training field 'loss_weights': expected " + std::to_string(graph.num_classifiers()) +
                      " entries");
  }
  std::vector<Tensor> params = graph.parameters();
  SgdState state;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (auto i : idx) labels.push_back(train_set.labels[i]);

      for (auto& p : params) p.zero_grad();
      Tape tape;
      Tensor loss;
      try {
        const auto logits = forward_train(graph, select_rows(train_set.images, idx), &tape);
        loss = cumulative_loss(logits, labels, cfg.loss_weights, &tape);
      } catch (const NumericError& e) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch) + " at sample offset " +
                           std::to_string(start) + ": " + e.what());
      }
      tape.backward(loss);
      sgd_nesterov_step(params, state, lr, cfg.momentum, cfg.weight_decay);
      loss_sum += loss.item() * static_cast<double>(idx.size());
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, order.size()));
    m.val_accuracy = classifier_accuracies(graph, val_set);
    if (on_epoch) on_epoch(m);
    result.history.push_back(std::move(m));
  }
  return result;
}

void write_metrics_csv(std::ostream& os, const TrainResult& result) {
  const std::size_t K = result.history.empty() ? 0 : result.history.front().val_accuracy.size();
  os << "epoch,lr,train_loss";
  for (std::size_t k = 1; k <= K; ++k) os << ",val_acc_" << k;
  os << '\n';
  const auto old = os.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& m : result.history) {
    os << m.epoch << ',' << m.lr << ',' << m.train_loss;
    for (double a : m.val_accuracy) os << ',' << a;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace msdnet
