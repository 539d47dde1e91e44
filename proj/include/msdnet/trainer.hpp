#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "msdnet/dataset.hpp"
#include "msdnet/graph.hpp"

namespace msdnet {

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.1;
  std::vector<int> lr_drops{15, 23};
  double lr_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Per-classifier loss weights w_k; empty means all ones.
  std::vector<double> loss_weights;
  std::uint64_t seed = 0;

  void validate() const;
};

// 300 epochs, lr 0.1 dropped tenfold at 150 and 225, Nesterov 0.9, wd 1e-4, batch 64.
TrainConfig full_scale_recipe();
// full_scale_recipe with epochs and drop points shrunk proportionally.
TrainConfig desk_recipe(int epochs = 30);

double lr_schedule(int epoch, const TrainConfig& cfg);

// (1/|batch|) sum_samples sum_k w_k CE(logits_k, y). Empty weights mean w_k = 1.
Tensor cumulative_loss(std::span<const Tensor> logits, std::span<const int> labels,
                       std::span<const double> weights = {}, Tape* tape = nullptr);

// One velocity buffer per parameter, zero-initialised on first use.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

// Nesterov without dampening: g' = g + wd w; v = mu v + g'; w -= lr (g' + mu v).
void sgd_nesterov_step(std::span<Tensor> params, SgdState& state, double lr, double momentum,
                       double weight_decay);

// Training-mode forward over the nodes some classifier needs (BN uses batch
// statistics and updates its running estimates). Returns logits per classifier.
std::vector<Tensor> forward_train(NetworkGraph& graph, const Tensor& batch, Tape* tape);

// Fraction correct of each classifier (eval-mode forward, chunked).
std::vector<double> classifier_accuracies(const NetworkGraph& graph, const Dataset& data,
                                          std::size_t chunk = 256);

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::vector<double> val_accuracy;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Shuffled minibatch SGD on the cumulative loss; single-threaded and
// deterministic under cfg.seed. Throws NumericError if the loss diverges.
TrainResult train(NetworkGraph& graph, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// epoch,lr,train_loss,val_acc_1..val_acc_K
void write_metrics_csv(std::ostream& os, const TrainResult& result);

}  // namespace msdnet
