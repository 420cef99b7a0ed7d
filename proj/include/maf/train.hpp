#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "maf/data.hpp"
#include "maf/model.hpp"

namespace maf {

// Runs fn(0..n) across up to `jobs` threads. Work items must own disjoint
// output slots; scheduling order then never affects results.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

// SGD with momentum and coupled weight decay. Velocity slots are aligned
// with param_list order.
struct OptimState {
  std::vector<Tensor> velocity;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-5;
};

OptimState init_optim(MafParams& params, double lr, double momentum,
                      double weight_decay);

// v <- momentum*v + (g + weight_decay*w); w <- w - lr*v
void sgd_step(MafParams& params, const std::vector<Tensor>& grads, OptimState& state);

// Cosine annealing with warm restarts every `period` epochs.
double cosine_lr(int epoch, double base_lr, int period);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double test_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> records;
};

// CSV with header epoch,lr,train_loss,train_acc,test_acc,test_f1.
std::string history_csv(const TrainHistory& history);

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  double base_lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int lr_period = 40;
  std::uint64_t seed = 1;
  int jobs = 1;  // concurrent forward/backward passes inside a batch
};

struct TrainResult {
  MafParams params;
  TrainHistory history;
};

// Seeded shuffling, per-sample dropout streams, mean-loss SGD updates, and
// an eval-mode test pass per epoch. Deterministic in options.seed for any
// jobs count.
TrainResult train(const MafConfig& config, MafParams params,
                  const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const TrainOptions& options);

// Argmax with ties resolved to the lower class index.
int predict_label(const Tensor& logits);

struct EvalResult {
  double acc = 0.0;
  double f1 = 0.0;
  // Metrics over the occluded / unoccluded subsets; -1 when a subset is empty.
  double acc_occluded = -1.0;
  double acc_unoccluded = -1.0;
  double f1_occluded = -1.0;
  double f1_unoccluded = -1.0;
  std::vector<int> predictions;
};

EvalResult evaluate(const MafParams& params, const std::vector<Sample>& dataset,
                    const MafConfig& config, int jobs = 1);

}  // namespace maf
