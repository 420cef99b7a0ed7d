#include "maf/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace maf {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5u;
constexpr std::uint64_t kDropoutStream = 0x6u;

}  // namespace

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    threads.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

OptimState init_optim(MafParams& params, double lr, double momentum,
                      double weight_decay) {
  if (lr < 0.0) throw std::invalid_argument("init_optim: lr must be non-negative");
  OptimState state;
  state.lr = lr;
  state.momentum = momentum;
  state.weight_decay = weight_decay;
  for (auto& [name, tensor] : param_list(params)) {
    state.velocity.push_back(Tensor::zeros(tensor->shape));
  }
  return state;
}

void sgd_step(MafParams& params, const std::vector<Tensor>& grads, OptimState& state) {
  auto plist = param_list(params);
  if (grads.size() != plist.size() || state.velocity.size() != plist.size()) {
    throw std::invalid_argument("sgd_step: gradient/velocity count mismatch (" +
                                std::to_string(grads.size()) + " grads, " +
                                std::to_string(plist.size()) + " params)");
  }
  for (std::size_t k = 0; k < plist.size(); ++k) {
    Tensor& w = *plist[k].second;
    Tensor& v = state.velocity[k];
    const Tensor& g = grads[k];
    if (g.shape != w.shape) {
      throw std::invalid_argument("sgd_step: gradient shape " + shape_str(g.shape) +
                                  " does not match parameter " + plist[k].first +
                                  " " + shape_str(w.shape));
    }
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      v.data[i] = state.momentum * v.data[i] +
                  (g.data[i] + state.weight_decay * w.data[i]);
      w.data[i] -= state.lr * v.data[i];
    }
  }
}

double cosine_lr(int epoch, double base_lr, int period) {
  if (period < 1) throw std::invalid_argument("cosine_lr: period must be >= 1");
  const int t = epoch % period;
  return base_lr * (1.0 + std::cos(M_PI * t / period)) / 2.0;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,lr,train_loss,train_acc,test_acc,test_f1\n";
  char line[256];
  for (const EpochRecord& r : history.records) {
    std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch,
                  r.lr, r.train_loss, r.train_acc, r.test_acc, r.test_f1);
    out += line;
  }
  return out;
}

int predict_label(const Tensor& logits) {
  int best = 0;
  for (std::size_t j = 1; j < logits.numel(); ++j) {
    if (logits.data[j] > logits.data[static_cast<std::size_t>(best)]) {
      best = static_cast<int>(j);
    }
  }
  return best;
}

EvalResult evaluate(const MafParams& params, const std::vector<Sample>& dataset,
                    const MafConfig& config, int jobs) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const int n = static_cast<int>(dataset.size());
  EvalResult result;
  result.predictions.assign(static_cast<std::size_t>(n), 0);
  parallel_for(n, jobs, [&](int i) {
    Tape tape(false);
    Rng rng(0);  // eval mode never consumes randomness
    const MafOutput out =
        maf_forward(tape, dataset[static_cast<std::size_t>(i)].image, params, config,
                    rng, Mode::kEval);
    result.predictions[static_cast<std::size_t>(i)] = predict_label(out.logits);
  });

  std::vector<int> labels, occ_preds, occ_labels, clean_preds, clean_labels;
  for (int i = 0; i < n; ++i) {
    const Sample& s = dataset[static_cast<std::size_t>(i)];
    labels.push_back(s.label);
    if (s.occluded) {
      occ_preds.push_back(result.predictions[static_cast<std::size_t>(i)]);
      occ_labels.push_back(s.label);
    } else {
      clean_preds.push_back(result.predictions[static_cast<std::size_t>(i)]);
      clean_labels.push_back(s.label);
    }
  }
  result.acc = accuracy(result.predictions, labels);
  result.f1 = f1_score(result.predictions, labels);
  if (!occ_labels.empty()) {
    result.acc_occluded = accuracy(occ_preds, occ_labels);
    result.f1_occluded = f1_score(occ_preds, occ_labels);
  }
  if (!clean_labels.empty()) {
    result.acc_unoccluded = accuracy(clean_preds, clean_labels);
    result.f1_unoccluded = f1_score(clean_preds, clean_labels);
  }
  return result;
}

namespace {

struct SampleResult {
  std::vector<Tensor> grads;
  double loss = 0.0;
  int pred = 0;
};

}  // namespace

TrainResult train(const MafConfig& config, MafParams params,
                  const std::vector<Sample>& train_set,
                  const std::vector<Sample>& test_set, const TrainOptions& options) {
  config.validate();
  if (train_set.empty() || test_set.empty()) {
    throw std::invalid_argument("train: datasets must be non-empty");
  }
  if (options.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (options.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");

  TrainResult result;
  result.params = std::move(params);
  OptimState state = init_optim(result.params, options.base_lr, options.momentum,
                                options.weight_decay);
  const std::size_t n_params = state.velocity.size();
  Rng root(options.seed);
  const int n = static_cast<int>(train_set.size());

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, options.base_lr, options.lr_period);
    state.lr = lr;

    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = root.split(kShuffleStream).split(static_cast<std::uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[shuffle_rng.next_below(static_cast<std::uint32_t>(i + 1))]);
    }

    double loss_sum = 0.0;
    std::vector<int> epoch_preds(static_cast<std::size_t>(n), 0);
    std::vector<int> epoch_labels(static_cast<std::size_t>(n), 0);
    const Rng epoch_rng = root.split(kDropoutStream).split(static_cast<std::uint64_t>(epoch));

    for (int start = 0; start < n; start += options.batch_size) {
      const int bsz = std::min(options.batch_size, n - start);
      std::vector<SampleResult> batch(static_cast<std::size_t>(bsz));
      parallel_for(bsz, options.jobs, [&](int b) {
        const int idx = order[static_cast<std::size_t>(start + b)];
        const Sample& s = train_set[static_cast<std::size_t>(idx)];
        Tape tape;
        BoundParams bound = bind_params(tape, result.params);
        Rng sample_rng = epoch_rng.split(static_cast<std::uint64_t>(idx));
        const MafOutput out =
            maf_forward(tape, s.image, bound.params, config, sample_rng, Mode::kTrain);
        const Tensor loss = cross_entropy(tape, out.logits, s.label);
        const GradMap grads = tape.backward(loss);
        SampleResult r;
        r.loss = loss.value();
        r.pred = predict_label(out.logits);
        r.grads.reserve(n_params);
        auto plist = param_list(bound.params);
        for (std::size_t k = 0; k < n_params; ++k) {
          const Tensor* g = grads.find(bound.nodes[k]);
          r.grads.push_back(g ? *g : Tensor::zeros(plist[k].second->shape));
        }
        batch[static_cast<std::size_t>(b)] = std::move(r);
      });

      // Mean over the batch, accumulated in sample order so results do not
      // depend on the jobs count.
      std::vector<Tensor> mean_grads = std::move(batch[0].grads);
      for (int b = 1; b < bsz; ++b) {
        for (std::size_t k = 0; k < n_params; ++k) {
          Tensor& acc = mean_grads[k];
          const Tensor& g = batch[static_cast<std::size_t>(b)].grads[k];
          for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
        }
      }
      for (std::size_t k = 0; k < n_params; ++k) {
        for (double& v : mean_grads[k].data) v /= bsz;
      }
      sgd_step(result.params, mean_grads, state);

      for (int b = 0; b < bsz; ++b) {
        const int idx = order[static_cast<std::size_t>(start + b)];
        loss_sum += batch[static_cast<std::size_t>(b)].loss;
        epoch_preds[static_cast<std::size_t>(idx)] = batch[static_cast<std::size_t>(b)].pred;
        epoch_labels[static_cast<std::size_t>(idx)] =
            train_set[static_cast<std::size_t>(idx)].label;
      }
    }

    const EvalResult test_eval = evaluate(result.params, test_set, config, options.jobs);
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    record.train_loss = loss_sum / n;
    record.train_acc = accuracy(epoch_preds, epoch_labels);
    record.test_acc = test_eval.acc;
    record.test_f1 = test_eval.f1;
    result.history.records.push_back(record);
  }
  return result;
}

}  // namespace maf
