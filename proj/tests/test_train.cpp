#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "maf/train.hpp"

using namespace maf;

namespace {

MafConfig toy_config() {
  MafConfig cfg;
  cfg.image_h = cfg.image_w = 12;
  cfg.channels = 8;
  cfg.num_maps = 2;
  cfg.compression = 4;
  cfg.heads = 2;
  cfg.units = 1;
  cfg.p_map = 0.0;
  cfg.p_head = 0.0;
  return cfg;
}

std::vector<Sample> toy_samples(int count, double occlusion = 0.0,
                                std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.image_h = spec.image_w = 12;
  spec.count = count;
  spec.occlusion_prob = occlusion;
  spec.noise_std = 0.02;
  spec.seed = seed;
  return generate_synthetic(spec);
}

bool params_equal(MafParams& a, MafParams& b) {
  auto la = param_list(a);
  auto lb = param_list(b);
  if (la.size() != lb.size()) return false;
  for (std::size_t i = 0; i < la.size(); ++i) {
    if (la[i].second->data != lb[i].second->data) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("cross_entropy hand values") {
  Tape tape;
  CHECK(cross_entropy(tape, Tensor::from({2}, {0, 0}), 0).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cross_entropy(tape, Tensor::from({2}, {0, 0}), 0).value() ==
        doctest::Approx(0.69315).epsilon(1e-5));
  CHECK(cross_entropy(tape, Tensor::from({2}, {10, -10}), 0).value() < 1e-8);
  CHECK(cross_entropy(tape, Tensor::from({2}, {1, 3}), 1).value() ==
        doctest::Approx(0.12693).epsilon(1e-4));
  CHECK_THROWS_AS(cross_entropy(tape, Tensor::from({2}, {0, 0}), 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(tape, Tensor::from({2}, {0, 0}), -1),
                  std::invalid_argument);
}

TEST_CASE("sgd_step basic algebra") {
  MafConfig cfg = toy_config();
  SUBCASE("momentum 0, decay 0 is vanilla gradient descent") {
    MafParams p = init_params(cfg, 1);
    MafParams reference = p;
    OptimState st = init_optim(p, 0.1, 0.0, 0.0);
    auto plist = param_list(p);
    std::vector<Tensor> grads;
    Rng rng(2);
    for (auto& [name, t] : plist) {
      grads.push_back(Tensor::random_normal(rng, t->shape, 1.0));
    }
    sgd_step(p, grads, st);
    auto rlist = param_list(reference);
    for (std::size_t k = 0; k < plist.size(); ++k) {
      for (std::size_t i = 0; i < plist[k].second->data.size(); ++i) {
        CHECK(plist[k].second->data[i] ==
              doctest::Approx(rlist[k].second->data[i] - 0.1 * grads[k].data[i])
                  .epsilon(1e-15));
      }
    }
  }
  SUBCASE("zero gradient with zero velocity and decay is a fixed point") {
    MafParams p = init_params(cfg, 3);
    MafParams reference = p;
    OptimState st = init_optim(p, 0.1, 0.9, 0.0);
    std::vector<Tensor> grads;
    for (auto& [name, t] : param_list(p)) grads.push_back(Tensor::zeros(t->shape));
    sgd_step(p, grads, st);
    CHECK(params_equal(p, reference));
  }
  SUBCASE("gradient shape mismatch is rejected") {
    MafParams p = init_params(cfg, 4);
    OptimState st = init_optim(p, 0.1, 0.9, 0.0);
    std::vector<Tensor> grads;
    for (auto& [name, t] : param_list(p)) grads.push_back(Tensor::zeros(t->shape));
    grads[0] = Tensor::zeros({1, 1});
    CHECK_THROWS_AS(sgd_step(p, grads, st), std::invalid_argument);
  }
}

TEST_CASE("two momentum steps match the scalar recurrence") {
  // Quadratic f(w) = 0.5 w^2, gradient w. Hand-iterate
  // v <- m v + (g + wd w); w <- w - lr v, twice.
  const double lr = 0.1, m = 0.9, wd = 0.01;
  double w = 2.0, v = 0.0;
  for (int step = 0; step < 2; ++step) {
    const double g = w;
    v = m * v + (g + wd * w);
    w = w - lr * v;
  }
  // Same update through a 1-element "model": drive sgd_step directly on a
  // single-parameter list by abusing a toy MafParams clone.
  MafConfig cfg = toy_config();
  MafParams p = init_params(cfg, 5);
  auto plist = param_list(p);
  // Zero everything, then plant the scalar in head.b[0].
  for (auto& [name, t] : plist) {
    for (double& x : t->data) x = 0.0;
  }
  p.head_b.data[0] = 2.0;
  OptimState st = init_optim(p, lr, m, wd);
  for (int step = 0; step < 2; ++step) {
    std::vector<Tensor> grads;
    for (auto& [name, t] : param_list(p)) grads.push_back(Tensor::zeros(t->shape));
    // gradient of 0.5 w^2 is w; other entries keep zero gradients but decay,
    // starting at zero they stay zero.
    grads.back() = Tensor::zeros(p.head_b.shape);
    grads.back().data[0] = p.head_b.data[0];
    // decay acts on every parameter; with all-zero values that is a no-op.
    std::vector<Tensor> full = std::move(grads);
    sgd_step(p, full, st);
  }
  CHECK(p.head_b.data[0] == doctest::Approx(w).epsilon(1e-12));
}

TEST_CASE("cosine schedule endpoints, periodicity, bounds") {
  CHECK(cosine_lr(0, 1e-2, 40) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(cosine_lr(20, 1e-2, 40) == doctest::Approx(5e-3).epsilon(1e-12));
  CHECK(cosine_lr(40, 1e-2, 40) == doctest::Approx(1e-2).epsilon(1e-15));
  for (int epoch = 0; epoch < 200; ++epoch) {
    const double lr = cosine_lr(epoch, 1e-2, 40);
    CHECK(lr > 0.0);
    CHECK(lr <= 1e-2);
    CHECK(lr == cosine_lr(epoch + 40, 1e-2, 40));
  }
  CHECK_THROWS_AS(cosine_lr(0, 1e-2, 0), std::invalid_argument);
}

TEST_CASE("training with lr=0 leaves parameters untouched") {
  const MafConfig cfg = toy_config();
  MafParams p = init_params(cfg, 6);
  MafParams reference = p;
  const auto data = toy_samples(1);
  TrainOptions opt;
  opt.epochs = 1;
  opt.batch_size = 1;
  opt.base_lr = 0.0;
  const TrainResult result = train(cfg, std::move(p), data, data, opt);
  MafParams got = result.params;
  CHECK(params_equal(got, reference));
  CHECK(result.history.records.size() == 1);
}

TEST_CASE("loss decreases on a small separable set") {
  const MafConfig cfg = toy_config();
  const auto data = toy_samples(4);
  TrainOptions opt;
  opt.epochs = 20;
  opt.batch_size = 4;
  opt.base_lr = 1e-2;
  opt.lr_period = 40;
  opt.seed = 7;
  const TrainResult result = train(cfg, init_params(cfg, 7), data, data, opt);
  REQUIRE(result.history.records.size() == 20);
  // Monotone trend on the smoothed (5-epoch window) loss: later windows sit
  // below the opening one, and the best window clears it by a margin.
  const auto window_mean = [&](std::size_t start) {
    double m = 0.0;
    for (std::size_t i = start; i < start + 5; ++i) {
      m += result.history.records[i].train_loss;
    }
    return m / 5.0;
  };
  const double opening = window_mean(0);
  double best = opening;
  for (std::size_t start = 1; start + 5 <= 20; ++start) {
    best = std::min(best, window_mean(start));
  }
  CHECK(window_mean(15) < opening);
  CHECK(best < 0.9 * opening);
}

TEST_CASE("training is bit-deterministic in the seed") {
  const MafConfig cfg = [] {
    MafConfig c = toy_config();
    c.p_map = 0.6;
    c.p_head = 0.4;
    return c;
  }();
  const auto data = toy_samples(6, 0.5);
  const auto test = toy_samples(4, 0.5, 2);
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 2;
  opt.seed = 9;
  TrainResult a = train(cfg, init_params(cfg, 8), data, test, opt);
  TrainResult b = train(cfg, init_params(cfg, 8), data, test, opt);
  CHECK(history_csv(a.history) == history_csv(b.history));
  CHECK(params_equal(a.params, b.params));

  // And identical across jobs counts.
  opt.jobs = 3;
  TrainResult c = train(cfg, init_params(cfg, 8), data, test, opt);
  CHECK(history_csv(a.history) == history_csv(c.history));
  CHECK(params_equal(a.params, c.params));
}

TEST_CASE("history csv format") {
  TrainHistory h;
  h.records.push_back({0, 0.01, 0.69, 0.5, 0.5, 0.4});
  h.records.push_back({1, 0.0099, 0.5, 0.75, 0.8, 0.7});
  const std::string csv = history_csv(h);
  CHECK(csv.find("epoch,lr,train_loss,train_acc,test_acc,test_f1\n") == 0);
  CHECK(csv.find("0,0.01,0.69,0.5,0.5,0.4\n") != std::string::npos);
  CHECK(csv.find("1,0.0099,0.5,0.75,0.8,0.7\n") != std::string::npos);
}

TEST_CASE("evaluate with rigged heads") {
  MafConfig cfg = toy_config();
  auto data = toy_samples(8);
  SUBCASE("a predictor matching every label scores ACC=1, F1=1") {
    for (auto& s : data) s.label = 1;
    MafParams p = init_params(cfg, 10);
    p.head_w = Tensor::zeros(p.head_w.shape);
    p.head_b = Tensor::from({2}, {0.0, 10.0});  // always predicts class 1
    const EvalResult r = evaluate(p, data, cfg);
    CHECK(r.acc == 1.0);
    CHECK(r.f1 == 1.0);
  }
  SUBCASE("an all-negative predictor on an all-positive set scores 0") {
    for (auto& s : data) s.label = 1;
    MafParams p = init_params(cfg, 10);
    p.head_w = Tensor::zeros(p.head_w.shape);
    p.head_b = Tensor::from({2}, {10.0, 0.0});  // always predicts class 0
    const EvalResult r = evaluate(p, data, cfg);
    CHECK(r.acc == 0.0);
    CHECK(r.f1 == 0.0);
  }
  SUBCASE("empty dataset is rejected") {
    MafParams p = init_params(cfg, 10);
    CHECK_THROWS_AS(evaluate(p, {}, cfg), std::invalid_argument);
  }
}

TEST_CASE("evaluate is invariant to dataset ordering") {
  const MafConfig cfg = toy_config();
  const MafParams p = init_params(cfg, 11);
  auto data = toy_samples(10, 0.5);
  const EvalResult forward_order = evaluate(p, data, cfg);
  std::reverse(data.begin(), data.end());
  const EvalResult reverse_order = evaluate(p, data, cfg);
  CHECK(forward_order.acc == reverse_order.acc);
  CHECK(forward_order.f1 == reverse_order.f1);
  CHECK(forward_order.acc_occluded == reverse_order.acc_occluded);
  CHECK(forward_order.acc_unoccluded == reverse_order.acc_unoccluded);
}

TEST_CASE("train-mode loss with zero probabilities equals eval-mode loss") {
  const MafConfig cfg = toy_config();  // p_map = p_head = 0
  const auto data = toy_samples(5);
  const MafParams p = init_params(cfg, 12);

  // One epoch, one full batch: the recorded train loss is the mean loss on
  // the initial parameters (the update lands after the forward passes).
  TrainOptions opt;
  opt.epochs = 1;
  opt.batch_size = 8;
  opt.seed = 3;
  MafParams copy = p;
  const TrainResult result = train(cfg, std::move(copy), data, data, opt);

  double eval_loss = 0.0;
  for (const Sample& s : data) {
    Tape tape(false);
    Rng rng(0);
    const MafOutput out = maf_forward(tape, s.image, p, cfg, rng, Mode::kEval);
    eval_loss += cross_entropy(tape, out.logits, s.label).value();
  }
  eval_loss /= static_cast<double>(data.size());
  CHECK(result.history.records[0].train_loss == eval_loss);
}

TEST_CASE("predict_label ties break to the lower class") {
  CHECK(predict_label(Tensor::from({2}, {0.5, 0.5})) == 0);
  CHECK(predict_label(Tensor::from({2}, {0.2, 0.7})) == 1);
  // Argmax is invariant to adding a constant to both logits.
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor logits = Tensor::random_normal(rng, {2}, 1.0);
    Tensor shifted = logits;
    const double c = rng.next_normal();
    for (double& v : shifted.data) v += c;
    CHECK(predict_label(logits) == predict_label(shifted));
  }
}
