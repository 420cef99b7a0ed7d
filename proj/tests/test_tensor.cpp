#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "maf/rng.hpp"
#include "maf/tensor.hpp"

using namespace maf;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  return Tensor::random_normal(rng, std::move(shape), scale);
}

// Independent oracle: plain i-j-k triple loop, accumulation local to each cell.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int m = a.shape[0], k = a.shape[1], p = b.shape[1];
  Tensor out = Tensor::zeros({m, p});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += a.at(i, l) * b.at(l, j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double d = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    d = std::max(d, std::abs(a.data[i] - b.data[i]));
  }
  return d;
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK(t.all_finite());
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), std::invalid_argument);
  CHECK(Tensor::scalar(3.5).value() == 3.5);
}

TEST_CASE("matmul identity and hand cases") {
  Tape tape;
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor prod = matmul(tape, eye, a);
  CHECK(max_abs_diff(prod, a) == 0.0);

  const Tensor row = Tensor::from({1, 2}, {1, 2});
  const Tensor col = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(tape, row, col).value() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
  Rng rng(101);
  Tape tape(false);
  for (int trial = 0; trial < 5; ++trial) {
    Rng r = rng.split(trial);
    const Tensor a = random_tensor(r, {3, 4});
    const Tensor b = random_tensor(r, {4, 2});
    CHECK(max_abs_diff(matmul(tape, a, b), matmul_oracle(a, b)) < 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(tape, a, b);
    FAIL("expected a dimension error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random conformable triples") {
  Rng rng(202);
  Tape tape(false);
  for (int trial = 0; trial < 10; ++trial) {
    Rng r = rng.split(trial);
    const Tensor a = random_tensor(r, {3, 5});
    const Tensor b = random_tensor(r, {5, 4});
    const Tensor c = random_tensor(r, {4, 6});
    const Tensor left = matmul(tape, matmul(tape, a, b), c);
    const Tensor right = matmul(tape, a, matmul(tape, b, c));
    double scale = 0.0;
    for (double v : left.data) scale = std::max(scale, std::abs(v));
    CHECK(max_abs_diff(left, right) / std::max(1.0, scale) < 1e-9);
  }
}

TEST_CASE("conv1x1 identity and summation cases") {
  Tape tape;
  SUBCASE("identity weights pass the input through") {
    Rng rng(7);
    const Tensor x = random_tensor(rng, {3, 2, 2});
    const Tensor w = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor b = Tensor::zeros({3});
    CHECK(max_abs_diff(conv1x1(tape, x, w, b), x) == 0.0);
  }
  SUBCASE("all-ones input and weights sum the channels") {
    const Tensor x = Tensor::full({3, 2, 2}, 1.0);
    const Tensor w = Tensor::full({2, 3}, 1.0);
    const Tensor b = Tensor::zeros({2});
    const Tensor out = conv1x1(tape, x, w, b);
    for (double v : out.data) CHECK(v == 3.0);
  }
  SUBCASE("channel mismatch raises a dimension error") {
    const Tensor x = Tensor::zeros({3, 2, 2});
    const Tensor w = Tensor::zeros({2, 4});
    const Tensor b = Tensor::zeros({2});
    CHECK_THROWS_AS(conv1x1(tape, x, w, b), std::invalid_argument);
  }
}

TEST_CASE("conv1x1 equals matmul on the CxHW unfolding") {
  Rng rng(303);
  Tape tape(false);
  const Tensor x = random_tensor(rng, {4, 3, 3});
  const Tensor w = random_tensor(rng, {2, 4});
  const Tensor b = random_tensor(rng, {2});
  const Tensor out = conv1x1(tape, x, w, b);

  // Oracle: unfold x to 4x9, multiply, add bias.
  Tensor unfolded = Tensor::from({4, 9}, x.data);
  Tensor prod = matmul_oracle(w, unfolded);
  for (int o = 0; o < 2; ++o) {
    for (int p = 0; p < 9; ++p) prod.at(o, p) += b.at(o);
  }
  const Tensor expected = Tensor::from({2, 3, 3}, prod.data);
  CHECK(max_abs_diff(out, expected) < 1e-12);
}

TEST_CASE("softmax_rows hand values and invariants") {
  Tape tape;
  SUBCASE("symmetric input splits evenly") {
    const Tensor out = softmax_rows(tape, Tensor::from({1, 2}, {0, 0}));
    CHECK(out.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("shift invariance") {
    const Tensor a = softmax_rows(tape, Tensor::from({1, 2}, {1, 2}));
    const Tensor b = softmax_rows(tape, Tensor::from({1, 2}, {101, 102}));
    CHECK(max_abs_diff(a, b) < 1e-9);
  }
  SUBCASE("direct evaluation of [1,2]") {
    const Tensor out = softmax_rows(tape, Tensor::from({1, 2}, {1, 2}));
    CHECK(out.at(0, 0) == doctest::Approx(0.26894).epsilon(0).scale(1).epsilon(1e-5));
    CHECK(out.at(0, 1) == doctest::Approx(0.73106).epsilon(1e-5));
  }
  SUBCASE("rows sum to one within 1e-12 on random input") {
    Rng rng(404);
    const Tensor x = random_tensor(rng, {8, 5}, 4.0);
    const Tensor out = softmax_rows(tape, x);
    for (int i = 0; i < 8; ++i) {
      double s = 0.0;
      for (int j = 0; j < 5; ++j) {
        s += out.at(i, j);
        CHECK(out.at(i, j) > 0.0);
        CHECK(out.at(i, j) < 1.0);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("activations match their definitions") {
  Tape tape;
  const Tensor x = Tensor::from({4}, {-1.0, 2.0, 0.0, 1.0});
  const Tensor r = relu(tape, x);
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 2.0);
  const Tensor s = sigmoid(tape, Tensor::from({1}, {0.0}));
  CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  const Tensor g = gelu(tape, x);
  CHECK(g.at(2) == 0.0);
  // Oracle: x * Phi(x) through erf.
  const double expected = 1.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)));
  CHECK(g.at(3) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(g.at(3) == doctest::Approx(0.84134).epsilon(1e-4));
}

TEST_CASE("layer_norm hand cases") {
  Tape tape;
  const Tensor gamma = Tensor::full({3}, 1.0);
  const Tensor beta = Tensor::zeros({3});
  SUBCASE("constant row collapses to beta") {
    const Tensor out =
        layer_norm(tape, Tensor::from({1, 3}, {5, 5, 5}), gamma, beta, 1e-5);
    for (double v : out.data) CHECK(std::abs(v) < 1e-9);
  }
  SUBCASE("two-point row normalizes to +-1") {
    const Tensor g2 = Tensor::full({2}, 1.0);
    const Tensor b2 = Tensor::zeros({2});
    const Tensor out = layer_norm(tape, Tensor::from({1, 2}, {1, 3}), g2, b2, 1e-5);
    CHECK(out.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(out.at(0, 1) == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("gamma zero broadcasts beta") {
    Rng rng(5);
    const Tensor x = random_tensor(rng, {4, 3});
    const Tensor g0 = Tensor::zeros({3});
    const Tensor b = Tensor::from({3}, {7, 8, 9});
    const Tensor out = layer_norm(tape, x, g0, b, 1e-5);
    for (int i = 0; i < 4; ++i) {
      CHECK(out.at(i, 0) == 7.0);
      CHECK(out.at(i, 1) == 8.0);
      CHECK(out.at(i, 2) == 9.0);
    }
  }
  SUBCASE("unit-variance rows for high-variance input") {
    Rng rng(6);
    const Tensor x = random_tensor(rng, {6, 8}, 10.0);
    const Tensor g8 = Tensor::full({8}, 1.0);
    const Tensor b8 = Tensor::zeros({8});
    const Tensor out = layer_norm(tape, x, g8, b8, 1e-5);
    for (int i = 0; i < 6; ++i) {
      double mean = 0.0;
      for (int j = 0; j < 8; ++j) mean += out.at(i, j);
      mean /= 8;
      double var = 0.0;
      for (int j = 0; j < 8; ++j) var += (out.at(i, j) - mean) * (out.at(i, j) - mean);
      var /= 8;
      CHECK(std::abs(mean) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("backward on linear and quadratic losses") {
  SUBCASE("sum gives ones") {
    Tape tape;
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
    x.requires_grad = true;
    const Tensor leaf = tape.leaf(x);
    const Tensor loss = sum(tape, leaf);
    const GradMap grads = tape.backward(loss);
    const Tensor* g = grads.find(leaf.node);
    REQUIRE(g != nullptr);
    for (double v : g->data) CHECK(v == 1.0);
  }
  SUBCASE("sum of squares gives 2x") {
    Tape tape;
    Tensor x = Tensor::from({3}, {1, -2, 0.5});
    x.requires_grad = true;
    const Tensor leaf = tape.leaf(x);
    const Tensor loss = sum(tape, mul(tape, leaf, leaf));
    const GradMap grads = tape.backward(loss);
    const Tensor* g = grads.find(leaf.node);
    REQUIRE(g != nullptr);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(g->data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-15));
    }
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Tensor x = Tensor::from({2}, {1, 2});
    x.requires_grad = true;
    const Tensor leaf = tape.leaf(x);
    CHECK_THROWS_AS(tape.backward(leaf), std::invalid_argument);
  }
  SUBCASE("unreachable leaves report zero gradients") {
    Tape tape;
    Tensor x = Tensor::from({2}, {1, 2});
    Tensor y = Tensor::from({2}, {3, 4});
    x.requires_grad = y.requires_grad = true;
    const Tensor lx = tape.leaf(x);
    const Tensor ly = tape.leaf(y);
    const Tensor loss = sum(tape, lx);
    const GradMap grads = tape.backward(loss);
    const Tensor* gy = grads.find(ly.node);
    REQUIRE(gy != nullptr);
    CHECK(gy->shape == y.shape);
    for (double v : gy->data) CHECK(v == 0.0);
  }
}

TEST_CASE("check_gradients oracle behaviour") {
  Rng rng(777);
  SUBCASE("exact for a linear function") {
    const Tensor x = random_tensor(rng, {3, 2});
    const double err = check_gradients(
        [](Tape& t, const Tensor& v) { return sum(t, v); }, x, 1e-5);
    CHECK(err < 1e-10);
  }
  SUBCASE("softmax followed by sum of squares") {
    const Tensor x = random_tensor(rng, {2, 3});
    const double err = check_gradients(
        [](Tape& t, const Tensor& v) {
          const Tensor s = softmax_rows(t, v);
          return sum(t, mul(t, s, s));
        },
        x, 1e-5);
    CHECK(err < 1e-6);
  }
  SUBCASE("a corrupted gradient is caught") {
    // Hand-recorded sum whose backward shifts every entry by 0.1.
    const auto bad_sum = [](Tape& tape, const Tensor& x) {
      double tot = 0.0;
      for (double v : x.data) tot += v;
      Tensor out = Tensor::scalar(tot);
      out.requires_grad = x.requires_grad;
      if (tape.recording() && x.node >= 0) {
        const int xn = x.node;
        const Shape sh = x.shape;
        out.node = tape.record("bad_sum", {xn}, out.shape,
                               [xn, sh](const Tensor& g, GradMap& grads) {
                                 Tensor& dx = grads.accumulate(xn, sh);
                                 for (double& v : dx.data) v += g.data[0] + 0.1;
                               });
      }
      return out;
    };
    const Tensor x = random_tensor(rng, {4});
    CHECK(check_gradients(bad_sum, x, 1e-5) > 1e-2);
  }
  SUBCASE("h outside the sanctioned window is rejected") {
    const Tensor x = random_tensor(rng, {2});
    CHECK_THROWS_AS(check_gradients(
                        [](Tape& t, const Tensor& v) { return sum(t, v); }, x, 1e-8),
                    std::invalid_argument);
  }
}

TEST_CASE("gradient checks across every differentiable op") {
  // 10 seeds per op, h = 1e-5, tolerance 1e-4.
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed) + 1);

    const Tensor m34 = random_tensor(rng, {3, 4});
    const Tensor m43 = random_tensor(rng, {4, 3});
    const Tensor fmap = random_tensor(rng, {3, 4, 4});

    const auto check = [&](const std::string& label, const TensorFn& f, const Tensor& x) {
      const double err = check_gradients(f, x, 1e-5);
      INFO(label << " seed " << seed << " err " << err);
      CHECK(err < 1e-4);
    };

    check("add", [&](Tape& t, const Tensor& v) {
      return sum(t, mul(t, add(t, v, m34), add(t, v, m34)));
    }, m34);
    check("mul", [&](Tape& t, const Tensor& v) {
      return sum(t, mul(t, v, m34));
    }, m34);
    check("scale", [&](Tape& t, const Tensor& v) {
      return sum(t, mul(t, scale(t, v, -2.5), v));
    }, m34);
    check("matmul_lhs", [&](Tape& t, const Tensor& v) {
      const Tensor p = matmul(t, v, m43);
      return sum(t, mul(t, p, p));
    }, m34);
    check("matmul_rhs", [&](Tape& t, const Tensor& v) {
      const Tensor p = matmul(t, m34, v);
      return sum(t, mul(t, p, p));
    }, m43);
    check("transpose", [&](Tape& t, const Tensor& v) {
      const Tensor p = matmul(t, v, transpose(t, v));
      return sum(t, mul(t, p, p));
    }, m34);
    check("relu", [&](Tape& t, const Tensor& v) {
      const Tensor r = relu(t, v);
      return sum(t, mul(t, r, r));
    }, m34);
    check("sigmoid", [&](Tape& t, const Tensor& v) {
      const Tensor r = sigmoid(t, v);
      return sum(t, mul(t, r, r));
    }, m34);
    check("gelu", [&](Tape& t, const Tensor& v) {
      const Tensor r = gelu(t, v);
      return sum(t, mul(t, r, r));
    }, m34);
    check("softmax_rows", [&](Tape& t, const Tensor& v) {
      const Tensor s = softmax_rows(t, v);
      return sum(t, mul(t, s, s));
    }, m34);
    check("layer_norm_x", [&](Tape& t, const Tensor& v) {
      Rng r2(99);
      const Tensor gamma = random_tensor(r2, {4});
      const Tensor beta = random_tensor(r2, {4});
      const Tensor o = layer_norm(t, v, gamma, beta, 1e-5);
      return sum(t, mul(t, o, o));
    }, m34);
    check("layer_norm_gamma", [&](Tape& t, const Tensor& v) {
      const Tensor beta = Tensor::zeros({4});
      const Tensor o = layer_norm(t, m34, v, beta, 1e-5);
      return sum(t, mul(t, o, o));
    }, random_tensor(rng, {4}));
    check("add_bias_rows", [&](Tape& t, const Tensor& v) {
      const Tensor o = add_bias_rows(t, m34, v);
      return sum(t, mul(t, o, o));
    }, random_tensor(rng, {4}));
    check("mean_rows", [&](Tape& t, const Tensor& v) {
      const Tensor o = mean_rows(t, v);
      return sum(t, mul(t, o, o));
    }, m34);
    check("reshape", [&](Tape& t, const Tensor& v) {
      const Tensor o = reshape(t, v, {4, 3});
      return sum(t, mul(t, o, o));
    }, m34);
    check("to_rows", [&](Tape& t, const Tensor& v) {
      const Tensor o = to_rows(t, v);
      return sum(t, mul(t, o, o));
    }, fmap);
    check("conv1x1_x", [&](Tape& t, const Tensor& v) {
      Rng r2(98);
      const Tensor w = random_tensor(r2, {2, 3});
      const Tensor b = random_tensor(r2, {2});
      const Tensor o = conv1x1(t, v, w, b);
      return sum(t, mul(t, o, o));
    }, fmap);
    check("conv1x1_w", [&](Tape& t, const Tensor& v) {
      Rng r2(97);
      const Tensor b = random_tensor(r2, {2});
      const Tensor o = conv1x1(t, fmap, v, b);
      return sum(t, mul(t, o, o));
    }, random_tensor(rng, {2, 3}));
    check("conv3x3_s2_x", [&](Tape& t, const Tensor& v) {
      Rng r2(96);
      const Tensor w = random_tensor(r2, {2, 3, 3, 3});
      const Tensor b = random_tensor(r2, {2});
      const Tensor o = conv3x3_s2(t, v, w, b);
      return sum(t, mul(t, o, o));
    }, fmap);
    check("conv3x3_s2_w", [&](Tape& t, const Tensor& v) {
      Rng r2(95);
      const Tensor b = random_tensor(r2, {2});
      const Tensor o = conv3x3_s2(t, fmap, v, b);
      return sum(t, mul(t, o, o));
    }, random_tensor(rng, {2, 3, 3, 3}));
    check("conv3x3_s2_b", [&](Tape& t, const Tensor& v) {
      Rng r2(94);
      const Tensor w = random_tensor(r2, {2, 3, 3, 3});
      const Tensor o = conv3x3_s2(t, fmap, w, v);
      return sum(t, mul(t, o, o));
    }, random_tensor(rng, {2}));
    check("stack_and_channel_max", [&](Tape& t, const Tensor& v) {
      const Tensor m0 = reshape(t, v, {1, 4, 4});
      const Tensor m1 = scale(t, m0, 0.5);
      const Tensor st = stack_maps(t, {m0, m1});
      const Tensor mx = channel_max(t, st);
      return sum(t, mul(t, mx, mx));
    }, random_tensor(rng, {4, 4}));
    check("zero_channel", [&](Tape& t, const Tensor& v) {
      const Tensor z = zero_channel(t, v, 1);
      return sum(t, mul(t, z, z));
    }, random_tensor(rng, {3, 2, 2}));
    check("spatial_gate_x", [&](Tape& t, const Tensor& v) {
      Rng r2(93);
      const Tensor gate = random_tensor(r2, {4, 4});
      const Tensor o = spatial_gate(t, v, gate);
      return sum(t, mul(t, o, o));
    }, fmap);
    check("spatial_gate_m", [&](Tape& t, const Tensor& v) {
      const Tensor o = spatial_gate(t, fmap, v);
      return sum(t, mul(t, o, o));
    }, random_tensor(rng, {4, 4}));
    check("concat_cols", [&](Tape& t, const Tensor& v) {
      const Tensor o = concat_cols(t, {v, scale(t, v, 2.0), m34});
      return sum(t, mul(t, o, o));
    }, m34);
    check("cross_entropy", [&](Tape& t, const Tensor& v) {
      return cross_entropy(t, v, 1);
    }, random_tensor(rng, {3}));
  }
}

TEST_CASE("gradients accumulate across fan-out") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1.0, 2.0});
  x.requires_grad = true;
  const Tensor leaf = tape.leaf(x);
  // loss = sum(x) + sum(2x): gradient should be 3 everywhere.
  const Tensor loss = add(tape, sum(tape, leaf), sum(tape, scale(tape, leaf, 2.0)));
  const GradMap grads = tape.backward(loss);
  const Tensor* g = grads.find(leaf.node);
  REQUIRE(g != nullptr);
  for (double v : g->data) CHECK(v == 3.0);
}

TEST_CASE("deterministic tensors from identical seeds") {
  Rng a(9), b(9);
  const Tensor ta = Tensor::random_normal(a, {4, 4}, 1.0);
  const Tensor tb = Tensor::random_normal(b, {4, 4}, 1.0);
  CHECK(ta.data == tb.data);
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(31);
  Tape tape(false);
  const Tensor x = random_tensor(rng, {4, 4}, 50.0);
  CHECK(softmax_rows(tape, x).all_finite());
  CHECK(gelu(tape, x).all_finite());
  CHECK(sigmoid(tape, x).all_finite());
  const Tensor g1 = Tensor::full({4}, 1.0);
  const Tensor b0 = Tensor::zeros({4});
  CHECK(layer_norm(tape, x, g1, b0, 1e-5).all_finite());
}
