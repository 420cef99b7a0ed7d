#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "maf/rng.hpp"

namespace maf {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major tensor of doubles. Tensors are plain values: copying one
// copies its data, and nothing here is shared or mutated behind your back.
// `node` ties a tensor to the tape that produced it (-1 when untracked).
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  int node = -1;

  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double value);
  static Tensor from(Shape s, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor random_normal(Rng& rng, Shape s, double stddev);

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double& at(int i);
  double& at(int i, int j);
  double& at(int i, int j, int k);
  double at(int i) const;
  double at(int i, int j) const;
  double at(int i, int j, int k) const;

  // The single element of a scalar (numel() == 1).
  double value() const;

  bool all_finite() const;
};

// A feature map is a rank-3 tensor laid out channels x height x width.
using FeatureMap = Tensor;

// Gradients keyed by tape node id. Slots start empty and are created as
// zero tensors the first time a backward rule accumulates into them.
class GradMap {
 public:
  GradMap() = default;
  explicit GradMap(std::size_t node_count) : grads_(node_count) {}

  Tensor& accumulate(int node, const Shape& shape);
  const Tensor* find(int node) const;
  bool has(int node) const { return find(node) != nullptr; }

 private:
  std::vector<std::optional<Tensor>> grads_;
};

// Reverse-mode tape. Forward ops append nodes in execution order, which is
// already a topological order, so backward() is a single reverse sweep.
// A tape is built per forward pass and discarded afterwards; it is owned by
// one thread at a time.
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, GradMap& grads)>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Registers a copy of `t` as a leaf. The copy gets a node id when the
  // tape records and the tensor wants gradients; otherwise it stays -1.
  Tensor leaf(const Tensor& t);

  int record(const char* op, std::vector<int> inputs, Shape out_shape,
             BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Leaves that
  // the loss never reached come back as zero tensors of the leaf shape.
  GradMap backward(const Tensor& loss) const;

 private:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    Shape shape;
    BackwardFn backward;  // empty for leaves
  };

  bool recording_ = true;
  std::vector<Node> nodes_;
  std::vector<int> leaf_ids_;
};

// ---- Forward operations (all record their backward rule on the tape) ----

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);

// Per-pixel linear map over the channel dimension of a C x H x W map.
Tensor conv1x1(Tape& tape, const FeatureMap& x, const Tensor& w, const Tensor& b);
// 3x3 convolution, stride 2, zero padding 1. Halves the spatial size
// (rounding up), which is all the backbone needs.
Tensor conv3x3_s2(Tape& tape, const FeatureMap& x, const Tensor& w, const Tensor& b);

// Output extent of a 3x3 stride-2 pad-1 convolution along one axis.
inline int conv_stride2_extent(int in) { return (in - 1) / 2 + 1; }

enum class Activation { kRelu, kSigmoid, kGelu };

Tensor activation(Tape& tape, Activation kind, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
// Exact Gaussian-CDF form x * Phi(x).
Tensor gelu(Tape& tape, const Tensor& x);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(Tape& tape, const Tensor& x);
// Row-wise normalization to zero mean / unit variance, then gamma, beta.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps);

Tensor add_bias_rows(Tape& tape, const Tensor& x, const Tensor& b);
// Mean over the rows of an M x K matrix, returned as a 1 x K row.
Tensor mean_rows(Tape& tape, const Tensor& x);
Tensor sum(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape);

// C x H x W -> HW x C with spatial positions flattened row-major.
Tensor to_rows(Tape& tape, const FeatureMap& x);

// N single-channel maps (1 x H x W) concatenated into an N x H x W stack.
Tensor stack_maps(Tape& tape, const std::vector<Tensor>& maps);
// Copy of the stack with one channel forced to zero.
Tensor zero_channel(Tape& tape, const Tensor& stack, int channel);
// Max over the channel dimension; ties route the gradient to the lowest index.
Tensor channel_max(Tape& tape, const Tensor& stack);
// out[c,h,w] = x[c,h,w] * gate[h,w]
Tensor spatial_gate(Tape& tape, const FeatureMap& x, const Tensor& gate);

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);

// -log softmax(logits)[label]; logits may be rank 1 or a single row.
Tensor cross_entropy(Tape& tape, const Tensor& logits, int label);

// Central finite differences against the tape gradient of f. Returns the
// max relative error with a max(1, |analytic|) denominator. f must produce
// a scalar and must work on a non-recording tape.
using TensorFn = std::function<Tensor(Tape&, const Tensor&)>;
double check_gradients(const TensorFn& f, const Tensor& x, double h);

}  // namespace maf
