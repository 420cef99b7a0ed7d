#include "maf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace maf {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << 'x';
    out << s[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    require(d > 0, "shape dimensions must be positive, got " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(Shape s) {
  Tensor t;
  t.data.assign(shape_numel(s), 0.0);
  t.shape = std::move(s);
  return t;
}

Tensor Tensor::full(Shape s, double value) {
  Tensor t = zeros(std::move(s));
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> values) {
  require(shape_numel(s) == values.size(),
          "element count " + std::to_string(values.size()) +
              " does not match shape " + shape_str(s));
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.data.assign(1, value);
  return t;
}

Tensor Tensor::random_normal(Rng& rng, Shape s, double stddev) {
  Tensor t = zeros(std::move(s));
  for (double& v : t.data) v = stddev * rng.next_normal();
  return t;
}

double& Tensor::at(int i) {
  return data[static_cast<std::size_t>(i)];
}

double& Tensor::at(int i, int j) {
  return data[static_cast<std::size_t>(i) * shape[1] + j];
}

double& Tensor::at(int i, int j, int k) {
  return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
}

double Tensor::at(int i) const {
  return data[static_cast<std::size_t>(i)];
}

double Tensor::at(int i, int j) const {
  return data[static_cast<std::size_t>(i) * shape[1] + j];
}

double Tensor::at(int i, int j, int k) const {
  return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
}

double Tensor::value() const {
  require(numel() == 1, "value() needs a scalar, got " + shape_str(shape));
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor& GradMap::accumulate(int node, const Shape& shape) {
  auto& slot = grads_[static_cast<std::size_t>(node)];
  if (!slot) slot = Tensor::zeros(shape);
  return *slot;
}

const Tensor* GradMap::find(int node) const {
  if (node < 0 || static_cast<std::size_t>(node) >= grads_.size()) return nullptr;
  const auto& slot = grads_[static_cast<std::size_t>(node)];
  return slot ? &*slot : nullptr;
}

Tensor Tape::leaf(const Tensor& t) {
  Tensor out = t;
  out.node = -1;
  if (recording_ && t.requires_grad) {
    out.node = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{"leaf", {}, out.shape, {}});
    leaf_ids_.push_back(out.node);
  }
  return out;
}

int Tape::record(const char* op, std::vector<int> inputs, Shape out_shape,
                 BackwardFn fn) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{op, std::move(inputs), std::move(out_shape), std::move(fn)});
  return id;
}

GradMap Tape::backward(const Tensor& loss) const {
  require(loss.numel() == 1,
          "backward needs a scalar loss, got " + shape_str(loss.shape));
  require(loss.node >= 0 && static_cast<std::size_t>(loss.node) < nodes_.size(),
          "backward: loss is not on this tape");
  GradMap grads(nodes_.size());
  grads.accumulate(loss.node, loss.shape).data[0] = 1.0;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward) continue;
    const Tensor* g = grads.find(id);
    if (!g) continue;
    n.backward(*g, grads);
  }
  // Leaves the loss never reached still report a (zero) gradient.
  for (int id : leaf_ids_) {
    grads.accumulate(id, nodes_[static_cast<std::size_t>(id)].shape);
  }
  return grads;
}

namespace {

bool tracked(const Tape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.recording()) return false;
  for (const Tensor* t : ins) {
    if (t->node >= 0) return true;
  }
  return false;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
  for (const Tensor* t : ins) {
    if (t->requires_grad) return true;
  }
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, std::string(op) + ": shape mismatch " +
                                  shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = a.data[i] + b.data[i];
  }
  out.requires_grad = any_requires_grad({&a, &b});
  if (tracked(tape, {&a, &b})) {
    const int an = a.node, bn = b.node;
    const Shape sh = a.shape;
    out.node = tape.record("add", {an, bn}, sh,
                           [an, bn, sh](const Tensor& g, GradMap& grads) {
                             if (an >= 0) {
                               Tensor& da = grads.accumulate(an, sh);
                               for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
                             }
                             if (bn >= 0) {
                               Tensor& db = grads.accumulate(bn, sh);
                               for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i];
                             }
                           });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = a.data[i] * b.data[i];
  }
  out.requires_grad = any_requires_grad({&a, &b});
  if (tracked(tape, {&a, &b})) {
    const int an = a.node, bn = b.node;
    const Tensor av = a, bv = b;
    out.node = tape.record("mul", {an, bn}, a.shape,
                           [an, bn, av, bv](const Tensor& g, GradMap& grads) {
                             if (an >= 0) {
                               Tensor& da = grads.accumulate(an, av.shape);
                               for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * bv.data[i];
                             }
                             if (bn >= 0) {
                               Tensor& db = grads.accumulate(bn, bv.shape);
                               for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i] * av.data[i];
                             }
                           });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  Tensor out = a;
  out.node = -1;
  for (double& v : out.data) v *= factor;
  if (tracked(tape, {&a})) {
    const int an = a.node;
    const Shape sh = a.shape;
    out.node = tape.record("scale", {an}, sh,
                           [an, sh, factor](const Tensor& g, GradMap& grads) {
                             Tensor& da = grads.accumulate(an, sh);
                             for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += factor * g.data[i];
                           });
  }
  return out;
}

namespace {

// c[m x p] += a[m x k] * b[k x p], optionally transposing either operand.
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int p) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * p;
    for (int l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(l) * p;
      for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x p] += a[m x k] * b[p x k]^T
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int p) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * p;
    for (int j = 0; j < p; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// c[k x p] += a[m x k]^T * b[m x p]
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int p) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* brow = b + static_cast<std::size_t>(i) * p;
    for (int l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(l) * p;
      for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[0],
          "matmul: incompatible shapes " + shape_str(a.shape) + " and " +
              shape_str(b.shape));
  const int m = a.shape[0], k = a.shape[1], p = b.shape[1];
  Tensor out = Tensor::zeros({m, p});
  matmul_acc(a.data.data(), b.data.data(), out.data.data(), m, k, p);
  out.requires_grad = any_requires_grad({&a, &b});
  if (tracked(tape, {&a, &b})) {
    const int an = a.node, bn = b.node;
    const Tensor av = a, bv = b;
    out.node = tape.record(
        "matmul", {an, bn}, out.shape,
        [an, bn, av, bv, m, k, p](const Tensor& g, GradMap& grads) {
          if (an >= 0) {
            Tensor& da = grads.accumulate(an, av.shape);
            matmul_nt_acc(g.data.data(), bv.data.data(), da.data.data(), m, p, k);
          }
          if (bn >= 0) {
            Tensor& db = grads.accumulate(bn, bv.shape);
            matmul_tn_acc(av.data.data(), g.data.data(), db.data.data(), m, k, p);
          }
        });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require(a.rank() == 2, "transpose: needs a matrix, got " + shape_str(a.shape));
  const int m = a.shape[0], k = a.shape[1];
  Tensor out = Tensor::zeros({k, m});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) out.at(j, i) = a.at(i, j);
  }
  out.requires_grad = a.requires_grad;
  if (tracked(tape, {&a})) {
    const int an = a.node;
    out.node = tape.record("transpose", {an}, out.shape,
                           [an, m, k](const Tensor& g, GradMap& grads) {
                             Tensor& da = grads.accumulate(an, {m, k});
                             for (int i = 0; i < m; ++i) {
                               for (int j = 0; j < k; ++j) da.at(i, j) += g.at(j, i);
                             }
                           });
  }
  return out;
}

Tensor conv1x1(Tape& tape, const FeatureMap& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 3, "conv1x1: input must be CxHxW, got " + shape_str(x.shape));
  require(w.rank() == 2 && b.rank() == 1 && w.shape[1] == x.shape[0] &&
              w.shape[0] == b.shape[0],
          "conv1x1: weight " + shape_str(w.shape) + " / bias " + shape_str(b.shape) +
              " do not match input " + shape_str(x.shape));
  const int ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
  const int co = w.shape[0];
  const int hw = h * wd;
  Tensor out = Tensor::zeros({co, h, wd});
  for (int o = 0; o < co; ++o) {
    double* orow = out.data.data() + static_cast<std::size_t>(o) * hw;
    for (int p = 0; p < hw; ++p) orow[p] = b.data[static_cast<std::size_t>(o)];
    for (int c = 0; c < ci; ++c) {
      const double wv = w.at(o, c);
      if (wv == 0.0) continue;
      const double* xrow = x.data.data() + static_cast<std::size_t>(c) * hw;
      for (int p = 0; p < hw; ++p) orow[p] += wv * xrow[p];
    }
  }
  out.requires_grad = any_requires_grad({&x, &w, &b});
  if (tracked(tape, {&x, &w, &b})) {
    const int xn = x.node, wn = w.node, bn = b.node;
    const Tensor xv = x, wv = w;
    out.node = tape.record(
        "conv1x1", {xn, wn, bn}, out.shape,
        [xn, wn, bn, xv, wv, ci, co, hw](const Tensor& g, GradMap& grads) {
          if (xn >= 0) {
            Tensor& dx = grads.accumulate(xn, xv.shape);
            for (int o = 0; o < co; ++o) {
              const double* grow = g.data.data() + static_cast<std::size_t>(o) * hw;
              for (int c = 0; c < ci; ++c) {
                const double w_oc = wv.at(o, c);
                if (w_oc == 0.0) continue;
                double* dxrow = dx.data.data() + static_cast<std::size_t>(c) * hw;
                for (int p = 0; p < hw; ++p) dxrow[p] += w_oc * grow[p];
              }
            }
          }
          if (wn >= 0) {
            Tensor& dw = grads.accumulate(wn, wv.shape);
            for (int o = 0; o < co; ++o) {
              const double* grow = g.data.data() + static_cast<std::size_t>(o) * hw;
              for (int c = 0; c < ci; ++c) {
                const double* xrow = xv.data.data() + static_cast<std::size_t>(c) * hw;
                double acc = 0.0;
                for (int p = 0; p < hw; ++p) acc += grow[p] * xrow[p];
                dw.at(o, c) += acc;
              }
            }
          }
          if (bn >= 0) {
            Tensor& db = grads.accumulate(bn, {co});
            for (int o = 0; o < co; ++o) {
              const double* grow = g.data.data() + static_cast<std::size_t>(o) * hw;
              double acc = 0.0;
              for (int p = 0; p < hw; ++p) acc += grow[p];
              db.data[static_cast<std::size_t>(o)] += acc;
            }
          }
        });
  }
  return out;
}

Tensor conv3x3_s2(Tape& tape, const FeatureMap& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 3, "conv3x3_s2: input must be CxHxW, got " + shape_str(x.shape));
  require(w.rank() == 4 && w.shape[1] == x.shape[0] && w.shape[2] == 3 &&
              w.shape[3] == 3 && b.rank() == 1 && b.shape[0] == w.shape[0],
          "conv3x3_s2: weight " + shape_str(w.shape) + " / bias " +
              shape_str(b.shape) + " do not match input " + shape_str(x.shape));
  const int ci = x.shape[0], ih = x.shape[1], iw = x.shape[2];
  const int co = w.shape[0];
  const int oh = conv_stride2_extent(ih), ow = conv_stride2_extent(iw);
  Tensor out = Tensor::zeros({co, oh, ow});
  auto widx = [ci](int o, int c, int kh, int kw) {
    return ((static_cast<std::size_t>(o) * ci + c) * 3 + kh) * 3 + kw;
  };
  for (int o = 0; o < co; ++o) {
    for (int r = 0; r < oh; ++r) {
      for (int s = 0; s < ow; ++s) {
        double acc = b.data[static_cast<std::size_t>(o)];
        for (int c = 0; c < ci; ++c) {
          for (int kh = 0; kh < 3; ++kh) {
            const int ir = 2 * r + kh - 1;
            if (ir < 0 || ir >= ih) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int is = 2 * s + kw - 1;
              if (is < 0 || is >= iw) continue;
              acc += w.data[widx(o, c, kh, kw)] * x.at(c, ir, is);
            }
          }
        }
        out.at(o, r, s) = acc;
      }
    }
  }
  out.requires_grad = any_requires_grad({&x, &w, &b});
  if (tracked(tape, {&x, &w, &b})) {
    const int xn = x.node, wn = w.node, bn = b.node;
    const Tensor xv = x, wv = w;
    out.node = tape.record(
        "conv3x3_s2", {xn, wn, bn}, out.shape,
        [xn, wn, bn, xv, wv, ci, co, ih, iw, oh, ow, widx](const Tensor& g,
                                                           GradMap& grads) {
          Tensor* dx = xn >= 0 ? &grads.accumulate(xn, xv.shape) : nullptr;
          Tensor* dw = wn >= 0 ? &grads.accumulate(wn, wv.shape) : nullptr;
          Tensor* db = bn >= 0 ? &grads.accumulate(bn, {co}) : nullptr;
          for (int o = 0; o < co; ++o) {
            for (int r = 0; r < oh; ++r) {
              for (int s = 0; s < ow; ++s) {
                const double gv = g.at(o, r, s);
                if (db) db->data[static_cast<std::size_t>(o)] += gv;
                if (gv == 0.0) continue;
                for (int c = 0; c < ci; ++c) {
                  for (int kh = 0; kh < 3; ++kh) {
                    const int ir = 2 * r + kh - 1;
                    if (ir < 0 || ir >= ih) continue;
                    for (int kw = 0; kw < 3; ++kw) {
                      const int is = 2 * s + kw - 1;
                      if (is < 0 || is >= iw) continue;
                      if (dx) dx->at(c, ir, is) += wv.data[widx(o, c, kh, kw)] * gv;
                      if (dw) dw->data[widx(o, c, kh, kw)] += xv.at(c, ir, is) * gv;
                    }
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

namespace {

double gelu_scalar(double v) {
  return v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
}

double gelu_grad_scalar(double v) {
  const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
  return cdf + v * pdf;
}

}  // namespace

Tensor activation(Tape& tape, Activation kind, const Tensor& x) {
  Tensor out = x;
  out.node = -1;
  switch (kind) {
    case Activation::kRelu:
      for (double& v : out.data) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::kSigmoid:
      for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
      break;
    case Activation::kGelu:
      for (double& v : out.data) v = gelu_scalar(v);
      break;
  }
  if (tracked(tape, {&x})) {
    const int xn = x.node;
    // relu/gelu differentiate through the input, sigmoid through the output.
    const Tensor saved = kind == Activation::kSigmoid ? out : x;
    out.node = tape.record(
        "activation", {xn}, x.shape,
        [xn, kind, saved](const Tensor& g, GradMap& grads) {
          Tensor& dx = grads.accumulate(xn, saved.shape);
          switch (kind) {
            case Activation::kRelu:
              for (std::size_t i = 0; i < g.data.size(); ++i) {
                if (saved.data[i] > 0.0) dx.data[i] += g.data[i];
              }
              break;
            case Activation::kSigmoid:
              for (std::size_t i = 0; i < g.data.size(); ++i) {
                const double s = saved.data[i];
                dx.data[i] += g.data[i] * s * (1.0 - s);
              }
              break;
            case Activation::kGelu:
              for (std::size_t i = 0; i < g.data.size(); ++i) {
                dx.data[i] += g.data[i] * gelu_grad_scalar(saved.data[i]);
              }
              break;
          }
        });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) { return activation(tape, Activation::kRelu, x); }
Tensor sigmoid(Tape& tape, const Tensor& x) { return activation(tape, Activation::kSigmoid, x); }
Tensor gelu(Tape& tape, const Tensor& x) { return activation(tape, Activation::kGelu, x); }

Tensor softmax_rows(Tape& tape, const Tensor& x) {
  require(x.rank() == 2, "softmax_rows: needs a matrix, got " + shape_str(x.shape));
  const int m = x.shape[0], k = x.shape[1];
  Tensor out = Tensor::zeros({m, k});
  for (int i = 0; i < m; ++i) {
    const double* row = x.data.data() + static_cast<std::size_t>(i) * k;
    double* orow = out.data.data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < k; ++j) orow[j] /= denom;
  }
  out.requires_grad = x.requires_grad;
  if (tracked(tape, {&x})) {
    const int xn = x.node;
    const Tensor sv = out;
    out.node = tape.record(
        "softmax_rows", {xn}, out.shape,
        [xn, sv, m, k](const Tensor& g, GradMap& grads) {
          Tensor& dx = grads.accumulate(xn, sv.shape);
          for (int i = 0; i < m; ++i) {
            const double* srow = sv.data.data() + static_cast<std::size_t>(i) * k;
            const double* grow = g.data.data() + static_cast<std::size_t>(i) * k;
            double dot = 0.0;
            for (int j = 0; j < k; ++j) dot += srow[j] * grow[j];
            double* drow = dx.data.data() + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) drow[j] += srow[j] * (grow[j] - dot);
          }
        });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  require(x.rank() == 2, "layer_norm: needs a matrix, got " + shape_str(x.shape));
  require(eps > 0.0, "layer_norm: eps must be positive");
  const int m = x.shape[0], k = x.shape[1];
  require(gamma.rank() == 1 && gamma.shape[0] == k && beta.rank() == 1 &&
              beta.shape[0] == k,
          "layer_norm: affine params " + shape_str(gamma.shape) + ", " +
              shape_str(beta.shape) + " do not match row width " + std::to_string(k));
  Tensor out = Tensor::zeros({m, k});
  Tensor xhat = Tensor::zeros({m, k});
  std::vector<double> inv_std(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = x.data.data() + static_cast<std::size_t>(i) * k;
    double mean = 0.0;
    for (int j = 0; j < k; ++j) mean += row[j];
    mean /= k;
    double var = 0.0;
    for (int j = 0; j < k; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= k;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < k; ++j) {
      const double xh = (row[j] - mean) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = gamma.data[static_cast<std::size_t>(j)] * xh +
                     beta.data[static_cast<std::size_t>(j)];
    }
  }
  out.requires_grad = any_requires_grad({&x, &gamma, &beta});
  if (tracked(tape, {&x, &gamma, &beta})) {
    const int xn = x.node, gn = gamma.node, bn = beta.node;
    const Tensor gv = gamma;
    out.node = tape.record(
        "layer_norm", {xn, gn, bn}, out.shape,
        [xn, gn, bn, gv, xhat, inv_std, m, k](const Tensor& g, GradMap& grads) {
          if (gn >= 0) {
            Tensor& dgamma = grads.accumulate(gn, {k});
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < k; ++j) {
                dgamma.data[static_cast<std::size_t>(j)] += g.at(i, j) * xhat.at(i, j);
              }
            }
          }
          if (bn >= 0) {
            Tensor& dbeta = grads.accumulate(bn, {k});
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < k; ++j) {
                dbeta.data[static_cast<std::size_t>(j)] += g.at(i, j);
              }
            }
          }
          if (xn >= 0) {
            Tensor& dx = grads.accumulate(xn, Shape{m, k});
            for (int i = 0; i < m; ++i) {
              // dxhat = g * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
              double mean_dxh = 0.0, mean_dxh_xh = 0.0;
              for (int j = 0; j < k; ++j) {
                const double dxh = g.at(i, j) * gv.data[static_cast<std::size_t>(j)];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xhat.at(i, j);
              }
              mean_dxh /= k;
              mean_dxh_xh /= k;
              const double is = inv_std[static_cast<std::size_t>(i)];
              for (int j = 0; j < k; ++j) {
                const double dxh = g.at(i, j) * gv.data[static_cast<std::size_t>(j)];
                dx.at(i, j) += (dxh - mean_dxh - xhat.at(i, j) * mean_dxh_xh) * is;
              }
            }
          }
        });
  }
  return out;
}

Tensor add_bias_rows(Tape& tape, const Tensor& x, const Tensor& b) {
  require(x.rank() == 2 && b.rank() == 1 && b.shape[0] == x.shape[1],
          "add_bias_rows: bias " + shape_str(b.shape) + " does not match " +
              shape_str(x.shape));
  const int m = x.shape[0], k = x.shape[1];
  Tensor out = x;
  out.node = -1;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) out.at(i, j) += b.data[static_cast<std::size_t>(j)];
  }
  out.requires_grad = any_requires_grad({&x, &b});
  if (tracked(tape, {&x, &b})) {
    const int xn = x.node, bn = b.node;
    out.node = tape.record(
        "add_bias_rows", {xn, bn}, out.shape,
        [xn, bn, m, k](const Tensor& g, GradMap& grads) {
          if (xn >= 0) {
            Tensor& dx = grads.accumulate(xn, Shape{m, k});
            for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
          }
          if (bn >= 0) {
            Tensor& db = grads.accumulate(bn, {k});
            for (int i = 0; i < m; ++i) {
              for (int j = 0; j < k; ++j) db.data[static_cast<std::size_t>(j)] += g.at(i, j);
            }
          }
        });
  }
  return out;
}

Tensor mean_rows(Tape& tape, const Tensor& x) {
  require(x.rank() == 2, "mean_rows: needs a matrix, got " + shape_str(x.shape));
  const int m = x.shape[0], k = x.shape[1];
  Tensor out = Tensor::zeros({1, k});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < k; ++j) out.data[static_cast<std::size_t>(j)] += x.at(i, j);
  }
  for (double& v : out.data) v /= m;
  out.requires_grad = x.requires_grad;
  if (tracked(tape, {&x})) {
    const int xn = x.node;
    out.node = tape.record("mean_rows", {xn}, out.shape,
                           [xn, m, k](const Tensor& g, GradMap& grads) {
                             Tensor& dx = grads.accumulate(xn, Shape{m, k});
                             for (int i = 0; i < m; ++i) {
                               for (int j = 0; j < k; ++j) {
                                 dx.at(i, j) += g.data[static_cast<std::size_t>(j)] / m;
                               }
                             }
                           });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data) total += v;
  Tensor out = Tensor::scalar(total);
  out.requires_grad = x.requires_grad;
  if (tracked(tape, {&x})) {
    const int xn = x.node;
    const Shape sh = x.shape;
    out.node = tape.record("sum", {xn}, out.shape,
                           [xn, sh](const Tensor& g, GradMap& grads) {
                             Tensor& dx = grads.accumulate(xn, sh);
                             for (double& v : dx.data) v += g.data[0];
                           });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  require(shape_numel(new_shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape) + " as " +
              shape_str(new_shape));
  Tensor out = x;
  out.node = -1;
  out.shape = new_shape;
  if (tracked(tape, {&x})) {
    const int xn = x.node;
    const Shape sh = x.shape;
    out.node = tape.record("reshape", {xn}, new_shape,
                           [xn, sh](const Tensor& g, GradMap& grads) {
                             Tensor& dx = grads.accumulate(xn, sh);
                             for (std::size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
                           });
  }
  return out;
}

Tensor to_rows(Tape& tape, const FeatureMap& x) {
  require(x.rank() == 3, "to_rows: input must be CxHxW, got " + shape_str(x.shape));
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int hw = h * w;
  Tensor out = Tensor::zeros({hw, c});
  for (int ch = 0; ch < c; ++ch) {
    for (int p = 0; p < hw; ++p) out.at(p, ch) = x.data[static_cast<std::size_t>(ch) * hw + p];
  }
  out.requires_grad = x.requires_grad;
  if (tracked(tape, {&x})) {
    const int xn = x.node;
    out.node = tape.record("to_rows", {xn}, out.shape,
                           [xn, c, h, w, hw](const Tensor& g, GradMap& grads) {
                             Tensor& dx = grads.accumulate(xn, Shape{c, h, w});
                             for (int ch = 0; ch < c; ++ch) {
                               for (int p = 0; p < hw; ++p) {
                                 dx.data[static_cast<std::size_t>(ch) * hw + p] += g.at(p, ch);
                               }
                             }
                           });
  }
  return out;
}

Tensor stack_maps(Tape& tape, const std::vector<Tensor>& maps) {
  require(!maps.empty(), "stack_maps: need at least one map");
  const Tensor& first = maps.front();
  require(first.rank() == 3 && first.shape[0] == 1,
          "stack_maps: maps must be 1xHxW, got " + shape_str(first.shape));
  const int h = first.shape[1], w = first.shape[2];
  const int n = static_cast<int>(maps.size());
  const int hw = h * w;
  Tensor out = Tensor::zeros({n, h, w});
  std::vector<int> in_nodes;
  bool any_node = false;
  for (int i = 0; i < n; ++i) {
    require(maps[static_cast<std::size_t>(i)].shape == first.shape,
            "stack_maps: inconsistent map shapes");
    const auto& m = maps[static_cast<std::size_t>(i)];
    std::copy(m.data.begin(), m.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i) * hw);
    in_nodes.push_back(m.node);
    any_node = any_node || m.node >= 0;
    out.requires_grad = out.requires_grad || m.requires_grad;
  }
  if (tape.recording() && any_node) {
    out.node = tape.record(
        "stack_maps", in_nodes, out.shape,
        [in_nodes, h, w, hw](const Tensor& g, GradMap& grads) {
          for (std::size_t i = 0; i < in_nodes.size(); ++i) {
            if (in_nodes[i] < 0) continue;
            Tensor& dm = grads.accumulate(in_nodes[i], Shape{1, h, w});
            const double* gp = g.data.data() + i * static_cast<std::size_t>(hw);
            for (int p = 0; p < hw; ++p) dm.data[static_cast<std::size_t>(p)] += gp[p];
          }
        });
  }
  return out;
}

Tensor zero_channel(Tape& tape, const Tensor& stack, int channel) {
  require(stack.rank() == 3, "zero_channel: needs NxHxW, got " + shape_str(stack.shape));
  require(channel >= 0 && channel < stack.shape[0],
          "zero_channel: channel " + std::to_string(channel) + " out of range for " +
              shape_str(stack.shape));
  const int hw = stack.shape[1] * stack.shape[2];
  Tensor out = stack;
  out.node = -1;
  std::fill(out.data.begin() + static_cast<std::ptrdiff_t>(channel) * hw,
            out.data.begin() + static_cast<std::ptrdiff_t>(channel + 1) * hw, 0.0);
  if (tracked(tape, {&stack})) {
    const int sn = stack.node;
    const Shape sh = stack.shape;
    out.node = tape.record(
        "zero_channel", {sn}, sh,
        [sn, sh, channel, hw](const Tensor& g, GradMap& grads) {
          Tensor& ds = grads.accumulate(sn, sh);
          const std::size_t lo = static_cast<std::size_t>(channel) * hw;
          const std::size_t hi = lo + static_cast<std::size_t>(hw);
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            if (i >= lo && i < hi) continue;
            ds.data[i] += g.data[i];
          }
        });
  }
  return out;
}

Tensor channel_max(Tape& tape, const Tensor& stack) {
  require(stack.rank() == 3, "channel_max: needs NxHxW, got " + shape_str(stack.shape));
  const int n = stack.shape[0], h = stack.shape[1], w = stack.shape[2];
  const int hw = h * w;
  Tensor out = Tensor::zeros({h, w});
  std::vector<int> argmax(static_cast<std::size_t>(hw), 0);
  for (int p = 0; p < hw; ++p) {
    double best = stack.data[static_cast<std::size_t>(p)];
    int best_n = 0;
    for (int c = 1; c < n; ++c) {
      const double v = stack.data[static_cast<std::size_t>(c) * hw + p];
      if (v > best) {
        best = v;
        best_n = c;
      }
    }
    out.data[static_cast<std::size_t>(p)] = best;
    argmax[static_cast<std::size_t>(p)] = best_n;
  }
  out.requires_grad = stack.requires_grad;
  if (tracked(tape, {&stack})) {
    const int sn = stack.node;
    const Shape sh = stack.shape;
    out.node = tape.record("channel_max", {sn}, out.shape,
                           [sn, sh, argmax, hw](const Tensor& g, GradMap& grads) {
                             Tensor& ds = grads.accumulate(sn, sh);
                             for (int p = 0; p < hw; ++p) {
                               const std::size_t c = static_cast<std::size_t>(
                                   argmax[static_cast<std::size_t>(p)]);
                               ds.data[c * hw + p] += g.data[static_cast<std::size_t>(p)];
                             }
                           });
  }
  return out;
}

Tensor spatial_gate(Tape& tape, const FeatureMap& x, const Tensor& gate) {
  require(x.rank() == 3 && gate.rank() == 2 && gate.shape[0] == x.shape[1] &&
              gate.shape[1] == x.shape[2],
          "spatial_gate: gate " + shape_str(gate.shape) + " does not match " +
              shape_str(x.shape));
  const int c = x.shape[0];
  const int hw = x.shape[1] * x.shape[2];
  Tensor out = Tensor::zeros(x.shape);
  for (int ch = 0; ch < c; ++ch) {
    const double* xrow = x.data.data() + static_cast<std::size_t>(ch) * hw;
    double* orow = out.data.data() + static_cast<std::size_t>(ch) * hw;
    for (int p = 0; p < hw; ++p) orow[p] = xrow[p] * gate.data[static_cast<std::size_t>(p)];
  }
  out.requires_grad = any_requires_grad({&x, &gate});
  if (tracked(tape, {&x, &gate})) {
    const int xn = x.node, gn = gate.node;
    const Tensor xv = x, gv = gate;
    out.node = tape.record(
        "spatial_gate", {xn, gn}, out.shape,
        [xn, gn, xv, gv, c, hw](const Tensor& g, GradMap& grads) {
          if (xn >= 0) {
            Tensor& dx = grads.accumulate(xn, xv.shape);
            for (int ch = 0; ch < c; ++ch) {
              const double* grow = g.data.data() + static_cast<std::size_t>(ch) * hw;
              double* drow = dx.data.data() + static_cast<std::size_t>(ch) * hw;
              for (int p = 0; p < hw; ++p) drow[p] += grow[p] * gv.data[static_cast<std::size_t>(p)];
            }
          }
          if (gn >= 0) {
            Tensor& dg = grads.accumulate(gn, gv.shape);
            for (int ch = 0; ch < c; ++ch) {
              const double* grow = g.data.data() + static_cast<std::size_t>(ch) * hw;
              const double* xrow = xv.data.data() + static_cast<std::size_t>(ch) * hw;
              for (int p = 0; p < hw; ++p) dg.data[static_cast<std::size_t>(p)] += grow[p] * xrow[p];
            }
          }
        });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: need at least one part");
  const int m = parts.front().shape.empty() ? 0 : parts.front().shape[0];
  int total = 0;
  bool any_node = false;
  std::vector<int> in_nodes;
  std::vector<int> widths;
  Tensor out;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.shape[0] == m,
            "concat_cols: all parts must share the row count, got " +
                shape_str(p.shape));
    total += p.shape[1];
    widths.push_back(p.shape[1]);
    in_nodes.push_back(p.node);
    any_node = any_node || p.node >= 0;
    out.requires_grad = out.requires_grad || p.requires_grad;
  }
  Tensor result = Tensor::zeros({m, total});
  result.requires_grad = out.requires_grad;
  int col = 0;
  for (const Tensor& p : parts) {
    const int k = p.shape[1];
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < k; ++j) result.at(i, col + j) = p.at(i, j);
    }
    col += k;
  }
  if (tape.recording() && any_node) {
    result.node = tape.record(
        "concat_cols", in_nodes, result.shape,
        [in_nodes, widths, m, total](const Tensor& g, GradMap& grads) {
          int col = 0;
          for (std::size_t part = 0; part < in_nodes.size(); ++part) {
            const int k = widths[part];
            if (in_nodes[part] >= 0) {
              Tensor& dp = grads.accumulate(in_nodes[part], Shape{m, k});
              for (int i = 0; i < m; ++i) {
                for (int j = 0; j < k; ++j) {
                  dp.at(i, j) += g.data[static_cast<std::size_t>(i) * total + col + j];
                }
              }
            }
            col += k;
          }
        });
  }
  return result;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, int label) {
  const int k = static_cast<int>(logits.numel());
  require(logits.rank() <= 2 && (logits.rank() != 2 || logits.shape[0] == 1),
          "cross_entropy: logits must be a vector or single row, got " +
              shape_str(logits.shape));
  require(label >= 0 && label < k,
          "cross_entropy: label " + std::to_string(label) + " out of range for " +
              std::to_string(k) + " classes");
  double mx = logits.data[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, logits.data[static_cast<std::size_t>(j)]);
  double denom = 0.0;
  std::vector<double> soft(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    soft[static_cast<std::size_t>(j)] = std::exp(logits.data[static_cast<std::size_t>(j)] - mx);
    denom += soft[static_cast<std::size_t>(j)];
  }
  for (double& v : soft) v /= denom;
  const double loss = -(logits.data[static_cast<std::size_t>(label)] - mx - std::log(denom));
  Tensor out = Tensor::scalar(loss);
  out.requires_grad = logits.requires_grad;
  if (tracked(tape, {&logits})) {
    const int ln = logits.node;
    const Shape sh = logits.shape;
    out.node = tape.record(
        "cross_entropy", {ln}, out.shape,
        [ln, sh, soft, label, k](const Tensor& g, GradMap& grads) {
          Tensor& dl = grads.accumulate(ln, sh);
          for (int j = 0; j < k; ++j) {
            const double onehot = j == label ? 1.0 : 0.0;
            dl.data[static_cast<std::size_t>(j)] +=
                g.data[0] * (soft[static_cast<std::size_t>(j)] - onehot);
          }
        });
  }
  return out;
}

double check_gradients(const TensorFn& f, const Tensor& x, double h) {
  require(h >= 1e-7 && h <= 1e-3, "check_gradients: h must lie in [1e-7, 1e-3]");
  Tape tape;
  Tensor probe = x;
  probe.requires_grad = true;
  Tensor leaf = tape.leaf(probe);
  Tensor loss = f(tape, leaf);
  require(loss.numel() == 1, "check_gradients: f must return a scalar");
  GradMap grads = tape.backward(loss);
  const Tensor* analytic = grads.find(leaf.node);
  require(analytic != nullptr, "check_gradients: no gradient for the probe");

  auto eval = [&f](const Tensor& point) {
    Tape silent(false);
    Tensor p = silent.leaf(point);
    return f(silent, p).value();
  };

  double max_err = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor hi = x, lo = x;
    hi.data[i] += h;
    lo.data[i] -= h;
    const double fd = (eval(hi) - eval(lo)) / (2.0 * h);
    const double a = analytic->data[i];
    const double err = std::abs(fd - a) / std::max(1.0, std::abs(a));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace maf
