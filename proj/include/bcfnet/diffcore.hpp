#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bcfnet/errors.hpp"
#include "bcfnet/gemm.hpp"
#include "bcfnet/tensor.hpp"

namespace bcfnet {

// Sparse per-instance index lists (the nonzero positions of an interaction
// matrix row or column), CSR-like over the batch.
struct IndexBatch {
  std::vector<int64_t> offsets{0};
  std::vector<int> indices;

  void clear() {
    offsets.assign(1, 0);
    indices.clear();
  }
  void push(std::span<const int> ids) {
    indices.insert(indices.end(), ids.begin(), ids.end());
    offsets.push_back(static_cast<int64_t>(indices.size()));
  }
  int batch() const { return static_cast<int>(offsets.size()) - 1; }
  std::span<const int> row(int b) const {
    return {indices.data() + offsets[b],
            static_cast<size_t>(offsets[b + 1] - offsets[b])};
  }
};

// Binary cross-entropy, sum reduction, 64-bit accumulation. Predictions are
// clamped to [eps, 1-eps] before the logs; raw values outside [0,1] are a
// caller bug and rejected.
template <typename T>
double bce_loss(std::span<const T> y_hat, std::span<const T> y,
                double eps = 1e-7) {
  if (y_hat.size() != y.size())
    throw ShapeError("bce_loss: prediction/target size mismatch");
  double total = 0.0;
  for (size_t i = 0; i < y_hat.size(); ++i) {
    double p = static_cast<double>(y_hat[i]);
    if (!(p >= 0.0 && p <= 1.0))
      throw DomainError("bce_loss: prediction outside [0,1] at index " +
                        std::to_string(i));
    p = std::clamp(p, eps, 1.0 - eps);
    double t = static_cast<double>(y[i]);
    if (t != 0.0 && t != 1.0)
      throw DomainError("bce_loss: target not in {0,1} at index " +
                        std::to_string(i));
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return total;
}

enum class LossKind { None, Sum, Bce };

// Fixed-topology reverse-mode graph. Nodes are appended in evaluation
// order; backward walks the exact reverse. All activations are batched
// row-major [batch x dim]. One graph instance is single-threaded.
template <typename T>
class GraphT {
 public:
  // -- construction ---------------------------------------------------
  int add_input(int dim, std::string label = "input") {
    Node n;
    n.op = Op::Input;
    n.dim = dim;
    n.label = std::move(label);
    return push(n);
  }

  int add_index_input(std::string label = "indices") {
    Node n;
    n.op = Op::IndexInput;
    n.dim = 0;
    n.label = std::move(label);
    return push(n);
  }

  // out = x * W (+ bias), W is [in x out] row-major.
  int add_dense(int x, ParameterT<T>* W, ParameterT<T>* bias,
                std::string label = "dense") {
    Node n;
    n.op = Op::Dense;
    n.a = check_id(x, label);
    if (W->value.shape.size() != 2)
      throw ShapeError(label + ": weight must be 2-d");
    if (node(x).dim != W->value.shape[0])
      throw ShapeError(label + ": input dim " + std::to_string(node(x).dim) +
                       " != weight rows " + std::to_string(W->value.shape[0]));
    n.dim = W->value.shape[1];
    if (bias && bias->size() != n.dim)
      throw ShapeError(label + ": bias length != output dim");
    n.W = W;
    n.bias = bias;
    n.label = std::move(label);
    return push(n);
  }

  // out[b] = sum over rows E[j] for j in the b-th index list.
  // Backward touches only the selected rows.
  int add_embedding_sum(int ids, ParameterT<T>* E,
                        std::string label = "embedding") {
    Node n;
    n.op = Op::EmbedSum;
    n.a = check_id(ids, label);
    if (node(ids).op != Op::IndexInput)
      throw GraphError(label + ": embedding input must be an index input");
    if (E->value.shape.size() != 2)
      throw ShapeError(label + ": embedding table must be 2-d");
    n.dim = E->value.shape[1];
    n.W = E;
    n.label = std::move(label);
    return push(n);
  }

  int add_relu(int x, std::string label = "relu") {
    return unary(Op::Relu, x, std::move(label));
  }
  int add_sigmoid(int x, std::string label = "sigmoid") {
    return unary(Op::Sigmoid, x, std::move(label));
  }
  int add_softmax(int x, std::string label = "softmax") {
    return unary(Op::Softmax, x, std::move(label));
  }

  int add_mul(int x, int y, std::string label = "mul") {
    Node n;
    n.op = Op::Mul;
    n.a = check_id(x, label);
    n.b = check_id(y, label);
    if (node(x).dim != node(y).dim)
      throw ShapeError(label + ": operand dims differ (" +
                       std::to_string(node(x).dim) + " vs " +
                       std::to_string(node(y).dim) + ")");
    n.dim = node(x).dim;
    n.label = std::move(label);
    return push(n);
  }

  int add_concat(int x, int y, std::string label = "concat") {
    Node n;
    n.op = Op::Concat;
    n.a = check_id(x, label);
    n.b = check_id(y, label);
    n.dim = node(x).dim + node(y).dim;
    n.label = std::move(label);
    return push(n);
  }

  void set_loss_bce(int node_id) {
    loss_node_ = check_id(node_id, "loss");
    loss_kind_ = LossKind::Bce;
  }
  void set_loss_sum(int node_id) {
    loss_node_ = check_id(node_id, "loss");
    loss_kind_ = LossKind::Sum;
  }

  // -- execution -------------------------------------------------------
  void bind_input(int node_id, const T* data, bool check_finite = true) {
    Node& n = node(node_id);
    if (n.op != Op::Input) throw GraphError(n.label + ": not an input node");
    n.ext = data;
    n.ext_checked = check_finite;
  }

  void bind_indices(int node_id, const IndexBatch* ib) {
    Node& n = node(node_id);
    if (n.op != Op::IndexInput)
      throw GraphError(n.label + ": not an index input node");
    n.idx = ib;
  }

  // Targets for the BCE loss; length = batch * dim(loss node).
  void bind_targets(const T* y) { targets_ = y; }

  void forward(int batch) {
    if (batch <= 0) throw GraphError("forward: batch must be positive");
    batch_ = batch;
    for (Node& n : nodes_) compute_forward(n);
    forward_done_ = true;
    loss_done_ = false;
  }

  // Computes the configured loss over the last forward pass and stores the
  // seed gradient for backward.
  double loss() {
    if (!forward_done_) throw StateError("loss: forward has not run");
    if (loss_kind_ == LossKind::None) throw StateError("loss: no loss set");
    Node& out = node(loss_node_);
    const size_t count = static_cast<size_t>(batch_) * out.dim;
    loss_grad_.assign(count, 0.0);
    double total = 0.0;
    if (loss_kind_ == LossKind::Sum) {
      for (size_t i = 0; i < count; ++i) {
        total += static_cast<double>(out.act[i]);
        loss_grad_[i] = 1.0;
      }
    } else {
      if (!targets_) throw StateError("loss: targets not bound");
      constexpr double eps = 1e-7;
      for (size_t i = 0; i < count; ++i) {
        double p = static_cast<double>(out.act[i]);
        if (!(p >= 0.0 && p <= 1.0)) {
          if (!std::isfinite(p))
            throw DomainError(out.label +
                              ": non-finite prediction (diverged parameters?)");
          throw DomainError(out.label + ": prediction outside [0,1]");
        }
        p = std::clamp(p, eps, 1.0 - eps);
        double t = static_cast<double>(targets_[i]);
        total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        loss_grad_[i] = -(t / p) + (1.0 - t) / (1.0 - p);
      }
    }
    loss_value_ = total;
    loss_done_ = true;
    return total;
  }

  // Accumulates d(loss)/d(param) into every reachable Parameter.grad.
  // loss_scale multiplies the seed gradient.
  void backward(double loss_scale = 1.0) {
    if (!forward_done_) throw StateError("backward: forward has not run");
    if (!loss_done_) loss();
    for (Node& n : nodes_) {
      n.grad.assign(static_cast<size_t>(batch_) * n.dim, T(0));
    }
    Node& out = node(loss_node_);
    for (size_t i = 0; i < loss_grad_.size(); ++i)
      out.grad[i] = static_cast<T>(loss_grad_[i] * loss_scale);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      compute_backward(*it);
    forward_done_ = false;  // forced re-forward before the next backward
  }

  std::span<const T> activations(int node_id) const {
    const Node& n = nodes_[static_cast<size_t>(node_id)];
    return {n.act.data(), static_cast<size_t>(batch_) * n.dim};
  }

  int dim(int node_id) const { return nodes_[static_cast<size_t>(node_id)].dim; }
  int batch() const { return batch_; }
  double last_loss() const { return loss_value_; }

  // Smallest |pre-activation| feeding any ReLU in the last forward pass.
  // Gradient-check harnesses use it to detect stencils straddling a kink.
  double min_relu_input_magnitude() const {
    double best = std::numeric_limits<double>::infinity();
    for (const Node& n : nodes_) {
      if (n.op != Op::Relu) continue;
      for (T v : node(n.a).act)
        best = std::min(best, std::fabs(static_cast<double>(v)));
    }
    return best;
  }

  // Unique parameters in first-use order.
  std::vector<ParameterT<T>*> parameters() const {
    std::vector<ParameterT<T>*> out;
    for (const Node& n : nodes_) {
      for (ParameterT<T>* p : {n.W, n.bias}) {
        if (p && std::find(out.begin(), out.end(), p) == out.end())
          out.push_back(p);
      }
    }
    return out;
  }

 private:
  enum class Op { Input, IndexInput, Dense, EmbedSum, Relu, Sigmoid, Softmax, Mul, Concat };

  struct Node {
    Op op;
    int a = -1, b = -1;
    int dim = 0;
    ParameterT<T>* W = nullptr;
    ParameterT<T>* bias = nullptr;
    std::string label;
    std::vector<T> act;
    std::vector<T> grad;
    const T* ext = nullptr;
    bool ext_checked = true;
    const IndexBatch* idx = nullptr;
  };

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int unary(Op op, int x, std::string label) {
    Node n;
    n.op = op;
    n.a = check_id(x, label);
    n.dim = node(x).dim;
    n.label = std::move(label);
    return push(n);
  }

  int check_id(int id, const std::string& label) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw GraphError(label + ": references unknown node " + std::to_string(id));
    return id;
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  void compute_forward(Node& n) {
    const size_t count = static_cast<size_t>(batch_) * n.dim;
    switch (n.op) {
      case Op::IndexInput: {
        if (!n.idx) throw StateError(n.label + ": indices not bound");
        if (n.idx->batch() != batch_)
          throw ShapeError(n.label + ": index batch " +
                           std::to_string(n.idx->batch()) + " != batch " +
                           std::to_string(batch_));
        return;
      }
      case Op::Input: {
        if (!n.ext) throw StateError(n.label + ": input not bound");
        n.act.assign(n.ext, n.ext + count);
        if (n.ext_checked) {
          for (T v : n.act)
            if (!std::isfinite(static_cast<double>(v)))
              throw DomainError(n.label + ": non-finite input value");
        }
        return;
      }
      case Op::Dense: {
        n.act.resize(count);
        const Node& x = node(n.a);
        gemm_nn(x.act.data(), n.W->value.ptr(), n.act.data(), batch_, x.dim,
                n.dim, false);
        if (n.bias) {
          const T* b = n.bias->value.ptr();
          for (int r = 0; r < batch_; ++r) {
            T* row = n.act.data() + static_cast<size_t>(r) * n.dim;
            for (int j = 0; j < n.dim; ++j) row[j] += b[j];
          }
        }
        return;
      }
      case Op::EmbedSum: {
        n.act.assign(count, T(0));
        const IndexBatch* ib = node(n.a).idx;
        const T* E = n.W->value.ptr();
        const int rows = n.W->value.shape[0];
        for (int r = 0; r < batch_; ++r) {
          T* out = n.act.data() + static_cast<size_t>(r) * n.dim;
          for (int j : ib->row(r)) {
            if (j < 0 || j >= rows)
              throw ShapeError(n.label + ": index " + std::to_string(j) +
                               " out of range [0," + std::to_string(rows) + ")");
            const T* e = E + static_cast<size_t>(j) * n.dim;
            for (int d = 0; d < n.dim; ++d) out[d] += e[d];
          }
        }
        return;
      }
      case Op::Relu: {
        n.act.resize(count);
        const T* x = node(n.a).act.data();
        for (size_t i = 0; i < count; ++i) n.act[i] = x[i] > T(0) ? x[i] : T(0);
        return;
      }
      case Op::Sigmoid: {
        n.act.resize(count);
        const T* x = node(n.a).act.data();
        // Clamped so outputs stay strictly inside (0,1) in either precision.
        const T lo = T(1e-7), hi = T(1) - T(1.2e-7);
        for (size_t i = 0; i < count; ++i) {
          T v = x[i] >= T(0) ? T(1) / (T(1) + std::exp(-x[i]))
                             : T(1) - T(1) / (T(1) + std::exp(x[i]));
          n.act[i] = std::clamp(v, lo, hi);
        }
        return;
      }
      case Op::Softmax: {
        n.act.resize(count);
        const T* x = node(n.a).act.data();
        for (int r = 0; r < batch_; ++r) {
          const T* in = x + static_cast<size_t>(r) * n.dim;
          T* out = n.act.data() + static_cast<size_t>(r) * n.dim;
          T mx = in[0];
          for (int j = 1; j < n.dim; ++j) mx = std::max(mx, in[j]);
          T sum = T(0);
          for (int j = 0; j < n.dim; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
          }
          T inv = T(1) / sum;
          for (int j = 0; j < n.dim; ++j) out[j] *= inv;
        }
        return;
      }
      case Op::Mul: {
        n.act.resize(count);
        const T* a = node(n.a).act.data();
        const T* b = node(n.b).act.data();
        for (size_t i = 0; i < count; ++i) n.act[i] = a[i] * b[i];
        return;
      }
      case Op::Concat: {
        n.act.resize(count);
        const Node& a = node(n.a);
        const Node& b = node(n.b);
        for (int r = 0; r < batch_; ++r) {
          T* out = n.act.data() + static_cast<size_t>(r) * n.dim;
          std::copy_n(a.act.data() + static_cast<size_t>(r) * a.dim, a.dim, out);
          std::copy_n(b.act.data() + static_cast<size_t>(r) * b.dim, b.dim,
                      out + a.dim);
        }
        return;
      }
    }
  }

  void compute_backward(Node& n) {
    switch (n.op) {
      case Op::Input:
      case Op::IndexInput:
        return;
      case Op::Dense: {
        Node& x = node(n.a);
        // dX += dY * W^T
        scratch_.resize(static_cast<size_t>(x.dim) * n.dim);
        transpose(n.W->value.ptr(), scratch_.data(), x.dim, n.dim);
        gemm_nn(n.grad.data(), scratch_.data(), x.grad.data(), batch_, n.dim,
                x.dim, true);
        // dW += X^T * dY
        scratch_.resize(static_cast<size_t>(batch_) * x.dim);
        transpose(x.act.data(), scratch_.data(), batch_, x.dim);
        gemm_nn(scratch_.data(), n.grad.data(), n.W->grad.ptr(), x.dim, batch_,
                n.dim, true);
        if (n.bias) {
          T* db = n.bias->grad.ptr();
          for (int r = 0; r < batch_; ++r) {
            const T* g = n.grad.data() + static_cast<size_t>(r) * n.dim;
            for (int j = 0; j < n.dim; ++j) db[j] += g[j];
          }
        }
        return;
      }
      case Op::EmbedSum: {
        const IndexBatch* ib = node(n.a).idx;
        T* dE = n.W->grad.ptr();
        for (int r = 0; r < batch_; ++r) {
          const T* g = n.grad.data() + static_cast<size_t>(r) * n.dim;
          for (int j : ib->row(r)) {
            T* row = dE + static_cast<size_t>(j) * n.dim;
            for (int d = 0; d < n.dim; ++d) row[d] += g[d];
          }
        }
        return;
      }
      case Op::Relu: {
        Node& x = node(n.a);
        const size_t count = n.grad.size();
        for (size_t i = 0; i < count; ++i)
          if (n.act[i] > T(0)) x.grad[i] += n.grad[i];
        return;
      }
      case Op::Sigmoid: {
        Node& x = node(n.a);
        const size_t count = n.grad.size();
        for (size_t i = 0; i < count; ++i)
          x.grad[i] += n.grad[i] * n.act[i] * (T(1) - n.act[i]);
        return;
      }
      case Op::Softmax: {
        Node& x = node(n.a);
        for (int r = 0; r < batch_; ++r) {
          const T* y = n.act.data() + static_cast<size_t>(r) * n.dim;
          const T* dy = n.grad.data() + static_cast<size_t>(r) * n.dim;
          T* dx = x.grad.data() + static_cast<size_t>(r) * n.dim;
          T dot = T(0);
          for (int j = 0; j < n.dim; ++j) dot += dy[j] * y[j];
          for (int j = 0; j < n.dim; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
        return;
      }
      case Op::Mul: {
        Node& a = node(n.a);
        Node& b = node(n.b);
        const size_t count = n.grad.size();
        for (size_t i = 0; i < count; ++i) {
          a.grad[i] += n.grad[i] * b.act[i];
          b.grad[i] += n.grad[i] * a.act[i];
        }
        return;
      }
      case Op::Concat: {
        Node& a = node(n.a);
        Node& b = node(n.b);
        for (int r = 0; r < batch_; ++r) {
          const T* g = n.grad.data() + static_cast<size_t>(r) * n.dim;
          T* ga = a.grad.data() + static_cast<size_t>(r) * a.dim;
          T* gb = b.grad.data() + static_cast<size_t>(r) * b.dim;
          for (int j = 0; j < a.dim; ++j) ga[j] += g[j];
          for (int j = 0; j < b.dim; ++j) gb[j] += g[j + a.dim];
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<T> scratch_;
  std::vector<double> loss_grad_;
  const T* targets_ = nullptr;
  int loss_node_ = -1;
  LossKind loss_kind_ = LossKind::None;
  int batch_ = 0;
  bool forward_done_ = false;
  bool loss_done_ = false;
  double loss_value_ = 0.0;
};

using Graph = GraphT<float>;

// Bias-corrected Adam. Moments are allocated on first use; gradients are
// zeroed after the update.
template <typename T>
void adam_step(std::span<ParameterT<T>* const> params, double lr,
               double beta1, double beta2, double eps, int64_t t) {
  if (t <= 0) throw StateError("adam_step: step counter must be >= 1");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (ParameterT<T>* p : params) {
    if (p->m.size() != p->size()) {
      p->m = TensorT<T>(p->value.shape);
      p->v = TensorT<T>(p->value.shape);
    }
    T* th = p->value.ptr();
    T* g = p->grad.ptr();
    T* m = p->m.ptr();
    T* v = p->v.ptr();
    const int64_t n = p->size();
    const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
    const T ib1 = static_cast<T>(1.0 - beta1), ib2 = static_cast<T>(1.0 - beta2);
    const T a = static_cast<T>(lr / bc1);
    const T vs = static_cast<T>(1.0 / bc2);
    const T e = static_cast<T>(eps);
    for (int64_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + ib1 * g[i];
      v[i] = b2 * v[i] + ib2 * g[i] * g[i];
      th[i] -= a * m[i] / (std::sqrt(v[i] * vs) + e);
      g[i] = T(0);
    }
  }
}

template <typename T>
void sgd_step(std::span<ParameterT<T>* const> params, double lr) {
  for (ParameterT<T>* p : params) {
    T* th = p->value.ptr();
    T* g = p->grad.ptr();
    const T a = static_cast<T>(lr);
    const int64_t n = p->size();
    for (int64_t i = 0; i < n; ++i) {
      th[i] -= a * g[i];
      g[i] = T(0);
    }
  }
}

}  // namespace bcfnet
