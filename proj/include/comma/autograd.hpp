#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward rule; backward() sorts
// the reachable nodes topologically and runs each rule once, in reverse.
// Leaves accumulate gradients across backward() calls, intermediates are reset
// at the start of every call.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "comma/errors.hpp"
#include "comma/rng.hpp"

namespace comma::ag {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <class T>
using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// Thread-local switch; while disabled, operations do not record graph nodes.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Shape shape;
  Vec<T> value;
  Vec<T> grad;  // empty until something flows in
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  void accumulate(const Vec<T>& delta) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = delta;
    } else {
      grad += delta;
    }
  }
  Vec<T>& grad_buffer() {
    if (grad.size() == 0) grad = Vec<T>::Zero(value.size());
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  Tensor(Shape shape, Vec<T> values, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    }
    if (ag::numel(shape) != values.size()) {
      throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                       " values");
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = ag::numel(shape);
    return Tensor(std::move(shape), Vec<T>::Zero(n), requires_grad);
  }
  static Tensor full(Shape shape, T fill, bool requires_grad = false) {
    const Index n = ag::numel(shape);
    return Tensor(std::move(shape), Vec<T>::Constant(n, fill), requires_grad);
  }
  static Tensor from(Shape shape, std::initializer_list<T> values, bool requires_grad = false) {
    Vec<T> v(static_cast<Index>(values.size()));
    Index i = 0;
    for (T x : values) v[i++] = x;
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }
  static Tensor scalar(T x, bool requires_grad = false) { return from({1}, {x}, requires_grad); }
  static Tensor identity(Index n, bool requires_grad = false) {
    RowMajor<T> eye = RowMajor<T>::Identity(n, n);
    return Tensor({n, n}, Eigen::Map<Vec<T>>(eye.data(), n * n), requires_grad);
  }
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false) {
    const Index n = ag::numel(shape);
    Vec<T> v(n);
    for (Index i = 0; i < n; ++i) v[i] = static_cast<T>(rng.normal(0.0, stddev));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  // Wraps an operation result, recording it on the graph when any input needs a gradient.
  static Tensor make_result(Shape shape, Vec<T> values, const char* op,
                            std::initializer_list<const Tensor*> inputs,
                            std::function<void(Node<T>&)> backward) {
    Tensor out(std::move(shape), std::move(values));
    bool needs = false;
    if (GradMode::enabled()) {
      for (const Tensor* in : inputs) needs = needs || in->requires_grad();
    }
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->op = op;
      for (const Tensor* in : inputs) out.node_->parents.push_back(in->node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const { return node_->shape[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
  Index numel() const { return node_->value.size(); }

  const Vec<T>& value() const { return node_->value; }
  // Direct write access for optimizers and finite differences; never records.
  Vec<T>& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() != 0; }
  Vec<T> grad() const { return has_grad() ? node_->grad : Vec<T>::Zero(numel()); }
  void zero_grad() { node_->grad.resize(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  T at(std::initializer_list<Index> idx) const {
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) flat = flat * node_->shape[k++] + i;
    return node_->value[flat];
  }

  ConstMatMap<T> matrix() const {
    if (rank() != 2) throw ShapeError("matrix view needs rank 2, got " + to_string(shape()));
    return ConstMatMap<T>(node_->value.data(), dim(0), dim(1));
  }

  // Same values, no graph history.
  Tensor detach() const { return Tensor(shape(), value()); }

  template <class U>
  Tensor<U> cast(bool requires_grad) const {
    return Tensor<U>(shape(), value().template cast<U>(), requires_grad);
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Nodes reachable from root that carry gradients, producers before consumers.
template <class T>
std::vector<Node<T>*> topological_order(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  if (!root.requires_grad()) return order;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) throw ContractError("backward() on a tensor that is not on a recorded graph");
  const auto order = topological_order(loss);
  for (Node<T>* node : order) {
    if (!node->is_leaf()) node->grad.resize(0);
  }
  loss.node()->accumulate(Vec<T>::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->is_leaf() && node->grad.size() != 0) node->backward(*node);
  }
}

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// b's shape must equal a trailing suffix of a's shape; returns the repeat count.
template <class T>
Index broadcast_rows(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  for (std::size_t i = 0; ok && i < sb.size(); ++i) ok = sa[sa.size() - sb.size() + i] == sb[i];
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(sb) + " onto " + to_string(sa));
  }
  return a.numel() / b.numel();
}

inline Index normalize_axis(Index axis, Index rank) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return a;
}

struct AxisSplit {
  Index outer, n, inner;
};

inline AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: dimension mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Index m = a.dim(0), n = b.dim(1);
  Vec<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return Tensor<T>::make_result({m, n}, std::move(out), "matmul", {&a, &b}, [m, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    ConstMatMap<T> dc(self.grad.data(), m, n);
    const Index k = pa.shape[1];
    if (pa.requires_grad) {
      MatMap<T>(pa.grad_buffer().data(), m, k).noalias() += dc * ConstMatMap<T>(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MatMap<T>(pb.grad_buffer().data(), k, n).noalias() += ConstMatMap<T>(pa.value.data(), m, k).transpose() * dc;
    }
  });
}

// Batched product over the leading axis: a[n,m,k] x b[n,k,p] (or b[n,p,k] with transpose_b).
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  const bool ranks_ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0);
  if (!ranks_ok || a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    throw ShapeError("bmm: dimension mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()) +
                     (transpose_b ? "^T" : ""));
  }
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index p = transpose_b ? b.dim(1) : b.dim(2);
  const Index br = b.dim(1), bc = b.dim(2);
  Vec<T> out(batch * m * p);
  for (Index i = 0; i < batch; ++i) {
    ConstMatMap<T> ai(a.value().data() + i * m * k, m, k);
    ConstMatMap<T> bi(b.value().data() + i * br * bc, br, bc);
    MatMap<T> ci(out.data() + i * m * p, m, p);
    if (transpose_b) {
      ci.noalias() = ai * bi.transpose();
    } else {
      ci.noalias() = ai * bi;
    }
  }
  return Tensor<T>::make_result(
      {batch, m, p}, std::move(out), "bmm", {&a, &b}, [=](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (Index i = 0; i < batch; ++i) {
          ConstMatMap<T> dc(self.grad.data() + i * m * p, m, p);
          ConstMatMap<T> ai(pa.value.data() + i * m * k, m, k);
          ConstMatMap<T> bi(pb.value.data() + i * br * bc, br, bc);
          if (pa.requires_grad) {
            MatMap<T> da(pa.grad_buffer().data() + i * m * k, m, k);
            if (transpose_b) {
              da.noalias() += dc * bi;
            } else {
              da.noalias() += dc * bi.transpose();
            }
          }
          if (pb.requires_grad) {
            MatMap<T> db(pb.grad_buffer().data() + i * br * bc, br, bc);
            if (transpose_b) {
              db.noalias() += dc.transpose() * ai;
            } else {
              db.noalias() += ai.transpose() * dc;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

// a + b, where b has a's shape or a trailing suffix of it (bias broadcast).
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Index rows = detail::broadcast_rows(a, b, "add");
  const Index cols = b.numel();
  Vec<T> out(a.numel());
  MatMap<T>(out.data(), rows, cols) =
      ConstMatMap<T>(a.value().data(), rows, cols).rowwise() + ConstMatMap<T>(b.value().data(), 1, cols).row(0);
  return Tensor<T>::make_result(a.shape(), std::move(out), "add", {&a, &b}, [rows, cols](Node<T>& self) {
    self.parents[0]->accumulate(self.grad);
    auto& pb = *self.parents[1];
    if (pb.requires_grad) {
      if (rows == 1) {
        pb.accumulate(self.grad);
      } else {
        Eigen::Map<RowMajor<T>>(pb.grad_buffer().data(), 1, cols) +=
            ConstMatMap<T>(self.grad.data(), rows, cols).colwise().sum();
      }
    }
  });
}

// Elementwise product; b has a's shape or a trailing suffix of it.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Index rows = detail::broadcast_rows(a, b, "mul");
  const Index cols = b.numel();
  Vec<T> out(a.numel());
  MatMap<T>(out.data(), rows, cols) = ConstMatMap<T>(a.value().data(), rows, cols).array().rowwise() *
                                      ConstMatMap<T>(b.value().data(), 1, cols).array().row(0);
  return Tensor<T>::make_result(a.shape(), std::move(out), "mul", {&a, &b}, [rows, cols](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    ConstMatMap<T> dy(self.grad.data(), rows, cols);
    if (pa.requires_grad) {
      MatMap<T>(pa.grad_buffer().data(), rows, cols).array() +=
          dy.array().rowwise() * ConstMatMap<T>(pb.value.data(), 1, cols).array().row(0);
    }
    if (pb.requires_grad) {
      MatMap<T>(pb.grad_buffer().data(), 1, cols).array() +=
          (dy.array() * ConstMatMap<T>(pa.value.data(), rows, cols).array()).colwise().sum();
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return Tensor<T>::make_result(a.shape(), a.value() * factor, "scale", {&a},
                                [factor](Node<T>& self) { self.parents[0]->accumulate(self.grad * factor); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  Vec<T> out(1);
  out[0] = a.value().sum();
  return Tensor<T>::make_result({1}, std::move(out), "sum", {&a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.accumulate(Vec<T>::Constant(pa.value.size(), self.grad[0]));
  });
}

// Sum over one axis; the axis is removed from the shape (rank-1 input gives shape (1)).
template <class T>
Tensor<T> sum_over_axis(const Tensor<T>& a, Index axis) {
  const Index ax = detail::normalize_axis(axis, a.rank());
  const auto s = detail::split_at(a.shape(), ax);
  Shape shape = a.shape();
  shape.erase(shape.begin() + ax);
  if (shape.empty()) shape = {1};
  Vec<T> out = Vec<T>::Zero(s.outer * s.inner);
  const auto& x = a.value();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index j = 0; j < s.n; ++j) {
      out.segment(o * s.inner, s.inner) += x.segment((o * s.n + j) * s.inner, s.inner);
    }
  }
  return Tensor<T>::make_result(std::move(shape), std::move(out), "sum_over_axis", {&a}, [s](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index j = 0; j < s.n; ++j) {
        g.segment((o * s.n + j) * s.inner, s.inner) += self.grad.segment(o * s.inner, s.inner);
      }
    }
  });
}

template <class T>
Tensor<T> mean_over_axis(const Tensor<T>& a, Index axis) {
  const Index ax = detail::normalize_axis(axis, a.rank());
  return scale(sum_over_axis(a, ax), T(1) / static_cast<T>(a.dim(ax)));
}

// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Vec<T> out = a.value().unaryExpr([inv_sqrt2](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); });
  return Tensor<T>::make_result(a.shape(), std::move(out), "gelu", {&a}, [inv_sqrt2](Node<T>& self) {
    auto& pa = *self.parents[0];
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    Vec<T> d = pa.value.unaryExpr([&](T x) {
      return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
    });
    pa.accumulate(self.grad * d);
  });
}

// Inverted dropout. Identity (the same tensor) when not training or p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Vec<T> mask(a.numel());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? T(0) : keep_scale;
  Vec<T> out = a.value() * mask;
  return Tensor<T>::make_result(a.shape(), std::move(out), "dropout", {&a},
                                [mask = std::move(mask)](Node<T>& self) { self.parents[0]->accumulate(self.grad * mask); });
}

// ---------------------------------------------------------------------------
// Normalization

template <class T>
Tensor<T> softmax(const Tensor<T>& a, Index axis = -1) {
  if (!a.value().allFinite()) throw NumericError("softmax: input contains NaN or Inf");
  const Index ax = detail::normalize_axis(axis, a.rank());
  const auto s = detail::split_at(a.shape(), ax);
  const auto& x = a.value();
  Vec<T> y(x.size());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.n * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (Index j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      T total = 0;
      for (Index j = 0; j < s.n; ++j) total += (y[base + j * s.inner] = std::exp(x[base + j * s.inner] - mx));
      for (Index j = 0; j < s.n; ++j) y[base + j * s.inner] /= total;
    }
  }
  return Tensor<T>::make_result(a.shape(), y, "softmax", {&a}, [s](Node<T>& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    const auto& y = self.value;
    const auto& dy = self.grad;
    auto& dx = pa.grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.n * s.inner + i;
        T dot = 0;
        for (Index j = 0; j < s.n; ++j) dot += dy[base + j * s.inner] * y[base + j * s.inner];
        for (Index j = 0; j < s.n; ++j) dx[base + j * s.inner] += y[base + j * s.inner] * (dy[base + j * s.inner] - dot);
      }
    }
  });
}

// Normalizes the last axis to zero mean and unit variance, then applies gamma * x + beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const Index d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: affine shapes " + to_string(gamma.shape()) + ", " + to_string(beta.shape()) +
                     " do not match last axis of " + to_string(x.shape()));
  }
  const Index rows = x.numel() / d;
  ConstMatMap<T> in(x.value().data(), rows, d);
  RowMajor<T> xhat(rows, d);
  Vec<T> inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const T mu = in.row(r).mean();
    const T var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Vec<T> out(x.numel());
  MatMap<T>(out.data(), rows, d) =
      (xhat.array().rowwise() * ConstMatMap<T>(gamma.value().data(), 1, d).array().row(0)).rowwise() +
      ConstMatMap<T>(beta.value().data(), 1, d).array().row(0);
  return Tensor<T>::make_result(
      x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        ConstMatMap<T> dy(self.grad.data(), rows, d);
        if (pg.requires_grad) {
          MatMap<T>(pg.grad_buffer().data(), 1, d).array() += (dy.array() * xhat.array()).colwise().sum();
        }
        if (pb.requires_grad) MatMap<T>(pb.grad_buffer().data(), 1, d) += dy.colwise().sum();
        if (px.requires_grad) {
          RowMajor<T> dxhat = (dy.array().rowwise() * ConstMatMap<T>(pg.value.data(), 1, d).array().row(0)).matrix();
          MatMap<T> dx(px.grad_buffer().data(), rows, d);
          for (Index r = 0; r < rows; ++r) {
            const T mean_dxhat = dxhat.row(r).mean();
            const T mean_dxhat_xhat = (dxhat.row(r).array() * xhat.row(r).array()).mean();
            dx.row(r).array() +=
                inv_std[r] * (dxhat.row(r).array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing and layout

// Rows of a [V, d] table selected by index; shape (len(ids), d).
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be rank 2, got " + to_string(table.shape()));
  if (ids.empty()) throw ShapeError("embedding_lookup: empty index list");
  const Index vocab = table.dim(0), d = table.dim(1);
  const Index n = static_cast<Index>(ids.size());
  Vec<T> out(n * d);
  for (Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
    out.segment(i * d, d) = table.value().segment(id * d, d);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return Tensor<T>::make_result({n, d}, std::move(out), "embedding_lookup", {&table},
                                [d, rows = std::move(rows)](Node<T>& self) {
                                  auto& pt = *self.parents[0];
                                  if (!pt.requires_grad) return;
                                  auto& g = pt.grad_buffer();
                                  for (std::size_t i = 0; i < rows.size(); ++i) {
                                    g.segment(rows[i] * d, d) += self.grad.segment(static_cast<Index>(i) * d, d);
                                  }
                                });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return Tensor<T>::make_result(std::move(shape), a.value(), "reshape", {&a},
                                [](Node<T>& self) { self.parents[0]->accumulate(self.grad); });
}

// Reorders axes: output axis i is input axis perm[i].
template <class T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<Index>& perm) {
  const std::size_t r = a.shape().size();
  std::vector<bool> used(r, false);
  bool ok = perm.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) {
    ok = perm[i] >= 0 && perm[i] < static_cast<Index>(r) && !used[static_cast<std::size_t>(perm[i])];
    if (ok) used[static_cast<std::size_t>(perm[i])] = true;
  }
  if (!ok) throw ShapeError("permute: invalid axis order for shape " + to_string(a.shape()));
  Shape out_shape(r);
  std::vector<Index> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.shape()[i];
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[static_cast<std::size_t>(perm[i])];
  // source offset for every output element, in output order
  std::vector<Index> source(static_cast<std::size_t>(a.numel()));
  std::vector<Index> counter(r, 0);
  for (std::size_t flat = 0; flat < source.size(); ++flat) {
    Index off = 0;
    for (std::size_t i = 0; i < r; ++i) off += counter[i] * in_strides[static_cast<std::size_t>(perm[i])];
    source[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  Vec<T> out(a.numel());
  for (std::size_t i = 0; i < source.size(); ++i) out[static_cast<Index>(i)] = a.value()[source[i]];
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), "permute", {&a},
                                [source = std::move(source)](Node<T>& self) {
                                  auto& pa = *self.parents[0];
                                  if (!pa.requires_grad) return;
                                  auto& g = pa.grad_buffer();
                                  for (std::size_t i = 0; i < source.size(); ++i) {
                                    g[source[i]] += self.grad[static_cast<Index>(i)];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Loss

// Mean over rows of -log softmax(logits)[target].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, C], got " + to_string(logits.shape()));
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(targets.size()) != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(batch) +
                     " rows");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= classes) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
  if (!logits.value().allFinite()) throw NumericError("cross_entropy: logits contain NaN or Inf");
  ConstMatMap<T> z(logits.value().data(), batch, classes);
  RowMajor<T> probs(batch, classes);
  T total = 0;
  for (Index b = 0; b < batch; ++b) {
    const T mx = z.row(b).maxCoeff();
    const auto shifted = (z.row(b).array() - mx).eval();
    const T log_norm = std::log(shifted.exp().sum());
    probs.row(b) = (shifted - log_norm).exp().matrix();
    total -= shifted[targets[static_cast<std::size_t>(b)]] - log_norm;
  }
  Vec<T> out(1);
  out[0] = total / static_cast<T>(batch);
  std::vector<int> tgt(targets.begin(), targets.end());
  return Tensor<T>::make_result({1}, std::move(out), "cross_entropy", {&logits},
                                [batch, classes, probs = std::move(probs), tgt = std::move(tgt)](Node<T>& self) {
                                  auto& pl = *self.parents[0];
                                  if (!pl.requires_grad) return;
                                  RowMajor<T> d = probs;
                                  for (Index b = 0; b < batch; ++b) d(b, tgt[static_cast<std::size_t>(b)]) -= T(1);
                                  MatMap<T>(pl.grad_buffer().data(), batch, classes) +=
                                      d * (self.grad[0] / static_cast<T>(batch));
                                });
}

}  // namespace comma::ag
