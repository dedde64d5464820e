#pragma once

// Define-by-run reverse-mode autodiff over dense row-major tensors.
//
// A Tensor is a shared handle to a graph node. Operations record their
// parents and a backward closure only when at least one input requires a
// gradient, so inference with frozen parameters builds no graph at all.
// All reductions run in a fixed left-to-right order.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace unmt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <std::floating_point T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient flows here
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (shape.empty()) throw DimensionError("Tensor: rank-0 shapes are not used; use [1]");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("Tensor: zero-sized dimension in " + shape_str(shape));
    }
    if (data.size() != numel(shape)) {
      throw DimensionError("Tensor: data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.front(); }
  std::size_t cols() const { return rank() == 1 ? 1 : node_->shape.back(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (size() != 1) throw ContractError("Tensor::item on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  const char* op() const { return node_->op; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  /// Value copy that is cut off from the graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  template <std::floating_point U>
  Tensor<U> cast(bool requires_grad) const {
    std::vector<U> v(node_->value.begin(), node_->value.end());
    return Tensor<U>(shape(), std::move(v), requires_grad);
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw DimensionError(std::string(op) + ": " + what);
}

inline void require_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <class T>
void require_2d(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

// out[j] += s * in[j]
template <class T>
inline void axpy(std::size_t n, T s, const T* __restrict in, T* __restrict out) {
  for (std::size_t j = 0; j < n; ++j) out[j] += s * in[j];
}

template <class T>
std::vector<T> transpose(const std::vector<T>& a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(a.size());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

/// Reverse pass from a scalar loss. Leaf gradients accumulate additively;
/// callers zero them between steps.
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d("matmul", a);
  detail::require_2d("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) detail::axpy(n, A[i * k + p], B + p * n, row);
  }
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {a.ptr(), b.ptr()}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T* G = self.grad.data();
    if (pa.requires_grad) {
      pa.ensure_grad();
      const auto bt = detail::transpose(pb.value, k, n);
      for (std::size_t i = 0; i < m; ++i) {
        T* row = pa.grad.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) detail::axpy(k, G[i * n + j], bt.data() + j * k, row);
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      const T* A = pa.value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) detail::axpy(n, A[i * k + p], G + i * n, pb.grad.data() + p * n);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("add", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("sub", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

/// a[m x n] + bias[n], bias broadcast over rows.
template <class T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  detail::require_2d("add_bias", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " + shape_str(a.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  return detail::make_result<T>("add_bias", a.shape(), std::move(out), {a.ptr(), bias.ptr()}, [m, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) detail::axpy(n, T(1), self.grad.data() + i * n, pb.grad.data());
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("mul", a.shape(), b.shape());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a[i];
  return detail::make_result<T>("scale", a.shape(), std::move(out), {a.ptr()}, [c](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += c * self.grad[i];
  });
}

namespace detail {

// Unary op whose derivative is expressible from input x and output y.
template <class T, class F, class D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D dfdx) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a.ptr()}, [dfdx](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * dfdx(pa.value[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary(
      "sigmoid", a, [](T x) { return detail::sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(
      "relu", a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return detail::unary(
      "leaky_relu", a, [slope](T x) { return x > 0 ? x : slope * x; },
      [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

// ---------------------------------------------------------------------------
// Softmax and losses

/// Softmax over the last axis of a [rows x cols] tensor. When `lengths` is
/// non-empty, entries at column >= lengths[row] get probability exactly 0.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::vector<std::size_t> lengths = {}) {
  const std::size_t m = a.rank() == 1 ? 1 : a.rows();
  const std::size_t n = a.rank() == 1 ? a.size() : a.cols();
  if (!lengths.empty() && lengths.size() != m) {
    throw DimensionError("softmax: " + std::to_string(lengths.size()) + " lengths for " + shape_str(a.shape()));
  }
  std::vector<T> out(a.size(), T(0));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t len = lengths.empty() ? n : lengths[i];
    if (len == 0 || len > n) throw DimensionError("softmax: row length out of range");
    const T* x = a.data().data() + i * n;
    T* y = out.data() + i * n;
    T mx = x[0];
    for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[j]);
    T z = 0;
    for (std::size_t j = 0; j < len; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < len; ++j) y[j] /= z;
  }
  return detail::make_result<T>("softmax", a.shape(), std::move(out), {a.ptr()}, [m, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.value.data() + i * n;
      const T* g = self.grad.data() + i * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

/// Token-level cross-entropy from logits [N x V]. Returns per-row losses [N];
/// rows whose target equals `ignore` contribute 0 and receive no gradient.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::vector<std::int32_t> targets, std::int32_t ignore = -1) {
  detail::require_2d("cross_entropy", logits);
  const std::size_t N = logits.rows(), V = logits.cols();
  if (targets.size() != N) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  std::vector<T> loss(N, T(0));
  std::vector<T> probs(N * V, T(0));
  for (std::size_t i = 0; i < N; ++i) {
    if (targets[i] == ignore) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[i]) + " outside [0," +
                           std::to_string(V) + ")");
    }
    const T* x = logits.data().data() + i * V;
    T mx = x[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, x[j]);
    T z = 0;
    for (std::size_t j = 0; j < V; ++j) {
      probs[i * V + j] = std::exp(x[j] - mx);
      z += probs[i * V + j];
    }
    for (std::size_t j = 0; j < V; ++j) probs[i * V + j] /= z;
    loss[i] = std::log(z) + mx - x[targets[i]];
  }
  return detail::make_result<T>(
      "cross_entropy", {N}, std::move(loss), {logits.ptr()},
      [N, V, targets = std::move(targets), probs = std::move(probs), ignore](Node<T>& self) {
        auto& pl = *self.parents[0];
        pl.ensure_grad();
        for (std::size_t i = 0; i < N; ++i) {
          if (targets[i] == ignore) continue;
          const T g = self.grad[i];
          for (std::size_t j = 0; j < V; ++j) pl.grad[i * V + j] += g * probs[i * V + j];
          pl.grad[i * V + targets[i]] -= g;
        }
      });
}

/// Binary cross-entropy from logits against soft targets y in [0,1], one per
/// element: max(x,0) - x*y + log(1 + exp(-|x|)).
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::vector<T> targets) {
  if (targets.size() != logits.size()) {
    throw DimensionError("bce_with_logits: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits.shape()));
  }
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = logits[i];
    out[i] = std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return detail::make_result<T>("bce_with_logits", {logits.size()}, std::move(out), {logits.ptr()},
                                [targets = std::move(targets)](Node<T>& self) {
                                  auto& pl = *self.parents[0];
                                  pl.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    pl.grad[i] += self.grad[i] * (detail::sigmoid_scalar(pl.value[i]) - targets[i]);
                                });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return detail::make_result<T>("sum", {1}, {s}, {a.ptr()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// sum_i w_i * a_i with constant weights.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& a, std::vector<T> w) {
  if (w.size() != a.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(w.size()) + " weights for " + shape_str(a.shape()));
  }
  T s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a[i];
  return detail::make_result<T>("weighted_sum", {1}, {s}, {a.ptr()}, [w = std::move(w)](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < w.size(); ++i) pa.grad[i] += w[i] * self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

/// Rows of `table` selected by id: [ids.size() x d].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::vector<std::int32_t> ids) {
  detail::require_2d("embedding", table);
  const std::size_t V = table.rows(), d = table.cols();
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) + " outside table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = ids.size();
  return detail::make_result<T>("embedding", {n, d}, std::move(out), {table.ptr()}, [d, ids = std::move(ids)](Node<T>& self) {
    auto& pt = *self.parents[0];
    pt.ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) detail::axpy(d, T(1), self.grad.data() + i * d, pt.grad.data() + ids[i] * d);
  });
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_2d("concat", p);
    if (p.rows() != m) {
      throw DimensionError("concat: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) parents.push_back(p.ptr());
  return detail::make_result<T>("concat", {m, total}, std::move(out), std::move(parents),
                                [m, total, widths](Node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    auto& p = *self.parents[k];
                                    if (p.requires_grad) {
                                      p.ensure_grad();
                                      for (std::size_t i = 0; i < m; ++i)
                                        detail::axpy(widths[k], T(1), self.grad.data() + i * total + off,
                                                     p.grad.data() + i * widths[k]);
                                    }
                                    off += widths[k];
                                  }
                                });
}

/// Columns [begin, end) of a rank-2 tensor.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_2d("slice_cols", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (begin >= end || end > n) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<T> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(a.data().data() + i * n + begin, w, out.data() + i * w);
  return detail::make_result<T>("slice_cols", {m, w}, std::move(out), {a.ptr()}, [m, n, w, begin](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) detail::axpy(w, T(1), self.grad.data() + i * w, pa.grad.data() + i * n + begin);
  });
}

/// Rows of a rank-2 tensor picked by index (repeats allowed).
template <class T>
Tensor<T> select_rows(const Tensor<T>& a, std::vector<std::size_t> idx) {
  detail::require_2d("select_rows", a);
  const std::size_t n = a.cols();
  if (idx.empty()) throw DimensionError("select_rows: empty index list");
  std::vector<T> out(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) throw DimensionError("select_rows: row index out of range for " + shape_str(a.shape()));
    std::copy_n(a.data().data() + idx[i] * n, n, out.data() + i * n);
  }
  const std::size_t r = idx.size();
  return detail::make_result<T>("select_rows", {r, n}, std::move(out), {a.ptr()}, [n, idx = std::move(idx)](Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) detail::axpy(n, T(1), self.grad.data() + i * n, pa.grad.data() + idx[i] * n);
  });
}

/// Row-wise select: row i comes from `a` when keep[i], else from `b`.
template <class T>
Tensor<T> where_rows(const std::vector<std::uint8_t>& keep, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("where_rows", a.shape(), b.shape());
  detail::require_2d("where_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  detail::require(keep.size() == m, "where_rows", "mask length does not match rows of " + shape_str(a.shape()));
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy_n((keep[i] ? a : b).data().data() + i * n, n, out.data() + i * n);
  return detail::make_result<T>("where_rows", a.shape(), std::move(out), {a.ptr(), b.ptr()}, [m, n, keep](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        if (static_cast<bool>(keep[i]) == (k == 0)) detail::axpy(n, T(1), self.grad.data() + i * n, p.grad.data() + i * n);
    }
  });
}

/// Zeroes rows where keep[i] is false.
template <class T>
Tensor<T> mask_rows(const Tensor<T>& a, const std::vector<std::uint8_t>& keep) {
  return where_rows(keep, a, Tensor<T>::zeros(a.shape()));
}

/// Interleaves per-step [B x d] tensors into [B*S x d] with row b*S + s.
template <class T>
Tensor<T> stack_steps(const std::vector<Tensor<T>>& steps) {
  if (steps.empty()) throw DimensionError("stack_steps: no steps");
  const std::size_t S = steps.size(), B = steps[0].rows(), d = steps[0].cols();
  for (const auto& s : steps) {
    detail::require_2d("stack_steps", s);
    detail::require_same("stack_steps", s.shape(), steps[0].shape());
  }
  std::vector<T> out(B * S * d);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t b = 0; b < B; ++b) std::copy_n(steps[s].data().data() + b * d, d, out.data() + (b * S + s) * d);
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& s : steps) parents.push_back(s.ptr());
  return detail::make_result<T>("stack_steps", {B * S, d}, std::move(out), std::move(parents), [B, S, d](Node<T>& self) {
    for (std::size_t s = 0; s < S; ++s) {
      auto& p = *self.parents[s];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t b = 0; b < B; ++b) detail::axpy(d, T(1), self.grad.data() + (b * S + s) * d, p.grad.data() + b * d);
    }
  });
}

/// scores[b, j] = <h[b], keys[b*S + j]> for h [B x n], keys [B*S x n].
template <class T>
Tensor<T> rows_dot(const Tensor<T>& h, const Tensor<T>& keys) {
  detail::require_2d("rows_dot", h);
  detail::require_2d("rows_dot", keys);
  const std::size_t B = h.rows(), n = h.cols();
  if (keys.cols() != n || keys.rows() % B != 0) {
    throw DimensionError("rows_dot: incompatible " + shape_str(h.shape()) + " and " + shape_str(keys.shape()));
  }
  const std::size_t S = keys.rows() / B;
  std::vector<T> out(B * S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < S; ++j) {
      const T* x = h.data().data() + b * n;
      const T* k = keys.data().data() + (b * S + j) * n;
      T s = 0;
      for (std::size_t q = 0; q < n; ++q) s += x[q] * k[q];
      out[b * S + j] = s;
    }
  return detail::make_result<T>("rows_dot", {B, S}, std::move(out), {h.ptr(), keys.ptr()}, [B, S, n](Node<T>& self) {
    auto& ph = *self.parents[0];
    auto& pk = *self.parents[1];
    if (ph.requires_grad) ph.ensure_grad();
    if (pk.requires_grad) pk.ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < S; ++j) {
        const T g = self.grad[b * S + j];
        if (ph.requires_grad) detail::axpy(n, g, pk.value.data() + (b * S + j) * n, ph.grad.data() + b * n);
        if (pk.requires_grad) detail::axpy(n, g, ph.value.data() + b * n, pk.grad.data() + (b * S + j) * n);
      }
  });
}

/// out[b] = sum_j w[b, j] * values[b*S + j] for w [B x S], values [B*S x d].
template <class T>
Tensor<T> weighted_rows(const Tensor<T>& w, const Tensor<T>& values) {
  detail::require_2d("weighted_rows", w);
  detail::require_2d("weighted_rows", values);
  const std::size_t B = w.rows(), S = w.cols(), d = values.cols();
  if (values.rows() != B * S) {
    throw DimensionError("weighted_rows: incompatible " + shape_str(w.shape()) + " and " + shape_str(values.shape()));
  }
  std::vector<T> out(B * d, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < S; ++j)
      detail::axpy(d, w[b * S + j], values.data().data() + (b * S + j) * d, out.data() + b * d);
  return detail::make_result<T>("weighted_rows", {B, d}, std::move(out), {w.ptr(), values.ptr()}, [B, S, d](Node<T>& self) {
    auto& pw = *self.parents[0];
    auto& pv = *self.parents[1];
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < S; ++j) {
          const T* g = self.grad.data() + b * d;
          const T* v = pv.value.data() + (b * S + j) * d;
          T s = 0;
          for (std::size_t q = 0; q < d; ++q) s += g[q] * v[q];
          pw.grad[b * S + j] += s;
        }
    }
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < S; ++j)
          detail::axpy(d, pw.value[b * S + j], self.grad.data() + b * d, pv.grad.data() + (b * S + j) * d);
    }
  });
}

}  // namespace unmt
