#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
//
// A Var is a handle to a graph node. Operations on Vars record a backward
// closure only when grad mode is on and at least one input requires a
// gradient, so frozen weights and inference paths build no graph.

#include "tsllm/core.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tsllm::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(const Matrix& grad, std::vector<NodePtr>& parents)>;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}
  explicit Var(Matrix value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Scalar item() const { return node_->value(0, 0); }

  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

inline Var constant(Matrix value) { return Var(std::move(value), false); }

inline Var scalar(Scalar v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

/// Builds an op node. `backward` receives the upstream gradient and the parent list.
inline Var make_op(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

/// Runs reverse accumulation from a 1x1 root. Leaf gradients accumulate across calls.
inline void backward(const Var& root, Scalar seed = 1.0) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward: root must be 1x1");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Matrix s(1, 1);
  s(0, 0) = seed;
  root.node()->accumulate(s);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(n->grad, n->parents);
  }
  // Interior gradients are scratch space; release them so a retained graph does not pin memory.
  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

namespace detail {
inline void push(NodePtr& p, const Matrix& g) {
  if (p->requires_grad) p->accumulate(g);
}
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     tsllm::detail::shape_str(a.rows(), a.cols()) + " vs " +
                     tsllm::detail::shape_str(b.rows(), b.cols()));
  }
}
}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + tsllm::detail::shape_str(a.rows(), a.cols()) + " x " +
                     tsllm::detail::shape_str(b.rows(), b.cols()));
  }
  return make_op(a.value() * b.value(), {a, b}, [](const Matrix& g, std::vector<NodePtr>& p) {
    if (p[0]->requires_grad) p[0]->accumulate(g * p[1]->value.transpose());
    if (p[1]->requires_grad) p[1]->accumulate(p[0]->value.transpose() * g);
  });
}

/// a * b^T, the layout of a (out x in) linear weight.
inline Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + tsllm::detail::shape_str(a.rows(), a.cols()) + " x " +
                     tsllm::detail::shape_str(b.rows(), b.cols()) + "^T");
  }
  return make_op(a.value() * b.value().transpose(), {a, b},
                 [](const Matrix& g, std::vector<NodePtr>& p) {
                   if (p[0]->requires_grad) p[0]->accumulate(g * p[1]->value);
                   if (p[1]->requires_grad) p[1]->accumulate(g.transpose() * p[0]->value);
                 });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a, b}, [](const Matrix& g, std::vector<NodePtr>& p) {
    detail::push(p[0], g);
    detail::push(p[1], g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a, b}, [](const Matrix& g, std::vector<NodePtr>& p) {
    detail::push(p[0], g);
    if (p[1]->requires_grad) p[1]->accumulate(-g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b},
                 [](const Matrix& g, std::vector<NodePtr>& p) {
                   if (p[0]->requires_grad) p[0]->accumulate(g.cwiseProduct(p[1]->value));
                   if (p[1]->requires_grad) p[1]->accumulate(g.cwiseProduct(p[0]->value));
                 });
}

inline Var scale(const Var& a, Scalar s) {
  return make_op(a.value() * s, {a}, [s](const Matrix& g, std::vector<NodePtr>& p) {
    p[0]->accumulate(g * s);
  });
}

/// a + r with r (1 x C) broadcast over rows.
inline Var add_row(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("add_row: bias width mismatch");
  Matrix v = a.value().rowwise() + r.value().row(0);
  return make_op(std::move(v), {a, r}, [](const Matrix& g, std::vector<NodePtr>& p) {
    detail::push(p[0], g);
    if (p[1]->requires_grad) p[1]->accumulate(g.colwise().sum());
  });
}

/// a * r with r (1 x C) broadcast over rows.
inline Var mul_row(const Var& a, const Var& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) throw ShapeError("mul_row: scale width mismatch");
  Matrix v = a.value().array().rowwise() * r.value().row(0).array();
  return make_op(std::move(v), {a, r}, [](const Matrix& g, std::vector<NodePtr>& p) {
    if (p[0]->requires_grad) {
      Matrix ga = g.array().rowwise() * p[1]->value.row(0).array();
      p[0]->accumulate(ga);
    }
    if (p[1]->requires_grad) p[1]->accumulate(g.cwiseProduct(p[0]->value).colwise().sum());
  });
}

namespace detail {
inline void require_scalar(const Var& s, const char* op) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError(std::string(op) + ": expected 1x1 operand");
}
}  // namespace detail

inline Var add_scalar(const Var& a, const Var& s) {
  detail::require_scalar(s, "add_scalar");
  Matrix v = a.value().array() + s.item();
  return make_op(std::move(v), {a, s}, [](const Matrix& g, std::vector<NodePtr>& p) {
    detail::push(p[0], g);
    if (p[1]->requires_grad) p[1]->accumulate(Matrix::Constant(1, 1, g.sum()));
  });
}

inline Var sub_scalar(const Var& a, const Var& s) {
  detail::require_scalar(s, "sub_scalar");
  Matrix v = a.value().array() - s.item();
  return make_op(std::move(v), {a, s}, [](const Matrix& g, std::vector<NodePtr>& p) {
    detail::push(p[0], g);
    if (p[1]->requires_grad) p[1]->accumulate(Matrix::Constant(1, 1, -g.sum()));
  });
}

inline Var mul_scalar(const Var& a, const Var& s) {
  detail::require_scalar(s, "mul_scalar");
  return make_op(a.value() * s.item(), {a, s}, [](const Matrix& g, std::vector<NodePtr>& p) {
    const Scalar sv = p[1]->value(0, 0);
    if (p[0]->requires_grad) p[0]->accumulate(g * sv);
    if (p[1]->requires_grad) p[1]->accumulate(Matrix::Constant(1, 1, g.cwiseProduct(p[0]->value).sum()));
  });
}

inline Var div_scalar(const Var& a, const Var& s) {
  detail::require_scalar(s, "div_scalar");
  const Scalar sv = s.item();
  return make_op(a.value() / sv, {a, s}, [](const Matrix& g, std::vector<NodePtr>& p) {
    const Scalar d = p[1]->value(0, 0);
    if (p[0]->requires_grad) p[0]->accumulate(g / d);
    if (p[1]->requires_grad) {
      p[1]->accumulate(Matrix::Constant(1, 1, -g.cwiseProduct(p[0]->value).sum() / (d * d)));
    }
  });
}

inline Var square(const Var& a) {
  return make_op(a.value().array().square().matrix(), {a},
                 [](const Matrix& g, std::vector<NodePtr>& p) {
                   p[0]->accumulate(2.0 * g.cwiseProduct(p[0]->value));
                 });
}

inline Var sum_all(const Var& a) {
  return make_op(Matrix::Constant(1, 1, a.value().sum()), {a},
                 [](const Matrix& g, std::vector<NodePtr>& p) {
                   p[0]->accumulate(Matrix::Constant(p[0]->value.rows(), p[0]->value.cols(), g(0, 0)));
                 });
}

inline Var mean_all(const Var& a) {
  const Scalar n = static_cast<Scalar>(a.value().size());
  return scale(sum_all(a), 1.0 / n);
}

/// Column means, (R x C) -> (1 x C).
inline Var mean_rows(const Var& a) {
  const Scalar n = static_cast<Scalar>(a.rows());
  return make_op(a.value().colwise().mean(), {a}, [n](const Matrix& g, std::vector<NodePtr>& p) {
    Matrix ga = g.replicate(p[0]->value.rows(), 1) / n;
    p[0]->accumulate(ga);
  });
}

// ---- structural -----------------------------------------------------------

inline Var transpose(const Var& a) {
  return make_op(a.value().transpose(), {a}, [](const Matrix& g, std::vector<NodePtr>& p) {
    p[0]->accumulate(g.transpose());
  });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  return make_op(a.value().middleRows(start, count), {a},
                 [start, count](const Matrix& g, std::vector<NodePtr>& p) {
                   Matrix ga = Matrix::Zero(p[0]->value.rows(), p[0]->value.cols());
                   ga.middleRows(start, count) = g;
                   p[0]->accumulate(ga);
                 });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  return make_op(a.value().middleCols(start, count), {a},
                 [start, count](const Matrix& g, std::vector<NodePtr>& p) {
                   Matrix ga = Matrix::Zero(p[0]->value.rows(), p[0]->value.cols());
                   ga.middleCols(start, count) = g;
                   p[0]->accumulate(ga);
                 });
}

inline Var element(const Var& a, Index r, Index c) {
  return make_op(Matrix::Constant(1, 1, a.value()(r, c)), {a},
                 [r, c](const Matrix& g, std::vector<NodePtr>& p) {
                   Matrix ga = Matrix::Zero(p[0]->value.rows(), p[0]->value.cols());
                   ga(r, c) = g(0, 0);
                   p[0]->accumulate(ga);
                 });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& v : parts) {
    if (v.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += v.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& v : parts) {
    offsets.push_back(off);
    if (v.rows() > 0) out.middleRows(off, v.rows()) = v.value();
    off += v.rows();
  }
  return make_op(std::move(out), parts, [offsets](const Matrix& g, std::vector<NodePtr>& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i]->requires_grad && p[i]->value.rows() > 0) {
        p[i]->accumulate(g.middleRows(offsets[i], p[i]->value.rows()));
      }
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& v : parts) {
    if (v.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += v.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& v : parts) {
    offsets.push_back(off);
    out.middleCols(off, v.cols()) = v.value();
    off += v.cols();
  }
  return make_op(std::move(out), parts, [offsets](const Matrix& g, std::vector<NodePtr>& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i]->requires_grad) p[i]->accumulate(g.middleCols(offsets[i], p[i]->value.cols()));
    }
  });
}

inline Var gather_rows(const Var& a, std::vector<Index> idx) {
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  }
  return make_op(std::move(out), {a}, [idx = std::move(idx)](const Matrix& g, std::vector<NodePtr>& p) {
    Matrix ga = Matrix::Zero(p[0]->value.rows(), p[0]->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Index>(i));
    p[0]->accumulate(ga);
  });
}

/// Row-major reshape; flatten is reshape(a, 1, size).
inline Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw ShapeError("reshape: element count mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_op(std::move(out), {a}, [](const Matrix& g, std::vector<NodePtr>& p) {
    Matrix ga = Eigen::Map<const Matrix>(g.data(), p[0]->value.rows(), p[0]->value.cols());
    p[0]->accumulate(ga);
  });
}

inline Var flatten(const Var& a) { return reshape(a, 1, a.value().size()); }

/// Overlapping windows of a column vector: row i = x[i*stride, i*stride + len).
inline Var patchify(const Var& x, Index len, Index stride) {
  if (x.cols() != 1) throw ShapeError("patchify: expected a column vector");
  const Index n = x.rows();
  if (len < 1 || stride < 1 || len > n) throw ShapeError("patchify: invalid patch geometry");
  const Index count = (n - len) / stride + 1;
  Matrix out(count, len);
  for (Index i = 0; i < count; ++i) out.row(i) = x.value().col(0).segment(i * stride, len).transpose();
  return make_op(std::move(out), {x}, [len, stride, count](const Matrix& g, std::vector<NodePtr>& p) {
    Matrix gx = Matrix::Zero(p[0]->value.rows(), 1);
    for (Index i = 0; i < count; ++i) gx.col(0).segment(i * stride, len) += g.row(i).transpose();
    p[0]->accumulate(gx);
  });
}

// ---- neural primitives ----------------------------------------------------

/// Row-wise layer normalization with affine (1 x C) gamma and beta.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Scalar eps) {
  const Index C = x.cols();
  if (gamma.cols() != C || beta.cols() != C || gamma.rows() != 1 || beta.rows() != 1) {
    throw ShapeError("layer_norm: parameter width mismatch");
  }
  const Matrix& xv = x.value();
  Vector mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  Vector inv_std = ((centered.array().square().rowwise().sum() / static_cast<Scalar>(C)) + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat, inv_std, C](const Matrix& g, std::vector<NodePtr>& p) {
                   if (p[1]->requires_grad) p[1]->accumulate(g.cwiseProduct(xhat).colwise().sum());
                   if (p[2]->requires_grad) p[2]->accumulate(g.colwise().sum());
                   if (p[0]->requires_grad) {
                     Matrix gx_hat = g.array().rowwise() * p[1]->value.row(0).array();
                     Vector m1 = gx_hat.rowwise().mean();
                     Vector m2 = gx_hat.cwiseProduct(xhat).rowwise().mean();
                     Matrix gx = (gx_hat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix();
                     gx = gx.array().colwise() * inv_std.array();
                     p[0]->accumulate(gx);
                   }
                   (void)C;
                 });
}

/// GELU, tanh approximation (the GPT-2 activation).
inline Var gelu(const Var& x) {
  constexpr Scalar k = 0.044715;
  const Scalar c = std::sqrt(2.0 / std::numbers::pi);
  Matrix t = (c * (x.value().array() + k * x.value().array().cube())).tanh();
  Matrix out = 0.5 * x.value().array() * (1.0 + t.array());
  return make_op(std::move(out), {x}, [t, c](const Matrix& g, std::vector<NodePtr>& p) {
    const auto xa = p[0]->value.array();
    Matrix d = 0.5 * (1.0 + t.array()) +
               0.5 * xa * (1.0 - t.array().square()) * c * (1.0 + 3.0 * k * xa.square());
    p[0]->accumulate(g.cwiseProduct(d));
  });
}

/// Row softmax with a causal mask: entry (i, j) for j > i is excluded.
inline Var causal_softmax(const Var& x) {
  const Index L = x.rows();
  if (x.cols() != L) throw ShapeError("causal_softmax: expected a square score matrix");
  Matrix out = Matrix::Zero(L, L);
  for (Index i = 0; i < L; ++i) {
    auto row = x.value().row(i).head(i + 1);
    const Scalar m = row.maxCoeff();
    auto e = (row.array() - m).exp();
    out.row(i).head(i + 1) = e / e.sum();
  }
  Matrix probs = out;
  return make_op(std::move(out), {x}, [probs](const Matrix& g, std::vector<NodePtr>& p) {
    Vector dot = g.cwiseProduct(probs).rowwise().sum();
    Matrix gx = probs.array() * (g.colwise() - dot).array();
    p[0]->accumulate(gx);
  });
}

/// Pairwise cosine similarity between rows of a (n x d) and rows of b (k x d) -> (n x k).
inline Var cosine_rows(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("cosine_rows: dimension mismatch");
  Vector na = a.value().rowwise().norm();
  Vector nb = b.value().rowwise().norm();
  if ((na.array() <= 0.0).any() || (nb.array() <= 0.0).any()) {
    throw ZeroNormError("cosine similarity of a zero-norm vector");
  }
  Matrix an = a.value().array().colwise() / na.array();
  Matrix bn = b.value().array().colwise() / nb.array();
  Matrix s = an * bn.transpose();
  return make_op(s, {a, b}, [an, bn, na, nb, s](const Matrix& g, std::vector<NodePtr>& p) {
    Matrix gs = g.cwiseProduct(s);
    if (p[0]->requires_grad) {
      Vector rs = gs.rowwise().sum();
      Matrix ga = g * bn - Matrix(an.array().colwise() * rs.array());
      ga = ga.array().colwise() / na.array();
      p[0]->accumulate(ga);
    }
    if (p[1]->requires_grad) {
      Vector cs = gs.colwise().sum().transpose();
      Matrix gb = g.transpose() * an - Matrix(bn.array().colwise() * cs.array());
      gb = gb.array().colwise() / nb.array();
      p[1]->accumulate(gb);
    }
  });
}

/// Pairwise negated Euclidean distance -||a_i - b_j|| -> (n x k).
inline Var neg_euclidean_rows(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeError("neg_euclidean_rows: dimension mismatch");
  const Index n = a.rows();
  const Index k = b.rows();
  Matrix d(n, k);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < k; ++j) d(i, j) = (a.value().row(i) - b.value().row(j)).norm();
  }
  Matrix out = -d;
  return make_op(std::move(out), {a, b}, [d](const Matrix& g, std::vector<NodePtr>& p) {
    // w_ij = g_ij / d_ij; a zero distance contributes no gradient.
    Matrix w = Matrix::Zero(d.rows(), d.cols());
    for (Index i = 0; i < d.rows(); ++i) {
      for (Index j = 0; j < d.cols(); ++j) {
        if (d(i, j) > 0.0) w(i, j) = g(i, j) / d(i, j);
      }
    }
    const Matrix& av = p[0]->value;
    const Matrix& bv = p[1]->value;
    if (p[0]->requires_grad) {
      Vector rs = w.rowwise().sum();
      Matrix ga = w * bv - Matrix(av.array().colwise() * rs.array());
      p[0]->accumulate(ga);
    }
    if (p[1]->requires_grad) {
      Vector cs = w.colwise().sum().transpose();
      Matrix gb = w.transpose() * av - Matrix(bv.array().colwise() * cs.array());
      p[1]->accumulate(gb);
    }
  });
}

}  // namespace tsllm::ag
