#pragma once

// Reverse-mode differentiation over a linear computation record ("tape").
// Each operator appends one node holding its forward value and a closure
// that pushes the node's gradient into its inputs. Nodes are appended in
// topological order, so backward() is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "astbridge/diff/tensor.hpp"
#include "astbridge/error.hpp"
#include "astbridge/random.hpp"

namespace astbridge::diff {

template <class Real>
class Tape;

template <class Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::size_t index = 0;

  const Tensor<Real>& value() const { return tape->value(index); }
  const Tensor<Real>& grad() const { return tape->grad(index); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(index); }
  Real item() const { return value()[0]; }
};

template <class Real>
class Tape {
 public:
  using Mat = Tensor<Real>;
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Mat value) { return push("constant", std::move(value), nullptr, false, {}); }
  Var<Real> variable(Mat value) { return push("variable", std::move(value), nullptr, true, {}); }

  // Leaf that reads an externally owned tensor (a model parameter). The
  // tensor must outlive the tape.
  Var<Real> parameter(const Mat& value, bool requires_grad = true) {
    return push("parameter", Mat(), &value, requires_grad, {});
  }

  const Mat& value(std::size_t i) const {
    const Node& n = nodes_.at(i);
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t i) const { return nodes_.at(i).requires_grad; }

  // Gradient of the last backward() target w.r.t. node i; zeros if none flowed.
  const Mat& grad(std::size_t i) {
    Node& n = nodes_.at(i);
    if (n.grad.empty()) n.grad = Mat(value(i).shape(), Real(0));
    return n.grad;
  }

  Mat& grad_mut(std::size_t i) {
    Node& n = nodes_.at(i);
    if (n.grad.empty()) n.grad = Mat(value(i).shape(), Real(0));
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Records an operator result. The closure runs only when some input
  // requires a gradient.
  Var<Real> record(const char* op, Mat value, std::span<const Var<Real>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& v : inputs) {
      if (v.tape != this) throw Error(std::string(op) + ": operands live on different tapes");
      needs = needs || nodes_[v.index].requires_grad;
    }
    if (!value.all_finite()) throw NonFiniteValue(std::string(op) + " produced a non-finite value");
    return push(op, std::move(value), nullptr, needs, needs ? std::move(fn) : BackwardFn{});
  }

  Var<Real> record(const char* op, Mat value, std::initializer_list<Var<Real>> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var<Real>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  // Populates gradients of every node that requires them, seeded with
  // d(loss)/d(loss) = 1. Saved closures are released afterwards.
  void backward(Var<Real> loss) {
    if (loss.tape != this) throw Error("backward: loss lives on another tape");
    if (value(loss.index).size() != 1) throw ShapeMismatch("backward: loss must be a scalar");
    if (released_) throw Error("backward: computation record already released");
    for (auto& n : nodes_) n.grad = Mat();
    grad_mut(loss.index).fill(Real(1));
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
    for (auto& n : nodes_) n.backward = nullptr;
    released_ = true;
  }

 private:
  struct Node {
    const char* op;
    Mat value;
    const Mat* external;
    Mat grad;
    bool requires_grad;
    BackwardFn backward;
  };

  Var<Real> push(const char* op, Mat value, const Mat* external, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{op, std::move(value), external, Mat(), requires_grad, std::move(fn)});
    return Var<Real>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool released_ = false;
};

namespace detail {

template <class Real>
Tape<Real>& tape_of(const Var<Real>& a) {
  if (!a.tape) throw Error("operation on an unbound variable");
  return *a.tape;
}

template <class Real>
void require_same_shape(const char* op, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string() + " differ");
  }
}

template <class Real>
Tensor<Real> like(const Tensor<Real>& a, Real fill = Real(0)) {
  return Tensor<Real>(a.rows(), a.cols(), fill);
}

// Elementwise unary op with derivative expressed through (x, y).
template <class Real, class F, class D>
Var<Real> unary(const char* op, Var<Real> a, F f, D dfdx) {
  auto& t = tape_of(a);
  const auto& x = a.value();
  Tensor<Real> y = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.index;
  return t.record(op, std::move(y), {a}, [ia, dfdx](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(ia);
    const auto& y = t.value(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) {
    throw ShapeMismatch("matmul: " + A.shape_string() + " x " + B.shape_string());
  }
  Tensor<Real> C(A.rows(), B.cols());
  gemm_accumulate(A, B, C);
  const std::size_t ia = a.index, ib = b.index;
  return t.record("matmul", std::move(C), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) gemm_nt_accumulate(g, t.value(ib), t.grad_mut(ia));
    if (t.requires_grad(ib)) gemm_tn_accumulate(t.value(ia), g, t.grad_mut(ib));
  });
}

template <class Real>
Var<Real> transpose(Var<Real> a) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  Tensor<Real> T(A.cols(), A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) T(c, r) = A(r, c);
  const std::size_t ia = a.index;
  return t.record("transpose", std::move(T), {a}, [ia](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  auto& t = detail::tape_of(a);
  detail::require_same_shape("add", a.value(), b.value());
  Tensor<Real> y = a.value();
  y += b.value();
  const std::size_t ia = a.index, ib = b.index;
  return t.record("add", std::move(y), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_mut(ia) += g;
    if (t.requires_grad(ib)) t.grad_mut(ib) += g;
  });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  auto& t = detail::tape_of(a);
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor<Real> y = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= B[i];
  const std::size_t ia = a.index, ib = b.index;
  return t.record("sub", std::move(y), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_mut(ia) += g;
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

// Hadamard product.
template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  auto& t = detail::tape_of(a);
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor<Real> y = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= B[i];
  const std::size_t ia = a.index, ib = b.index;
  return t.record("mul", std::move(y), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_mut(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

// scale * a + shift
template <class Real>
Var<Real> affine(Var<Real> a, Real scale, Real shift = Real(0)) {
  auto& t = detail::tape_of(a);
  Tensor<Real> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = scale * y[i] + shift;
  const std::size_t ia = a.index;
  return t.record("affine", std::move(y), {a}, [ia, scale](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += scale * g[i];
  });
}

// a (m x n) + bias (1 x n) broadcast over rows.
template <class Real>
Var<Real> add_rowwise(Var<Real> a, Var<Real> bias) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  const auto& b = bias.value();
  if (b.rows() != 1 || b.cols() != A.cols()) {
    throw ShapeMismatch("add_rowwise: " + A.shape_string() + " + " + b.shape_string());
  }
  Tensor<Real> y = A;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += b[c];
  const std::size_t ia = a.index, ib = bias.index;
  return t.record("add_rowwise", std::move(y), {a, bias}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_mut(ia) += g;
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

// a (m x n) * gain (1 x n) broadcast over rows.
template <class Real>
Var<Real> mul_rowwise(Var<Real> a, Var<Real> gain) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  const auto& w = gain.value();
  if (w.rows() != 1 || w.cols() != A.cols()) {
    throw ShapeMismatch("mul_rowwise: " + A.shape_string() + " * " + w.shape_string());
  }
  Tensor<Real> y = A;
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) *= w[c];
  const std::size_t ia = a.index, iw = gain.index;
  return t.record("mul_rowwise", std::move(y), {a, gain}, [ia, iw](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& A = t.value(ia);
    const auto& w = t.value(iw);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_mut(ia);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c) * w[c];
    }
    if (t.requires_grad(iw)) {
      auto& gw = t.grad_mut(iw);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gw[c] += g(r, c) * A(r, c);
    }
  });
}

// e(i, j) = col_a(i) + col_b(j) for column vectors a (m x 1), b (n x 1).
template <class Real>
Var<Real> outer_add(Var<Real> a, Var<Real> b) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != 1 || B.cols() != 1) {
    throw ShapeMismatch("outer_add expects column vectors, got " + A.shape_string() + ", " + B.shape_string());
  }
  Tensor<Real> y(A.rows(), B.rows());
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < B.rows(); ++j) y(i, j) = A[i] + B[j];
  const std::size_t ia = a.index, ib = b.index;
  return t.record("outer_add", std::move(y), {a, b}, [ia, ib](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_mut(ia);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga[i] += g(i, j);
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

template <class Real>
Var<Real> concat_cols(std::span<const Var<Real>> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  auto& t = detail::tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor<Real> y(rows, cols);
  std::vector<std::size_t> idx, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) y(r, off + c) = v(r, c);
    idx.push_back(p.index);
    offsets.push_back(off);
    off += v.cols();
  }
  return t.record("concat_cols", std::move(y), parts, [idx, offsets](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (!t.requires_grad(idx[k])) continue;
      auto& gp = t.grad_mut(idx[k]);
      for (std::size_t r = 0; r < gp.rows(); ++r)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(r, c) += g(r, offsets[k] + c);
    }
  });
}

template <class Real>
Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
  const Var<Real> parts[] = {a, b};
  return concat_cols<Real>(std::span<const Var<Real>>(parts));
}

// Rows [begin, begin + count) of a.
template <class Real>
Var<Real> slice_rows(Var<Real> a, std::size_t begin, std::size_t count) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  if (begin + count > A.rows()) throw ShapeMismatch("slice_rows out of range");
  Tensor<Real> y(count, A.cols());
  std::copy_n(A.data().begin() + static_cast<std::ptrdiff_t>(begin * A.cols()), count * A.cols(),
              y.data().begin());
  const std::size_t ia = a.index;
  return t.record("slice_rows", std::move(y), {a}, [ia, begin](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(ia);
    const std::size_t off = begin * ga.cols();
    for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

// Column means: (m x n) -> (1 x n).
template <class Real>
Var<Real> mean_rows(Var<Real> a) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  if (A.rows() == 0) throw ShapeMismatch("mean_rows of an empty matrix");
  Tensor<Real> y(1, A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) y[c] += A(r, c);
  const Real inv = Real(1) / static_cast<Real>(A.rows());
  for (std::size_t c = 0; c < A.cols(); ++c) y[c] *= inv;
  const std::size_t ia = a.index;
  return t.record("mean_rows", std::move(y), {a}, [ia, inv](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[c] * inv;
  });
}

template <class Real>
Var<Real> sum_all(Var<Real> a) {
  auto& t = detail::tape_of(a);
  Real s = 0;
  for (Real v : a.value().data()) s += v;
  const std::size_t ia = a.index;
  return t.record("sum_all", Tensor<Real>::scalar(s), {a}, [ia](Tape<Real>& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

// Single element as a 1 x 1 tensor.
template <class Real>
Var<Real> pick(Var<Real> a, std::size_t r, std::size_t c) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  if (r >= A.rows() || c >= A.cols()) throw ShapeMismatch("pick out of range");
  const std::size_t ia = a.index, flat = r * A.cols() + c;
  return t.record("pick", Tensor<Real>::scalar(A[flat]), {a}, [ia, flat](Tape<Real>& t, std::size_t self) {
    t.grad_mut(ia)[flat] += t.grad(self)[0];
  });
}

// Embedding lookup: row i of the result is table row indices[i].
template <class Real>
Var<Real> gather_rows(Var<Real> table, std::vector<std::size_t> indices) {
  auto& t = detail::tape_of(table);
  const auto& T = table.value();
  Tensor<Real> y(indices.size(), T.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= T.rows()) throw ShapeMismatch("gather_rows index out of range");
    std::copy_n(T.row_span(indices[i]).begin(), T.cols(), y.row_span(i).begin());
  }
  const std::size_t it = table.index;
  return t.record("gather_rows", std::move(y), {table},
                  [it, idx = std::move(indices)](Tape<Real>& t, std::size_t self) {
                    const auto& g = t.grad(self);
                    auto& gt = t.grad_mut(it);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      auto src = g.row_span(i);
                      auto dst = gt.row_span(idx[i]);
                      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                    }
                  });
}

// Row i of the result is the mean of the table rows in lists[i]; an empty
// list yields a zero row.
template <class Real>
Var<Real> gather_mean_rows(Var<Real> table, std::vector<std::vector<std::size_t>> lists) {
  auto& t = detail::tape_of(table);
  const auto& T = table.value();
  Tensor<Real> y(lists.size(), T.cols());
  for (std::size_t i = 0; i < lists.size(); ++i) {
    if (lists[i].empty()) continue;
    const Real inv = Real(1) / static_cast<Real>(lists[i].size());
    auto dst = y.row_span(i);
    for (std::size_t k : lists[i]) {
      if (k >= T.rows()) throw ShapeMismatch("gather_mean_rows index out of range");
      auto src = T.row_span(k);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += inv * src[c];
    }
  }
  const std::size_t it = table.index;
  return t.record("gather_mean_rows", std::move(y), {table},
                  [it, lists = std::move(lists)](Tape<Real>& t, std::size_t self) {
                    const auto& g = t.grad(self);
                    auto& gt = t.grad_mut(it);
                    for (std::size_t i = 0; i < lists.size(); ++i) {
                      if (lists[i].empty()) continue;
                      const Real inv = Real(1) / static_cast<Real>(lists[i].size());
                      auto src = g.row_span(i);
                      for (std::size_t k : lists[i]) {
                        auto dst = gt.row_span(k);
                        for (std::size_t c = 0; c < src.size(); ++c) dst[c] += inv * src[c];
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <class Real>
Var<Real> relu(Var<Real> a) {
  return detail::unary<Real>(
      "relu", a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
Var<Real> leaky_relu(Var<Real> a, Real slope) {
  return detail::unary<Real>(
      "leaky_relu", a, [slope](Real x) { return x > Real(0) ? x : slope * x; },
      [slope](Real x, Real) { return x > Real(0) ? Real(1) : slope; });
}

template <class Real>
Var<Real> sigmoid(Var<Real> a) {
  return detail::unary<Real>(
      "sigmoid", a,
      [](Real x) {
        if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
        const Real e = std::exp(x);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Var<Real> tanh(Var<Real> a) {
  return detail::unary<Real>(
      "tanh", a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real(1) - y * y; });
}

// Square root clamped at zero; the subgradient at zero is taken as zero.
template <class Real>
Var<Real> sqrt(Var<Real> a) {
  return detail::unary<Real>(
      "sqrt", a, [](Real x) { return x > Real(0) ? std::sqrt(x) : Real(0); },
      [](Real, Real y) { return y > Real(0) ? Real(0.5) / y : Real(0); });
}

template <class Real>
Var<Real> log(Var<Real> a) {
  for (Real v : a.value().data()) {
    if (!(v > Real(0))) throw NonFiniteValue("log of a non-positive value");
  }
  return detail::unary<Real>(
      "log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <class Real>
Var<Real> softmax_rows(Var<Real> a) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  Tensor<Real> y = A;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row_span(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real s = 0;
    for (Real& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (Real& v : row) v /= s;
  }
  const std::size_t ia = a.index;
  return t.record("softmax_rows", std::move(y), {a}, [ia](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

template <class Real>
Var<Real> log_softmax_rows(Var<Real> a) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  Tensor<Real> y = A;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row_span(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real s = 0;
    for (Real v : row) s += std::exp(v - mx);
    const Real lse = mx + std::log(s);
    for (Real& v : row) v -= lse;
  }
  const std::size_t ia = a.index;
  return t.record("log_softmax_rows", std::move(y), {a}, [ia](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      Real gs = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
    }
  });
}

// Per-row standardization (no affine part; compose with mul_rowwise and
// add_rowwise for gain and bias).
template <class Real>
Var<Real> layer_norm(Var<Real> a, Real eps = Real(1e-5)) {
  auto& t = detail::tape_of(a);
  const auto& A = a.value();
  const std::size_t n = A.cols();
  Tensor<Real> y(A.rows(), n);
  std::vector<Real> inv_std(A.rows());
  for (std::size_t r = 0; r < A.rows(); ++r) {
    auto x = A.row_span(r);
    Real mean = 0;
    for (Real v : x) mean += v;
    mean /= static_cast<Real>(n);
    Real var = 0;
    for (Real v : x) var += (v - mean) * (v - mean);
    var /= static_cast<Real>(n);
    inv_std[r] = Real(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) y(r, c) = (x[c] - mean) * inv_std[r];
  }
  const std::size_t ia = a.index;
  return t.record("layer_norm", std::move(y), {a}, [ia, inv_std](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad_mut(ia);
    const Real n = static_cast<Real>(y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      Real mg = 0, mgy = 0;
      for (std::size_t c = 0; c < y.cols(); ++c) {
        mg += g(r, c);
        mgy += g(r, c) * y(r, c);
      }
      mg /= n;
      mgy /= n;
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += inv_std[r] * (g(r, c) - mg - y(r, c) * mgy);
    }
  });
}

// Inverted dropout: in training mode each entry is zeroed with probability p
// and survivors are scaled by 1 / (1 - p). Identity otherwise.
template <class Real>
Var<Real> dropout(Var<Real> a, double p, bool train, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw Error("dropout probability must lie in [0, 1)");
  if (!train || p == 0.0) return a;
  auto& t = detail::tape_of(a);
  Rng rng(seed);
  const auto& A = a.value();
  Tensor<Real> mask = detail::like(A);
  const Real keep_scale = Real(1) / static_cast<Real>(1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? Real(0) : keep_scale;
  Tensor<Real> y = A;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  const std::size_t ia = a.index;
  return t.record("dropout", std::move(y), {a}, [ia, mask = std::move(mask)](Tape<Real>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Similarities and distances between row vectors (1 x n)

template <class Real>
Var<Real> cosine_sim(Var<Real> a, Var<Real> b) {
  auto& t = detail::tape_of(a);
  detail::require_same_shape("cosine_sim", a.value(), b.value());
  const auto& A = a.value();
  const auto& B = b.value();
  Real dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    dot += A[i] * B[i];
    na += A[i] * A[i];
    nb += B[i] * B[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const Real tiny = Real(1e-12);
  const Real denom = std::max(na, tiny) * std::max(nb, tiny);
  const Real c = dot / denom;
  const std::size_t ia = a.index, ib = b.index;
  return t.record("cosine_sim", Tensor<Real>::scalar(c), {a, b},
                  [ia, ib, na, nb, c, denom, tiny](Tape<Real>& t, std::size_t self) {
                    const Real g = t.grad(self)[0];
                    const auto& A = t.value(ia);
                    const auto& B = t.value(ib);
                    if (t.requires_grad(ia) && na > tiny) {
                      auto& ga = t.grad_mut(ia);
                      for (std::size_t i = 0; i < A.size(); ++i)
                        ga[i] += g * (B[i] / denom - c * A[i] / (na * na));
                    }
                    if (t.requires_grad(ib) && nb > tiny) {
                      auto& gb = t.grad_mut(ib);
                      for (std::size_t i = 0; i < B.size(); ++i)
                        gb[i] += g * (A[i] / denom - c * B[i] / (nb * nb));
                    }
                  });
}

// ||a - b||_2 as a 1 x 1 tensor; the subgradient at a == b is zero.
template <class Real>
Var<Real> euclidean_distance(Var<Real> a, Var<Real> b) {
  auto& t = detail::tape_of(a);
  detail::require_same_shape("euclidean_distance", a.value(), b.value());
  const auto& A = a.value();
  const auto& B = b.value();
  Real sq = 0;
  for (std::size_t i = 0; i < A.size(); ++i) sq += (A[i] - B[i]) * (A[i] - B[i]);
  const Real d = std::sqrt(sq);
  const std::size_t ia = a.index, ib = b.index;
  return t.record("euclidean_distance", Tensor<Real>::scalar(d), {a, b}, [ia, ib, d](Tape<Real>& t, std::size_t self) {
    if (d == Real(0)) return;
    const Real g = t.grad(self)[0] / d;
    const auto& A = t.value(ia);
    const auto& B = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_mut(ia);
      for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g * (A[i] - B[i]);
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_mut(ib);
      for (std::size_t i = 0; i < A.size(); ++i) gb[i] -= g * (A[i] - B[i]);
    }
  });
}

}  // namespace astbridge::diff
