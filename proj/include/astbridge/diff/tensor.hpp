#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "astbridge/error.hpp"

namespace astbridge::diff {

// Dense row-major tensor. Rank 0, 1 and 2 are supported by the operators;
// a rank-1 tensor of extent n behaves as a 1 x n row.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : shape_{rows, cols}, data_(rows * cols, fill) {}

  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0))
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>()), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (n != data_.size()) throw ShapeMismatch("tensor data does not match its shape");
  }

  static Tensor row(std::vector<Real> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }
  static Tensor scalar(Real v) { return Tensor(1, 1, v); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    if (shape_.size() == 2) return shape_[0];
    return 1;
  }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    return 1;
  }
  bool same_shape(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::span<Real> row_span(std::size_t r) { return std::span<Real>(data_).subspan(r * cols(), cols()); }
  std::span<const Real> row_span(std::size_t r) const {
    return std::span<const Real>(data_).subspan(r * cols(), cols());
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    if (o.size() != size()) throw ShapeMismatch("+= on tensors of different size");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

// C (+)= A * B for row-major matrices.
template <class Real>
void gemm_accumulate(const Tensor<Real>& a, const Tensor<Real>& b, Tensor<Real>& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const Real* A = a.data().data();
  const Real* B = b.data().data();
  Real* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A[i * k + p];
      if (av == Real(0)) continue;
      const Real* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T. B is transposed into a scratch buffer first so the inner
// loop is a contiguous axpy rather than a dot-product reduction.
template <class Real>
void gemm_nt_accumulate(const Tensor<Real>& a, const Tensor<Real>& b, Tensor<Real>& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<Real> bt(k * n);
  const Real* B = b.data().data();
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = B[j * k + p];
  const Real* A = a.data().data();
  Real* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A[i * k + p];
      if (av == Real(0)) continue;
      const Real* brow = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B.
template <class Real>
void gemm_tn_accumulate(const Tensor<Real>& a, const Tensor<Real>& b, Tensor<Real>& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const Real* A = a.data().data();
  const Real* B = b.data().data();
  Real* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const Real* brow = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A[i * k + p];
      if (av == Real(0)) continue;
      Real* crow = C + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace astbridge::diff
