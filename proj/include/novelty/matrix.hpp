#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "novelty/errors.hpp"

namespace novelty {

// Dense row-major matrix of doubles. One row per sample throughout the library.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Rows of `m` selected by `indices`, in the given order.
inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) throw ShapeError("select_rows: index out of range");
    std::copy_n(m.row(indices[i]).begin(), m.cols(), out.row(i).begin());
  }
  return out;
}

// Vertical concatenation.
inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  if (top.cols() != bottom.cols()) throw ShapeError("stack_rows: column mismatch");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.data().begin(), top.data().end(), out.data().begin());
  std::copy(bottom.data().begin(), bottom.data().end(),
            out.data().begin() + static_cast<std::ptrdiff_t>(top.size()));
  return out;
}

// Rows [begin, end) as a new matrix.
inline Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  if (begin > end || end > m.rows()) throw ShapeError("slice_rows: bad range");
  Matrix out(end - begin, m.cols());
  std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
            m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()),
            out.data().begin());
  return out;
}

// out = a * b^T, where a is (n x in) and b is (out x in). Fixed summation order.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_transposed: inner dimension " +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    auto orow = out.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto br = b.row(j);
      double acc = 0.0;
      for (std::size_t t = 0; t < ar.size(); ++t) acc += ar[t] * br[t];
      orow[j] = acc;
    }
  }
  return out;
}

// out = a * b, where a is (n x m) and b is (m x p).
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t t = 0; t < a.cols(); ++t) {
      const double av = a(i, t);
      if (av == 0.0) continue;
      const auto brow = b.row(t);
      for (std::size_t j = 0; j < orow.size(); ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

// out += a^T * b, where a is (n x p) and b is (n x m); out is (p x m).
inline void accumulate_transposed_product(const Matrix& a, const Matrix& b,
                                          Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols())
    throw ShapeError("accumulate_transposed_product: shape mismatch");
  for (std::size_t n = 0; n < a.rows(); ++n) {
    const auto arow = a.row(n);
    const auto brow = b.row(n);
    for (std::size_t p = 0; p < arow.size(); ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      auto orow = out.row(p);
      for (std::size_t m = 0; m < brow.size(); ++m) orow[m] += av * brow[m];
    }
  }
}

}  // namespace novelty
