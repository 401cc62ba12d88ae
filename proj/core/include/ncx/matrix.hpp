#pragma once

#include <cstddef>
#include <vector>

#include "ncx/errors.hpp"

namespace ncx {

/// Plain row-major f64 matrix for data living outside the autodiff graph.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), v(std::move(values)) {
    if (v.size() != rows * cols) throw DimensionError("Matrix: data length does not match shape");
  }

  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  Matrix row(std::size_t i) const {
    Matrix out(1, cols);
    for (std::size_t j = 0; j < cols; ++j) out(0, j) = (*this)(i, j);
    return out;
  }

  /// Single-column matrix from a flat vector.
  static Matrix column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Matrix(n, 1, std::move(values));
  }
};

inline bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
}

}  // namespace ncx
