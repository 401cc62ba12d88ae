#pragma once

// shared test utilities: finite-difference gradient checking and small
// independent oracles. Everything here is deliberately written against
// the math, not against the library internals it checks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ncx/matrix.hpp"
#include "ncx/rng.hpp"
#include "ncx/tensor.hpp"

namespace ncx::testing {

/// Central finite differences against the analytic gradient. `make_loss`
/// rebuilds the scalar loss graph from the current leaf values.
template <typename F>
double fd_max_rel_err(F&& make_loss, const std::vector<TensorPtr>& leaves, double h = 1e-5) {
  for (const auto& p : leaves) p->zero_grad();
  TensorPtr loss = make_loss();
  backward(loss);
  double worst = 0.0;
  for (const auto& p : leaves) {
    for (std::size_t j = 0; j < p->data.size(); ++j) {
      const double orig = p->data[j];
      p->data[j] = orig + h;
      const double up = make_loss()->value();
      p->data[j] = orig - h;
      const double down = make_loss()->value();
      p->data[j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad.empty() ? 0.0 : p->grad[j];
      const double err = std::fabs(numeric - analytic) /
                         std::max({std::fabs(numeric), std::fabs(analytic), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline TensorPtr random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad = true,
                               double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return make_tensor(std::move(shape), std::move(v), requires_grad);
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& x : m.v) x = rng.uniform(lo, hi);
  return m;
}

/// Naive triple-loop product, independent of the library kernels.
inline Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a.v[i] - b.v[i]));
  return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

}  // namespace ncx::testing
