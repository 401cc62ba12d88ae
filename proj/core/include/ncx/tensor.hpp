#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ncx/matrix.hpp"

namespace ncx {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major f64 tensor that doubles as a node in a dynamically
/// built reverse-mode differentiation graph. The graph is carried by the
/// nodes themselves: each node owns references to the nodes it was
/// computed from, so parents always precede their children and the
/// structure reachable from a loss node is exactly its computation DAG.
///
/// A tensor/graph is single-threaded during construction and backward;
/// distinct graphs may live on distinct threads.
class Tensor {
public:
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;  ///< gradient is accumulated here on backward
  std::vector<double> grad;    ///< leaf gradients persist across passes
  std::string name;            ///< optional label used in diagnostics

  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_op;  ///< pushes this->grad into parents

  bool active = false;  ///< internal per-pass flag managed by backward()

  Tensor() = default;
  Tensor(std::vector<std::size_t> shp, std::vector<double> values, bool req_grad = false);

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  bool is_matrix() const { return shape.size() == 2; }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return data.size() == 1; }
  bool is_leaf() const { return parents.empty(); }

  /// Contents of a scalar tensor; ContractError otherwise.
  double value() const;

  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  /// Gradient buffer, allocated (zeroed) on first use.
  std::vector<double>& grad_buffer();
  void zero_grad();

  Matrix to_matrix() const;
};

// construction
TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad = false, std::string name = {});
TensorPtr make_scalar(double v, bool requires_grad = false, std::string name = {});
TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false, std::string name = {});
TensorPtr from_matrix(const Matrix& m, bool requires_grad = false, std::string name = {});

// matrix product; backward accumulates dA = dC Bᵀ and dB = Aᵀ dC
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

// elementwise with limited broadcasting: equal shapes, or one operand is a
// scalar or a row vector matching the other's trailing dimension
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr add(const TensorPtr& a, double b);
TensorPtr mul(const TensorPtr& a, double b);

TensorPtr relu(const TensorPtr& x);
TensorPtr exp(const TensorPtr& x);
TensorPtr log(const TensorPtr& x);
TensorPtr square(const TensorPtr& x);
TensorPtr abs(const TensorPtr& x);
TensorPtr tanh(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);

/// Numerically stabilized softmax along `axis` (negative counts from the
/// back). Rejects NaN input.
TensorPtr softmax(const TensorPtr& x, int axis = -1);

/// max(x, floor) elementwise; gradient is passed where x > floor.
TensorPtr clip_min(const TensorPtr& x, double floor);

TensorPtr concat_rows(const TensorPtr& a, const TensorPtr& b);
TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b);
TensorPtr slice_rows(const TensorPtr& x, std::size_t row_begin, std::size_t row_end);

TensorPtr row_sum(const TensorPtr& x);        // m×n -> m×1
TensorPtr row_logsumexp(const TensorPtr& x);  // m×n -> m×1, max-stabilized
TensorPtr sum(const TensorPtr& x);            // -> scalar
TensorPtr mean(const TensorPtr& x);           // -> scalar

/// Mean over consecutive row groups of a single-column tensor.
TensorPtr group_mean(const TensorPtr& x, const std::vector<std::size_t>& group_sizes);

/// Reverse-mode accumulation from a scalar loss. Gradients of leaves
/// accumulate additively across calls (running backward twice doubles
/// them); interior adjoints are reset every pass. Leaves listed in
/// `frozen_leaves` receive no gradient and cost no work.
void backward(const TensorPtr& loss, const std::vector<TensorPtr>* frozen_leaves = nullptr);

namespace detail {
TensorPtr make_op(std::vector<std::size_t> shape, std::vector<double> data,
                  std::vector<TensorPtr> parents, std::function<void(Tensor&)> bw);
std::string shape_str(const std::vector<std::size_t>& s);
// C[n×m] += A[n×k] · B[k×m]
void mm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m);
// C[n×k] += A[n×m] · Bᵀ where B is k×m
void mm_acc_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
               std::size_t k);
// C[k×m] += Aᵀ · B where A is n×k, B is n×m
void mm_acc_t(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
              std::size_t m);
}  // namespace detail

}  // namespace ncx
