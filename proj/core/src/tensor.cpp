#include "ncx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <utility>

#include "ncx/errors.hpp"

namespace ncx {

namespace detail {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void mm_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
            std::size_t m) {
  const auto rows = static_cast<std::int64_t>(n);
#ifdef NCX_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (n * k * m > 200000 && n > 1)
#endif
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[n×k] += g[n×m] · bᵀ  (b is k×m)
void mm_acc_nt(const double* g, const double* b, double* da, std::size_t n, std::size_t m,
               std::size_t k) {
  const auto rows = static_cast<std::int64_t>(n);
#ifdef NCX_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (n * k * m > 200000 && n > 1)
#endif
  for (std::int64_t i = 0; i < rows; ++i) {
    const double* grow = g + static_cast<std::size_t>(i) * m;
    double* darow = da + static_cast<std::size_t>(i) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
      darow[p] += s;
    }
  }
}

// db[k×m] += aᵀ · g  (a is n×k, g is n×m)
void mm_acc_t(const double* a, const double* g, double* db, std::size_t n, std::size_t k,
              std::size_t m) {
  const auto cols = static_cast<std::int64_t>(k);
#ifdef NCX_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (n * k * m > 200000 && k > 1)
#endif
  for (std::int64_t p = 0; p < cols; ++p) {
    double* dbrow = db + static_cast<std::size_t>(p) * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a[i * k + static_cast<std::size_t>(p)];
      const double* grow = g + i * m;
      for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * grow[j];
    }
  }
}

TensorPtr make_op(std::vector<std::size_t> shape, std::vector<double> data,
                  std::vector<TensorPtr> parents, std::function<void(Tensor&)> bw) {
  auto t = std::make_shared<Tensor>(std::move(shape), std::move(data));
  for (const auto& p : parents) t->requires_grad = t->requires_grad || p->requires_grad;
  t->parents = std::move(parents);
  t->backward_op = std::move(bw);
  return t;
}

}  // namespace detail

Tensor::Tensor(std::vector<std::size_t> shp, std::vector<double> values, bool req_grad)
    : shape(std::move(shp)), data(std::move(values)), requires_grad(req_grad) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (shape.empty() || n != data.size())
    throw DimensionError("tensor shape " + detail::shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
}

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw ContractError("rows(): tensor is not 2-d, shape " + detail::shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw ContractError("cols(): tensor is not 2-d, shape " + detail::shape_str(shape));
  return shape[1];
}

double Tensor::value() const {
  if (!is_scalar()) throw ContractError("value(): tensor is not scalar, shape " + detail::shape_str(shape));
  return data[0];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

std::vector<double>& Tensor::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

Matrix Tensor::to_matrix() const {
  if (is_matrix()) return Matrix(shape[0], shape[1], data);
  if (ndim() == 1) return Matrix(1, shape[0], data);
  throw ContractError("to_matrix(): tensor has shape " + detail::shape_str(shape));
}

TensorPtr make_tensor(std::vector<std::size_t> shape, std::vector<double> data,
                      bool requires_grad, std::string name) {
  auto t = std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
  t->name = std::move(name);
  return t;
}

TensorPtr make_scalar(double v, bool requires_grad, std::string name) {
  return make_tensor({1}, {v}, requires_grad, std::move(name));
}

TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad, std::string name) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad,
                     std::move(name));
}

TensorPtr from_matrix(const Matrix& m, bool requires_grad, std::string name) {
  return make_tensor({m.rows, m.cols}, m.v, requires_grad, std::move(name));
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (!a->is_matrix() || !b->is_matrix() || a->cols() != b->rows())
    throw DimensionError("matmul: incompatible shapes " + detail::shape_str(a->shape) + " and " +
                         detail::shape_str(b->shape));
  const std::size_t n = a->rows(), k = a->cols(), m = b->cols();
  std::vector<double> out(n * m, 0.0);
  detail::mm_acc(a->data.data(), b->data.data(), out.data(), n, k, m);

  Tensor* pa = a.get();
  Tensor* pb = b.get();
  return detail::make_op({n, m}, std::move(out), {a, b}, [pa, pb, n, k, m](Tensor& self) {
    const double* g = self.grad.data();
    if (pa->active) detail::mm_acc_nt(g, pb->data.data(), pa->grad.data(), n, m, k);
    if (pb->active) detail::mm_acc_t(pa->data.data(), g, pb->grad.data(), n, k, m);
  });
}

namespace {

enum class BinKind { kAdd, kSub, kMul };
enum class Bc { kSame, kAScalar, kBScalar, kARow, kBRow };

struct BcPlan {
  Bc kind;
  std::size_t rows = 0, cols = 0;  // of the full operand
};

bool is_row_of(const Tensor& v, const Tensor& full) {
  if (!full.is_matrix()) return false;
  if (v.ndim() == 1) return v.shape[0] == full.cols();
  return v.is_matrix() && v.rows() == 1 && v.cols() == full.cols();
}

BcPlan broadcast_plan(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape == b.shape) return {Bc::kSame, 0, a.size()};
  if (b.is_scalar()) return {Bc::kBScalar, 0, a.size()};
  if (a.is_scalar()) return {Bc::kAScalar, 0, b.size()};
  if (is_row_of(b, a)) return {Bc::kBRow, a.rows(), a.cols()};
  if (is_row_of(a, b)) return {Bc::kARow, b.rows(), b.cols()};
  throw DimensionError(std::string(op) + ": shapes " + detail::shape_str(a.shape) + " and " +
                       detail::shape_str(b.shape) + " are not broadcast-compatible");
}

TensorPtr binary_op(const TensorPtr& a, const TensorPtr& b, BinKind kind, const char* opname) {
  const BcPlan plan = broadcast_plan(*a, *b, opname);
  const std::vector<std::size_t> out_shape =
      (plan.kind == Bc::kAScalar || plan.kind == Bc::kARow) ? b->shape : a->shape;

  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinKind::kAdd: return x + y;
      case BinKind::kSub: return x - y;
      default: return x * y;
    }
  };

  std::size_t n = 1;
  for (std::size_t d : out_shape) n *= d;
  std::vector<double> out(n);
  const double* av = a->data.data();
  const double* bv = b->data.data();
  switch (plan.kind) {
    case Bc::kSame:
      for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[i], bv[i]);
      break;
    case Bc::kBScalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[i], bv[0]);
      break;
    case Bc::kAScalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[0], bv[i]);
      break;
    case Bc::kBRow:
      for (std::size_t i = 0; i < plan.rows; ++i)
        for (std::size_t j = 0; j < plan.cols; ++j)
          out[i * plan.cols + j] = apply(av[i * plan.cols + j], bv[j]);
      break;
    case Bc::kARow:
      for (std::size_t i = 0; i < plan.rows; ++i)
        for (std::size_t j = 0; j < plan.cols; ++j)
          out[i * plan.cols + j] = apply(av[j], bv[i * plan.cols + j]);
      break;
  }

  Tensor* pa = a.get();
  Tensor* pb = b.get();
  return detail::make_op(out_shape, std::move(out), {a, b}, [pa, pb, kind, plan](Tensor& self) {
    const double* g = self.grad.data();
    const std::size_t total = self.size();
    // contribution of g to the a side (possibly scaled by b for mul),
    // reduced over the broadcast pattern of a
    auto push = [&](Tensor* dst, const Tensor* other, bool is_a) {
      if (!dst->active) return;
      double* d = dst->grad.data();
      const double* o = other->data.data();
      const double sign = (!is_a && kind == BinKind::kSub) ? -1.0 : 1.0;
      const bool scaled = kind == BinKind::kMul;
      const bool dst_scalar = plan.kind == (is_a ? Bc::kAScalar : Bc::kBScalar);
      const bool dst_row = plan.kind == (is_a ? Bc::kARow : Bc::kBRow);
      if (dst_scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < total; ++i) s += scaled ? g[i] * o[i] : g[i];
        d[0] += sign * s;
      } else if (dst_row) {
        for (std::size_t i = 0; i < plan.rows; ++i)
          for (std::size_t j = 0; j < plan.cols; ++j) {
            const std::size_t idx = i * plan.cols + j;
            d[j] += sign * (scaled ? g[idx] * o[idx] : g[idx]);
          }
      } else {
        // full shape; `other` may itself be broadcast for mul
        if (!scaled) {
          for (std::size_t i = 0; i < total; ++i) d[i] += sign * g[i];
        } else if (other->is_scalar() && total > 1) {
          for (std::size_t i = 0; i < total; ++i) d[i] += sign * g[i] * o[0];
        } else if (plan.kind == Bc::kARow || plan.kind == Bc::kBRow) {
          const Tensor* full_side = is_a ? pa : pb;
          const bool other_is_row = (is_a && plan.kind == Bc::kBRow) ||
                                    (!is_a && plan.kind == Bc::kARow);
          if (other_is_row) {
            for (std::size_t i = 0; i < plan.rows; ++i)
              for (std::size_t j = 0; j < plan.cols; ++j) {
                const std::size_t idx = i * plan.cols + j;
                d[idx] += sign * g[idx] * o[j];
              }
          } else {
            (void)full_side;
            for (std::size_t i = 0; i < total; ++i) d[i] += sign * g[i] * o[i];
          }
        } else {
          for (std::size_t i = 0; i < total; ++i) d[i] += sign * g[i] * o[i];
        }
      }
    };
    push(pa, pb, true);
    push(pb, pa, false);
  });
}

TensorPtr unary_op(const TensorPtr& x, std::vector<double> out,
                   std::function<void(Tensor&, Tensor&)> bw) {
  Tensor* px = x.get();
  auto wrapped = [px, bw = std::move(bw)](Tensor& self) {
    if (px->active) bw(*px, self);
  };
  return detail::make_op(x->shape, std::move(out), {x}, std::move(wrapped));
}

TensorPtr unary_op(const TensorPtr& x, std::vector<std::size_t> shape, std::vector<double> out,
                   std::function<void(Tensor&, Tensor&)> bw) {
  Tensor* px = x.get();
  auto wrapped = [px, bw = std::move(bw)](Tensor& self) {
    if (px->active) bw(*px, self);
  };
  return detail::make_op(std::move(shape), std::move(out), {x}, std::move(wrapped));
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return binary_op(a, b, BinKind::kAdd, "add"); }
TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return binary_op(a, b, BinKind::kSub, "sub"); }
TensorPtr mul(const TensorPtr& a, const TensorPtr& b) { return binary_op(a, b, BinKind::kMul, "mul"); }
TensorPtr add(const TensorPtr& a, double b) { return add(a, make_scalar(b)); }
TensorPtr mul(const TensorPtr& a, double b) { return mul(a, make_scalar(b)); }

TensorPtr relu(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  return unary_op(x, std::move(out), [](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i)
      if (px.data[i] > 0.0) px.grad[i] += self.grad[i];
  });
}

TensorPtr exp(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x->data[i]);
  return unary_op(x, std::move(out), [](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i) px.grad[i] += self.grad[i] * self.data[i];
  });
}

TensorPtr log(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x->data[i] > 0.0))
      throw NumericError("log: non-positive input " + std::to_string(x->data[i]) + " at index " +
                         std::to_string(i));
    out[i] = std::log(x->data[i]);
  }
  return unary_op(x, std::move(out), [](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i) px.grad[i] += self.grad[i] / px.data[i];
  });
}

TensorPtr square(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] * x->data[i];
  return unary_op(x, std::move(out), [](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i)
      px.grad[i] += self.grad[i] * 2.0 * px.data[i];
  });
}

TensorPtr abs(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x->data[i]);
  return unary_op(x, std::move(out), [](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i) {
      const double s = px.data[i] > 0.0 ? 1.0 : (px.data[i] < 0.0 ? -1.0 : 0.0);
      px.grad[i] += self.grad[i] * s;
    }
  });
}

TensorPtr tanh(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x->data[i]);
  return unary_op(x, std::move(out), [](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i)
      px.grad[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
  });
}

TensorPtr sigmoid(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
  return unary_op(x, std::move(out), [](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i)
      px.grad[i] += self.grad[i] * self.data[i] * (1.0 - self.data[i]);
  });
}

TensorPtr softmax(const TensorPtr& x, int axis) {
  const int nd = static_cast<int>(x->ndim());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw ContractError("softmax: axis out of range for shape " + detail::shape_str(x->shape));
  for (double v : x->data)
    if (std::isnan(v)) throw NumericError("softmax: NaN input");

  std::size_t outer = 1, inner = 1;
  const std::size_t n = x->shape[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= x->shape[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < nd; ++i) inner *= x->shape[static_cast<std::size_t>(i)];

  std::vector<double> out(x->size());
  const double* xv = x->data.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }

  return unary_op(x, std::move(out), [outer, inner, n](Tensor& px, Tensor& self) {
    const double* s = self.data.data();
    const double* g = self.grad.data();
    double* d = px.grad.data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * s[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          d[idx] += s[idx] * (g[idx] - dot);
        }
      }
  });
}

TensorPtr clip_min(const TensorPtr& x, double floor) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x->data[i], floor);
  return unary_op(x, std::move(out), [floor](Tensor& px, Tensor& self) {
    for (std::size_t i = 0; i < self.size(); ++i)
      if (px.data[i] > floor) px.grad[i] += self.grad[i];
  });
}

TensorPtr concat_rows(const TensorPtr& a, const TensorPtr& b) {
  if (!a->is_matrix() || !b->is_matrix() || a->cols() != b->cols())
    throw DimensionError("concat_rows: shapes " + detail::shape_str(a->shape) + " and " +
                         detail::shape_str(b->shape));
  const std::size_t ra = a->rows(), rb = b->rows(), c = a->cols();
  std::vector<double> out;
  out.reserve((ra + rb) * c);
  out.insert(out.end(), a->data.begin(), a->data.end());
  out.insert(out.end(), b->data.begin(), b->data.end());
  Tensor* pa = a.get();
  Tensor* pb = b.get();
  return detail::make_op({ra + rb, c}, std::move(out), {a, b}, [pa, pb, ra, rb, c](Tensor& self) {
    const double* g = self.grad.data();
    if (pa->active)
      for (std::size_t i = 0; i < ra * c; ++i) pa->grad[i] += g[i];
    if (pb->active)
      for (std::size_t i = 0; i < rb * c; ++i) pb->grad[i] += g[ra * c + i];
  });
}

TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b) {
  if (!a->is_matrix() || !b->is_matrix() || a->rows() != b->rows())
    throw DimensionError("concat_cols: shapes " + detail::shape_str(a->shape) + " and " +
                         detail::shape_str(b->shape));
  const std::size_t r = a->rows(), ca = a->cols(), cb = b->cols();
  std::vector<double> out(r * (ca + cb));
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = a->data[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[i * (ca + cb) + ca + j] = b->data[i * cb + j];
  }
  Tensor* pa = a.get();
  Tensor* pb = b.get();
  return detail::make_op({r, ca + cb}, std::move(out), {a, b}, [pa, pb, r, ca, cb](Tensor& self) {
    const double* g = self.grad.data();
    const std::size_t w = ca + cb;
    if (pa->active)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) pa->grad[i * ca + j] += g[i * w + j];
    if (pb->active)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) pb->grad[i * cb + j] += g[i * w + ca + j];
  });
}

TensorPtr slice_rows(const TensorPtr& x, std::size_t row_begin, std::size_t row_end) {
  if (!x->is_matrix() || row_begin >= row_end || row_end > x->rows())
    throw DimensionError("slice_rows: range [" + std::to_string(row_begin) + ", " +
                         std::to_string(row_end) + ") of shape " + detail::shape_str(x->shape));
  const std::size_t c = x->cols(), r = row_end - row_begin;
  std::vector<double> out(x->data.begin() + static_cast<std::ptrdiff_t>(row_begin * c),
                          x->data.begin() + static_cast<std::ptrdiff_t>(row_end * c));
  return unary_op(x, {r, c}, std::move(out), [row_begin, r, c](Tensor& px, Tensor& self) {
    double* d = px.grad.data();
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < r * c; ++i) d[row_begin * c + i] += g[i];
  });
}

TensorPtr row_sum(const TensorPtr& x) {
  if (!x->is_matrix()) throw DimensionError("row_sum: need 2-d, got " + detail::shape_str(x->shape));
  const std::size_t r = x->rows(), c = x->cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x->data[i * c + j];
  return unary_op(x, {r, 1}, std::move(out), [r, c](Tensor& px, Tensor& self) {
    double* d = px.grad.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += self.grad[i];
  });
}

TensorPtr row_logsumexp(const TensorPtr& x) {
  if (!x->is_matrix())
    throw DimensionError("row_logsumexp: need 2-d, got " + detail::shape_str(x->shape));
  const std::size_t r = x->rows(), c = x->cols();
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x->data.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    out[i] = mx + std::log(z);
  }
  return unary_op(x, {r, 1}, std::move(out), [r, c](Tensor& px, Tensor& self) {
    double* d = px.grad.data();
    for (std::size_t i = 0; i < r; ++i) {
      const double lse = self.data[i];
      const double gi = self.grad[i];
      for (std::size_t j = 0; j < c; ++j)
        d[i * c + j] += gi * std::exp(px.data[i * c + j] - lse);
    }
  });
}

TensorPtr sum(const TensorPtr& x) {
  double s = 0.0;
  for (double v : x->data) s += v;
  return unary_op(x, {1}, {s}, [](Tensor& px, Tensor& self) {
    double* d = px.grad.data();
    for (std::size_t i = 0; i < px.data.size(); ++i) d[i] += self.grad[0];
  });
}

TensorPtr mean(const TensorPtr& x) {
  double s = 0.0;
  for (double v : x->data) s += v;
  const double inv = 1.0 / static_cast<double>(x->size());
  return unary_op(x, {1}, {s * inv}, [inv](Tensor& px, Tensor& self) {
    double* d = px.grad.data();
    for (std::size_t i = 0; i < px.data.size(); ++i) d[i] += self.grad[0] * inv;
  });
}

TensorPtr group_mean(const TensorPtr& x, const std::vector<std::size_t>& group_sizes) {
  if (!x->is_matrix() || x->cols() != 1)
    throw DimensionError("group_mean: need a column, got " + detail::shape_str(x->shape));
  std::size_t total = 0;
  for (std::size_t s : group_sizes) {
    if (s == 0) throw ContractError("group_mean: empty group");
    total += s;
  }
  if (total != x->rows())
    throw DimensionError("group_mean: groups cover " + std::to_string(total) + " rows, tensor has " +
                         std::to_string(x->rows()));
  std::vector<double> out(group_sizes.size());
  std::size_t pos = 0;
  for (std::size_t b = 0; b < group_sizes.size(); ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < group_sizes[b]; ++i) s += x->data[pos + i];
    out[b] = s / static_cast<double>(group_sizes[b]);
    pos += group_sizes[b];
  }
  auto sizes = group_sizes;
  return unary_op(x, {sizes.size(), 1}, std::move(out), [sizes](Tensor& px, Tensor& self) {
    double* d = px.grad.data();
    std::size_t pos = 0;
    for (std::size_t b = 0; b < sizes.size(); ++b) {
      const double gb = self.grad[b] / static_cast<double>(sizes[b]);
      for (std::size_t i = 0; i < sizes[b]; ++i) d[pos + i] += gb;
      pos += sizes[b];
    }
  });
}

void backward(const TensorPtr& loss, const std::vector<TensorPtr>* frozen_leaves) {
  if (!loss) throw ContractError("backward: null loss");
  if (!loss->is_scalar())
    throw ContractError("backward: loss must be scalar, got shape " +
                        detail::shape_str(loss->shape));

  // post-order DFS so parents come before children
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  struct Frame {
    Tensor* node;
    std::size_t next;
  };
  std::vector<Frame> stack{{loss.get(), 0}};
  visited.insert(loss.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      Tensor* p = f.node->parents[f.next++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  std::unordered_set<const Tensor*> frozen;
  if (frozen_leaves)
    for (const auto& t : *frozen_leaves) frozen.insert(t.get());

  for (Tensor* t : order) {
    if (t->is_leaf()) {
      t->active = t->requires_grad && !frozen.contains(t);
    } else {
      bool a = false;
      for (const auto& p : t->parents) a = a || p->active;
      t->active = a;
    }
  }
  if (!loss->active) return;  // nothing reachable requires a gradient

  for (Tensor* t : order) {
    if (!t->active) continue;
    if (t->is_leaf())
      t->grad_buffer();  // persists; accumulates across calls
    else
      t->grad.assign(t->data.size(), 0.0);
  }
  loss->grad_buffer();
  loss->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* t = *it;
    if (t->active && t->backward_op) t->backward_op(*t);
  }
}

}  // namespace ncx
