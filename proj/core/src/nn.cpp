#include "ncx/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>

#include "ncx/errors.hpp"

namespace ncx {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    default: return "sigmoid";
  }
}

Activation activation_from_name(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw ContractError("unknown activation '" + std::string(name) + "'");
}

void MlpConfig::validate() const {
  if (input_dim == 0 || output_dim == 0) throw ContractError("MlpConfig: zero dimension");
  for (std::size_t h : hidden_dims)
    if (h == 0) throw ContractError("MlpConfig: zero hidden dimension");
}

TensorPtr kaiming_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng,
                          std::string name) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  // leaky-relu gain (a = sqrt 5), the usual linear-layer default; the relu
  // gain is too hot for fan-in-1 input layers at lr 0.01
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return make_tensor(std::move(shape), std::move(v), true, std::move(name));
}

TensorPtr xavier_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                         Rng& rng, std::string name) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return make_tensor(std::move(shape), std::move(v), true, std::move(name));
}

Mlp Mlp::init(const MlpConfig& cfg, Rng& rng, std::string_view name_prefix) {
  cfg.validate();
  Mlp net;
  net.cfg = cfg;
  std::vector<std::size_t> dims;
  dims.push_back(cfg.input_dim);
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(cfg.output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::string base = std::string(name_prefix) + ".l" + std::to_string(l);
    TensorPtr w = cfg.activation == Activation::kRelu
                      ? kaiming_uniform({dims[l], dims[l + 1]}, dims[l], rng, base + ".w")
                      : xavier_uniform({dims[l], dims[l + 1]}, dims[l], dims[l + 1], rng,
                                       base + ".w");
    net.weights.push_back(std::move(w));
    net.biases.push_back(zeros({dims[l + 1]}, true, base + ".b"));
  }
  return net;
}

TensorPtr Mlp::forward(const TensorPtr& x) const {
  if (!x->is_matrix() || x->cols() != cfg.input_dim)
    throw DimensionError("mlp: input shape " + detail::shape_str(x->shape) + " does not match input_dim " +
                         std::to_string(cfg.input_dim));
  TensorPtr h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = add(matmul(h, weights[l]), biases[l]);
    if (l + 1 < weights.size()) {
      switch (cfg.activation) {
        case Activation::kRelu: h = relu(h); break;
        case Activation::kTanh: h = tanh(h); break;
        case Activation::kSigmoid: h = sigmoid(h); break;
      }
    }
  }
  return h;
}

std::vector<TensorPtr> Mlp::parameters() const {
  std::vector<TensorPtr> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

void AttentionConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || value_dim == 0)
    throw ContractError("AttentionConfig: zero dimension");
  if (model_dim % num_heads != 0)
    throw ContractError("AttentionConfig: model_dim " + std::to_string(model_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
}

MultiHeadAttention MultiHeadAttention::init(const AttentionConfig& cfg, Rng& rng,
                                            std::string_view name_prefix) {
  cfg.validate();
  MultiHeadAttention a;
  a.cfg = cfg;
  const std::size_t d = cfg.model_dim, v = cfg.value_dim;
  const std::string p(name_prefix);
  a.wq = xavier_uniform({d, d}, d, d, rng, p + ".wq");
  a.bq = zeros({d}, true, p + ".bq");
  a.wk = xavier_uniform({d, d}, d, d, rng, p + ".wk");
  a.wv = xavier_uniform({v, d}, v, d, rng, p + ".wv");
  a.bv = zeros({d}, true, p + ".bv");
  a.wo = xavier_uniform({d, d}, d, d, rng, p + ".wo");
  a.bo = zeros({d}, true, p + ".bo");
  return a;
}

std::vector<TensorPtr> MultiHeadAttention::parameters() const {
  return {wq, bq, wk, wv, bv, wo, bo};
}

namespace {

// activations captured by the fused attention node for its backward pass
struct MhaSaved {
  std::vector<double> pq, pk, pv;  // projected q/k/v, row-major
  std::vector<double> attn;        // per group, per head: mq×mk blocks
  std::vector<double> hcat;        // concatenated head outputs
  std::vector<std::size_t> q_off, kv_off, a_off;
  std::vector<std::size_t> q_sz, kv_sz;
};

void project(const double* x, std::size_t n, std::size_t in_w, const double* w, const double* b,
             std::size_t out_w, double* out) {
  if (b)
    for (std::size_t i = 0; i < n * out_w; ++i) out[i] = b[i % out_w];
  detail::mm_acc(x, w, out, n, in_w, out_w);
}

}  // namespace

TensorPtr MultiHeadAttention::forward_grouped(const TensorPtr& q, const TensorPtr& k,
                                              const TensorPtr& v,
                                              const std::vector<std::size_t>& q_sizes,
                                              const std::vector<std::size_t>& kv_sizes) const {
  const std::size_t d = cfg.model_dim, H = cfg.num_heads, dh = d / H, vw = cfg.value_dim;
  if (!q->is_matrix() || q->cols() != d)
    throw DimensionError("attention: query shape " + detail::shape_str(q->shape) +
                         " does not match model_dim " + std::to_string(d));
  if (!k->is_matrix() || k->cols() != d)
    throw DimensionError("attention: key shape " + detail::shape_str(k->shape) +
                         " does not match model_dim " + std::to_string(d));
  if (!v->is_matrix() || v->cols() != vw)
    throw DimensionError("attention: value shape " + detail::shape_str(v->shape) +
                         " does not match value_dim " + std::to_string(vw));
  if (v->rows() != k->rows())
    throw DimensionError("attention: value rows " + std::to_string(v->rows()) +
                         " != key rows " + std::to_string(k->rows()));
  if (q_sizes.size() != kv_sizes.size() || q_sizes.empty())
    throw ContractError("attention: group lists must be non-empty and aligned");

  const std::size_t groups = q_sizes.size();
  auto saved = std::make_shared<MhaSaved>();
  saved->q_sz = q_sizes;
  saved->kv_sz = kv_sizes;
  saved->q_off.resize(groups + 1, 0);
  saved->kv_off.resize(groups + 1, 0);
  saved->a_off.resize(groups + 1, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    if (kv_sizes[g] == 0)
      throw ContractError("attention: empty context (no key rows) in group " + std::to_string(g));
    if (q_sizes[g] == 0)
      throw ContractError("attention: empty query group " + std::to_string(g));
    saved->q_off[g + 1] = saved->q_off[g] + q_sizes[g];
    saved->kv_off[g + 1] = saved->kv_off[g] + kv_sizes[g];
    saved->a_off[g + 1] = saved->a_off[g] + H * q_sizes[g] * kv_sizes[g];
  }
  const std::size_t nq = saved->q_off[groups], nk = saved->kv_off[groups];
  if (nq != q->rows())
    throw DimensionError("attention: query groups cover " + std::to_string(nq) + " rows, have " +
                         std::to_string(q->rows()));
  if (nk != k->rows())
    throw DimensionError("attention: key groups cover " + std::to_string(nk) + " rows, have " +
                         std::to_string(k->rows()));

  saved->pq.resize(nq * d);
  saved->pk.resize(nk * d);
  saved->pv.resize(nk * d);
  project(q->data.data(), nq, d, wq->data.data(), bq->data.data(), d, saved->pq.data());
  project(k->data.data(), nk, d, wk->data.data(), nullptr, d, saved->pk.data());
  project(v->data.data(), nk, vw, wv->data.data(), bv->data.data(), d, saved->pv.data());

  saved->attn.resize(saved->a_off[groups]);
  saved->hcat.assign(nq * d, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const auto ngroups = static_cast<std::int64_t>(groups);
#ifdef NCX_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (groups > 8)
#endif
  for (std::int64_t gi = 0; gi < ngroups; ++gi) {
    const auto g = static_cast<std::size_t>(gi);
    const std::size_t mq = saved->q_sz[g], mk = saved->kv_sz[g];
    const double* pq = saved->pq.data() + saved->q_off[g] * d;
    const double* pk = saved->pk.data() + saved->kv_off[g] * d;
    const double* pv = saved->pv.data() + saved->kv_off[g] * d;
    double* hout = saved->hcat.data() + saved->q_off[g] * d;
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t c0 = h * dh;
      double* a = saved->attn.data() + saved->a_off[g] + h * mq * mk;
      for (std::size_t i = 0; i < mq; ++i) {
        double* arow = a + i * mk;
        double mx = -1e300;
        for (std::size_t j = 0; j < mk; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += pq[i * d + c0 + c] * pk[j * d + c0 + c];
          arow[j] = s * scale;
          mx = std::max(mx, arow[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < mk; ++j) {
          arow[j] = std::exp(arow[j] - mx);
          z += arow[j];
        }
        for (std::size_t j = 0; j < mk; ++j) arow[j] /= z;
        for (std::size_t j = 0; j < mk; ++j) {
          const double aij = arow[j];
          for (std::size_t c = 0; c < dh; ++c) hout[i * d + c0 + c] += aij * pv[j * d + c0 + c];
        }
      }
    }
  }

  std::vector<double> out(nq * d);
  for (std::size_t i = 0; i < nq; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = bo->data[j];
  detail::mm_acc(saved->hcat.data(), wo->data.data(), out.data(), nq, d, d);

  Tensor* pq_t = q.get();
  Tensor* pk_t = k.get();
  Tensor* pv_t = v.get();
  Tensor* wq_t = wq.get();
  Tensor* bq_t = bq.get();
  Tensor* wk_t = wk.get();
  Tensor* wv_t = wv.get();
  Tensor* bv_t = bv.get();
  Tensor* wo_t = wo.get();
  Tensor* bo_t = bo.get();

  auto bw = [saved, pq_t, pk_t, pv_t, wq_t, bq_t, wk_t, wv_t, bv_t, wo_t, bo_t, d, H, dh,
             vw, nq, nk, groups, scale](Tensor& self) {
    const double* g_out = self.grad.data();

    if (bo_t->active)
      for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < d; ++j) bo_t->grad[j] += g_out[i * d + j];
    if (wo_t->active)  // dWo += Hcatᵀ · G
      detail::mm_acc_t(saved->hcat.data(), g_out, wo_t->grad.data(), nq, d, d);

    // dHcat = G · Woᵀ
    std::vector<double> dh_cat(nq * d, 0.0);
    detail::mm_acc_nt(g_out, wo_t->data.data(), dh_cat.data(), nq, d, d);

    const bool need_dpq = wq_t->active || bq_t->active || pq_t->active;
    const bool need_dpk = wk_t->active || pk_t->active;
    const bool need_dpv = wv_t->active || bv_t->active || pv_t->active;
    std::vector<double> dpq(need_dpq ? nq * d : 0, 0.0);
    std::vector<double> dpk(need_dpk ? nk * d : 0, 0.0);
    std::vector<double> dpv(need_dpv ? nk * d : 0, 0.0);

    const auto ngroups = static_cast<std::int64_t>(groups);
#ifdef NCX_HAVE_OPENMP
#pragma omp parallel for schedule(static) if (groups > 8)
#endif
    for (std::int64_t gi = 0; gi < ngroups; ++gi) {
      const auto g = static_cast<std::size_t>(gi);
      const std::size_t mq = saved->q_sz[g], mk = saved->kv_sz[g];
      const std::size_t qo = saved->q_off[g], ko = saved->kv_off[g];
      std::vector<double> da(mk), ds(mk);
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t c0 = h * dh;
        const double* a = saved->attn.data() + saved->a_off[g] + h * mq * mk;
        for (std::size_t i = 0; i < mq; ++i) {
          const double* arow = a + i * mk;
          const double* dhrow = dh_cat.data() + (qo + i) * d + c0;
          // dA then softmax backward (scaled)
          double dot = 0.0;
          for (std::size_t j = 0; j < mk; ++j) {
            double s = 0.0;
            const double* pvrow = saved->pv.data() + (ko + j) * d + c0;
            for (std::size_t c = 0; c < dh; ++c) s += dhrow[c] * pvrow[c];
            da[j] = s;
            dot += s * arow[j];
          }
          for (std::size_t j = 0; j < mk; ++j) ds[j] = arow[j] * (da[j] - dot) * scale;
          if (need_dpv)
            for (std::size_t j = 0; j < mk; ++j) {
              const double aij = arow[j];
              double* dpvrow = dpv.data() + (ko + j) * d + c0;
              for (std::size_t c = 0; c < dh; ++c) dpvrow[c] += aij * dhrow[c];
            }
          if (need_dpq) {
            double* dpqrow = dpq.data() + (qo + i) * d + c0;
            for (std::size_t j = 0; j < mk; ++j) {
              const double s = ds[j];
              const double* pkrow = saved->pk.data() + (ko + j) * d + c0;
              for (std::size_t c = 0; c < dh; ++c) dpqrow[c] += s * pkrow[c];
            }
          }
          if (need_dpk) {
            const double* pqrow = saved->pq.data() + (qo + i) * d + c0;
            for (std::size_t j = 0; j < mk; ++j) {
              const double s = ds[j];
              double* dpkrow = dpk.data() + (ko + j) * d + c0;
              for (std::size_t c = 0; c < dh; ++c) dpkrow[c] += s * pqrow[c];
            }
          }
        }
      }
    }

    // push projection gradients: P = X·W + b
    auto push_proj = [](const std::vector<double>& dp, Tensor* x, Tensor* w, Tensor* b,
                        std::size_t n, std::size_t in_w, std::size_t out_w) {
      if (dp.empty()) return;
      if (b && b->active)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < out_w; ++j) b->grad[j] += dp[i * out_w + j];
      if (w->active) detail::mm_acc_t(x->data.data(), dp.data(), w->grad.data(), n, in_w, out_w);
      if (x->active) detail::mm_acc_nt(dp.data(), w->data.data(), x->grad.data(), n, out_w, in_w);
    };
    push_proj(dpq, pq_t, wq_t, bq_t, nq, d, d);
    push_proj(dpk, pk_t, wk_t, nullptr, nk, d, d);
    push_proj(dpv, pv_t, wv_t, bv_t, nk, vw, d);
  };

  return detail::make_op({nq, d}, std::move(out), {q, k, v, wq, bq, wk, wv, bv, wo, bo},
                         std::move(bw));
}

TensorPtr MultiHeadAttention::forward(const TensorPtr& q, const TensorPtr& k,
                                      const TensorPtr& v) const {
  if (!k->is_matrix() || k->rows() == 0)
    throw ContractError("attention: empty context (no key rows)");
  return forward_grouped(q, k, v, {q->rows()}, {k->rows()});
}

BilinearWeights BilinearWeights::init(std::size_t dim, std::size_t classes, Rng& rng,
                                      std::string_view name) {
  if (dim == 0 || classes < 2) throw ContractError("BilinearWeights: need dim >= 1, classes >= 2");
  BilinearWeights b;
  b.dim = dim;
  b.classes = classes;
  b.w = xavier_uniform({dim, dim, classes + 2}, dim, dim, rng, std::string(name));
  return b;
}

TensorPtr bilinear_forward(const BilinearWeights& bw, const TensorPtr& e_tr,
                           const TensorPtr& labels_aug) {
  const std::size_t d = bw.dim, c2 = bw.slices();
  if (!e_tr->is_matrix() || e_tr->cols() != d)
    throw DimensionError("bilinear: embedding shape " + detail::shape_str(e_tr->shape) +
                         " does not match dim " + std::to_string(d));
  if (!labels_aug->is_matrix() || labels_aug->cols() != c2)
    throw DimensionError("bilinear: label shape " + detail::shape_str(labels_aug->shape) +
                         " does not match " + std::to_string(c2) + " slices");
  if (labels_aug->rows() != e_tr->rows())
    throw DimensionError("bilinear: row mismatch " + std::to_string(e_tr->rows()) + " vs " +
                         std::to_string(labels_aug->rows()));

  const std::size_t m = e_tr->rows();
  const double* w = bw.w->data.data();
  const double* e = e_tr->data.data();
  const double* y = labels_aug->data.data();

  std::vector<double> out(m * d, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* yi = y + i * c2;
    const double* ei = e + i * d;
    double* oi = out.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      double acc = 0.0;
      const double* wa = w + a * d * c2;
      for (std::size_t b = 0; b < d; ++b) {
        const double* wab = wa + b * c2;
        double s = 0.0;
        for (std::size_t k = 0; k < c2; ++k) s += wab[k] * yi[k];
        acc += s * ei[b];
      }
      oi[a] = acc;
    }
  }

  Tensor* w_t = bw.w.get();
  Tensor* e_t = e_tr.get();
  Tensor* y_t = labels_aug.get();
  return detail::make_op({m, d}, std::move(out), {bw.w, e_tr, labels_aug},
                         [w_t, e_t, y_t, m, d, c2](Tensor& self) {
    const double* g = self.grad.data();
    const double* w = w_t->data.data();
    const double* e = e_t->data.data();
    const double* y = y_t->data.data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* gi = g + i * d;
      const double* yi = y + i * c2;
      const double* ei = e + i * d;
      for (std::size_t a = 0; a < d; ++a) {
        const double ga = gi[a];
        if (ga == 0.0) continue;
        const double* wa = w + a * d * c2;
        for (std::size_t b = 0; b < d; ++b) {
          const double* wab = wa + b * c2;
          if (e_t->active) {
            double s = 0.0;
            for (std::size_t k = 0; k < c2; ++k) s += wab[k] * yi[k];
            e_t->grad[i * d + b] += ga * s;
          }
          if (w_t->active) {
            const double geb = ga * ei[b];
            double* dwab = w_t->grad.data() + (a * d + b) * c2;
            for (std::size_t k = 0; k < c2; ++k) dwab[k] += geb * yi[k];
          }
          if (y_t->active) {
            const double geb = ga * ei[b];
            for (std::size_t k = 0; k < c2; ++k) y_t->grad[i * c2 + k] += geb * wab[k];
          }
        }
      }
    }
  });
}

TensorPtr huber(const TensorPtr& x) {
  std::vector<double> out(x->size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x->data[i];
    out[i] = std::fabs(v) <= 1.0 ? 0.5 * v * v : std::fabs(v) - 0.5;
  }
  Tensor* px = x.get();
  return detail::make_op(x->shape, std::move(out), {x}, [px](Tensor& self) {
    if (!px->active) return;
    for (std::size_t i = 0; i < self.size(); ++i) {
      const double v = std::clamp(px->data[i], -1.0, 1.0);
      px->grad[i] += self.grad[i] * v;
    }
  });
}

OptimizerState make_sgd(double learning_rate) {
  if (!(learning_rate > 0)) throw ContractError("sgd: learning rate must be positive");
  OptimizerState s;
  s.kind = OptimizerKind::kSgd;
  s.learning_rate = learning_rate;
  return s;
}

OptimizerState make_adam(double learning_rate) {
  if (!(learning_rate > 0)) throw ContractError("adam: learning rate must be positive");
  OptimizerState s;
  s.kind = OptimizerKind::kAdam;
  s.learning_rate = learning_rate;
  return s;
}

void optimizer_step(OptimizerState& state, const std::vector<TensorPtr>& params) {
  if (state.kind == OptimizerKind::kAdam && state.m1.size() != params.size()) {
    state.m1.assign(params.size(), {});
    state.m2.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m1[i].assign(params[i]->size(), 0.0);
      state.m2[i].assign(params[i]->size(), 0.0);
    }
  }
  state.step_count += 1;

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (p.grad.empty()) continue;  // never touched by backward: zero gradient
    for (double g : p.grad)
      if (std::isnan(g))
        throw NumericError("NaN gradient in parameter '" + (p.name.empty() ? "<unnamed>" : p.name) +
                           "'");
    if (state.kind == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < p.data.size(); ++j)
        p.data[j] -= state.learning_rate * p.grad[j];
    } else {
      const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
      const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
      auto& m1 = state.m1[i];
      auto& m2 = state.m2[i];
      for (std::size_t j = 0; j < p.data.size(); ++j) {
        const double g = p.grad[j];
        m1[j] = state.beta1 * m1[j] + (1.0 - state.beta1) * g;
        m2[j] = state.beta2 * m2[j] + (1.0 - state.beta2) * g * g;
        p.data[j] -= state.learning_rate * (m1[j] / bc1) / (std::sqrt(m2[j] / bc2) + state.epsilon);
      }
    }
  }
}

void zero_grad(const std::vector<TensorPtr>& params) {
  for (const auto& p : params) p->zero_grad();
}

}  // namespace ncx
