#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "ncx/rng.hpp"
#include "ncx/tensor.hpp"

namespace ncx {

enum class Activation { kRelu, kTanh, kSigmoid };

std::string_view activation_name(Activation a);
Activation activation_from_name(std::string_view name);

struct MlpConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t output_dim = 1;
  Activation activation = Activation::kRelu;

  void validate() const;  // all dims >= 1
};

/// Fully connected stack: affine -> activation per hidden layer, final
/// affine with no activation. Weights are Kaiming-uniform for ReLU nets
/// and Xavier-uniform otherwise; biases start at zero.
struct Mlp {
  MlpConfig cfg;
  std::vector<TensorPtr> weights;
  std::vector<TensorPtr> biases;

  static Mlp init(const MlpConfig& cfg, Rng& rng, std::string_view name_prefix = "mlp");

  TensorPtr forward(const TensorPtr& x) const;
  std::vector<TensorPtr> parameters() const;
};

struct AttentionConfig {
  std::size_t model_dim = 64;   // d
  std::size_t num_heads = 4;    // H; d must be divisible by H
  std::size_t value_dim = 65;   // input width of V

  void validate() const;
};

/// Multi-head scaled dot-product attention with learned projections and
/// an output projection from the concatenated heads back to model_dim.
/// Scores are Q·Kᵀ/sqrt(d/H) with the softmax taken over the keys. The
/// key projection carries no bias: a shared key offset cancels inside the
/// softmax, so its gradient is identically zero.
struct MultiHeadAttention {
  AttentionConfig cfg;
  TensorPtr wq, bq, wk, wv, bv, wo, bo;

  static MultiHeadAttention init(const AttentionConfig& cfg, Rng& rng,
                                 std::string_view name_prefix = "mha");

  /// q: m'×d, k: m×d, v: m×value_dim -> m'×d. Requires m >= 1.
  TensorPtr forward(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v) const;

  /// Block-diagonal variant: rows of q (and of k/v) are partitioned into
  /// consecutive groups and group i of q attends only to group i of k/v.
  /// Arithmetic per row matches forward() on the individual groups.
  TensorPtr forward_grouped(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                            const std::vector<std::size_t>& q_sizes,
                            const std::vector<std::size_t>& kv_sizes) const;

  std::vector<TensorPtr> parameters() const;
};

/// Third-order interaction weights for the classification head:
/// out[i,a] = Σ_{b,k} w[a,b,k] · e[i,b] · labels[i,k].
struct BilinearWeights {
  std::size_t dim = 0;      // d
  std::size_t classes = 0;  // c; last axis has c+2 slices
  TensorPtr w;              // shape {d, d, c+2}

  static BilinearWeights init(std::size_t dim, std::size_t classes, Rng& rng,
                              std::string_view name = "bilinear.w");
  std::size_t slices() const { return classes + 2; }
};

TensorPtr bilinear_forward(const BilinearWeights& w, const TensorPtr& e_tr,
                           const TensorPtr& labels_aug);

/// Elementwise Huber: ½x² for |x| <= 1, |x| - ½ otherwise. The autodiff
/// derivative is clamp(x, -1, 1).
TensorPtr huber(const TensorPtr& x);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step_count = 0;
  std::vector<std::vector<double>> m1;  // adam first moments, per parameter
  std::vector<std::vector<double>> m2;  // adam second moments
};

OptimizerState make_sgd(double learning_rate);
OptimizerState make_adam(double learning_rate);

/// Applies one update in place using each parameter's accumulated grad.
/// A parameter whose grad buffer was never touched is treated as zero
/// gradient; a NaN gradient raises NumericError naming the parameter.
void optimizer_step(OptimizerState& state, const std::vector<TensorPtr>& params);

void zero_grad(const std::vector<TensorPtr>& params);

// init helpers shared by the model builders
TensorPtr kaiming_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng,
                          std::string name);
TensorPtr xavier_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                         Rng& rng, std::string name);

}  // namespace ncx
