#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ncx/matrix.hpp"
#include "ncx/nn.hpp"
#include "ncx/rng.hpp"
#include "ncx/tensor.hpp"
#include "ncx/types.hpp"

namespace ncx {

struct NcRegressionConfig {
  std::size_t input_dim = 1;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t model_dim = 64;
  std::size_t heads = 4;

  void validate() const;
};

struct NcClassificationConfig {
  std::size_t input_dim = 2;
  std::size_t classes = 2;
  std::size_t enc_layers = 1;
  std::size_t dec_layers = 2;
  std::size_t model_dim = 32;
  std::size_t heads = 4;
  std::size_t self_attention_layers = 1;

  void validate() const;
};

/// One hypothesis's evaluation record: the split data and the learner's
/// predictions on it. Classification predictions are class probabilities
/// and carry a per-example train loss column.
struct HypothesisEval {
  TaskKind kind = TaskKind::kRegression;
  Matrix x_tr, x_te;
  Matrix y_tr;              // m×1, or m×c one-hot for classification
  Matrix pred_tr, pred_te;  // m×1 / m'×1, or m×c / m'×c
  std::optional<Matrix> train_loss_per_example;  // m×1, classification only

  void validate() const;
};

/// Graph-side counterpart used when the estimate joins a task learner's
/// loss: predictions are live graph nodes, everything else is constant.
struct EvalTensors {
  TaskKind kind = TaskKind::kRegression;
  TensorPtr x_tr, x_te, y_tr;
  TensorPtr pred_tr, pred_te;
  TensorPtr train_loss_per_example;  // null for regression
  TensorPtr train_loss;              // scalar batch train loss, informational
};

/// Additive regularizer producing a scalar graph node whose gradient
/// reaches the learner through its predictions only.
class Regularizer {
public:
  virtual ~Regularizer() = default;
  virtual TensorPtr value(const EvalTensors& ev) const = 0;
  /// Leaves to exclude from gradient accumulation when a task learner
  /// backprops through the value (the regularizer's own parameters).
  virtual std::vector<TensorPtr> frozen_parameters() const { return {}; }
};

/// The gap estimator: a permutation-invariant set network mapping
/// (X_tr, X_te, Y_tr, h(X_tr), h(X_te)) to a scalar estimate of the
/// generalization gap. Rows are embedded by a shared MLP, test embeddings
/// attend over train embeddings, and a decoder MLP is mean-pooled over
/// the test rows. The classification variant runs self-attention over the
/// train embeddings and forms attention values with a bilinear layer over
/// [Y_tr, 1, per-example train loss].
class NcModel : public Regularizer {
public:
  static NcModel init_regression(const NcRegressionConfig& cfg, Rng& rng);
  static NcModel init_classification(const NcClassificationConfig& cfg, Rng& rng);

  TaskKind kind() const { return kind_; }
  const NcRegressionConfig& regression_config() const { return reg_cfg_; }
  const NcClassificationConfig& classification_config() const { return cls_cfg_; }

  TensorPtr value(const EvalTensors& ev) const override;
  std::vector<TensorPtr> frozen_parameters() const override { return parameters(); }

  double forward(const HypothesisEval& ev) const;

  /// Estimates for a batch as one B×1 graph node. Per-row arithmetic is
  /// identical to the single-eval path.
  TensorPtr forward_batch(std::span<const HypothesisEval> evals) const;

  std::vector<double> predict(std::span<const HypothesisEval> evals) const;

  /// max(estimate, floor); used when the estimate regularizes a final
  /// single-task run. Raw estimates are used for fit statistics.
  double predict_clipped(const HypothesisEval& ev, double floor = kDefaultClipFloor) const;

  /// One Huber regression step toward the stored gaps. Returns the
  /// pre-step mean loss.
  double training_step(OptimizerState& opt, std::span<const HypothesisEval> batch,
                       std::span<const double> gaps);

  std::vector<TensorPtr> parameters() const;

  /// Deep copy; the copy shares no tensors and may be used from another
  /// thread while this instance keeps training.
  NcModel clone() const;

  void save(const std::filesystem::path& path) const;
  static NcModel load(const std::filesystem::path& path);

  static constexpr double kDefaultClipFloor = -0.1;

private:
  struct BatchTensors {
    TensorPtr enc_tr, enc_te;  // stacked row-wise encoder inputs
    TensorPtr y_tr;
    TensorPtr loss_pe;  // null for regression
    std::vector<std::size_t> m_tr, m_te;
  };

  NcModel() = default;
  BatchTensors assemble(std::span<const HypothesisEval> evals) const;
  BatchTensors assemble(const EvalTensors& ev) const;
  TensorPtr pipeline(const BatchTensors& b) const;
  void check_eval(const HypothesisEval& ev) const;

  TaskKind kind_ = TaskKind::kRegression;
  NcRegressionConfig reg_cfg_;
  NcClassificationConfig cls_cfg_;
  Mlp encoder_, decoder_;
  MultiHeadAttention cross_;
  std::vector<MultiHeadAttention> self_layers_;
  std::optional<BilinearWeights> bilinear_;
};

}  // namespace ncx
