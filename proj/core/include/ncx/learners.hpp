#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ncx/model.hpp"
#include "ncx/nn.hpp"
#include "ncx/taskgen.hpp"

namespace ncx {

enum class LearnerKind { kMlp, kNearestNeighbor, kConstant };
enum class LossKind { kMse, kCrossEntropy };

std::string_view learner_kind_name(LearnerKind k);
LearnerKind learner_kind_from_name(std::string_view name);
std::string_view loss_kind_name(LossKind k);
LossKind loss_kind_from_name(std::string_view name);

struct LearnerConfig {
  LearnerKind kind = LearnerKind::kMlp;
  MlpConfig mlp;  // used when kind == kMlp
  double learning_rate = 0.01;
  std::size_t steps = 16;
  LossKind loss = LossKind::kMse;

  void validate() const;
  std::string arch_string() const;  // snapshot metadata, e.g. "mlp/relu/40x2"
};

/// Weight-norm penalty added to the training loss (baseline regularizers).
enum class PenaltyKind { kNone, kL1, kL2 };
struct Penalty {
  PenaltyKind kind = PenaltyKind::kNone;
  double weight = 0.0;
};

/// λ ramps linearly from 0 to 1 over the first `warmup_episodes` episodes;
/// warmup 0 means λ ≡ 1.
struct LambdaSchedule {
  std::size_t warmup_episodes = 0;
};
double lambda_at(const LambdaSchedule& schedule, std::size_t episode);

/// A trained predictor. MLP hypotheses keep their parameter tensors;
/// closed-form hypotheses keep the data they need. Classification
/// predictions are class probabilities.
struct Hypothesis {
  LearnerKind kind = LearnerKind::kMlp;
  LossKind loss = LossKind::kMse;
  std::optional<Mlp> net;
  Matrix train_x, train_y;  // nearest-neighbor memory / constant fit (1×L)

  Matrix predict(const Matrix& x) const;
};

struct StepRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double nc_value = 0.0;  // NaN when no regularizer is attached
};

struct TrainResult {
  Hypothesis hypothesis;
  std::vector<StepRecord> trace;  // entries for steps 0..steps inclusive
};

/// Called once per step with the current hypothesis's evaluations;
/// `train_loss_pe` is null for regression. Matrices are copies the sink
/// may keep.
using SnapshotSink =
    std::function<void(std::size_t step, const Matrix& pred_tr, const Matrix& pred_te,
                       double train_loss, double test_loss, const Matrix* train_loss_pe)>;

/// Full-batch gradient training of the configured learner on one task,
/// minimizing train loss + λ·regularizer(+ penalty). The regularizer
/// gradient reaches the learner only through its predictions; regularizer
/// parameters stay frozen. Closed-form learners ignore λ and fit directly.
TrainResult train_regularized(const LearnerConfig& cfg, const TaskBatch& task,
                              const Regularizer* regularizer, double lambda, Rng& rng,
                              const SnapshotSink& sink = {}, const Penalty& penalty = {},
                              std::optional<double> regularizer_clip_floor = std::nullopt);

/// test loss − train loss, each a mean over its split.
double gap(const Hypothesis& h, const TaskBatch& task);

/// Mean loss of predictions against targets. CE expects probabilities.
double mean_loss(const Matrix& pred, const Matrix& target, LossKind kind);

/// Fraction of rows where argmax(pred) matches argmax(onehot).
double accuracy(const Matrix& pred, const Matrix& onehot);

/// Label of the Euclidean-nearest train point, ties to the lowest index.
Matrix nearest_neighbor_predict(const Matrix& x_tr, const Matrix& y_tr, const Matrix& x_query);

/// Least-squares degree-0 fit: predicts column means of Y everywhere.
Hypothesis constant_predict(const Matrix& x_tr, const Matrix& y_tr, LossKind loss);

// graph-side loss builders shared with the harness
TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target);
TensorPtr cross_entropy_per_example(const TensorPtr& logits, const TensorPtr& onehot);  // m×1

}  // namespace ncx
