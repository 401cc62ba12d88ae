#include "ncx/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ncx {

std::string_view learner_kind_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::kMlp: return "mlp";
    case LearnerKind::kNearestNeighbor: return "nearest_neighbor";
    default: return "constant";
  }
}

LearnerKind learner_kind_from_name(std::string_view name) {
  if (name == "mlp") return LearnerKind::kMlp;
  if (name == "nearest_neighbor") return LearnerKind::kNearestNeighbor;
  if (name == "constant") return LearnerKind::kConstant;
  throw ContractError("unknown learner kind '" + std::string(name) + "'");
}

std::string_view loss_kind_name(LossKind k) {
  return k == LossKind::kMse ? "mse" : "cross_entropy";
}

LossKind loss_kind_from_name(std::string_view name) {
  if (name == "mse") return LossKind::kMse;
  if (name == "cross_entropy") return LossKind::kCrossEntropy;
  throw ContractError("unknown loss kind '" + std::string(name) + "'");
}

void LearnerConfig::validate() const {
  if (kind == LearnerKind::kMlp) {
    mlp.validate();
    if (steps == 0) throw ContractError("LearnerConfig: mlp learner needs steps >= 1");
    if (!(learning_rate > 0)) throw ContractError("LearnerConfig: learning rate must be positive");
  }
}

std::string LearnerConfig::arch_string() const {
  if (kind != LearnerKind::kMlp) return std::string(learner_kind_name(kind));
  std::string s = "mlp/";
  s += activation_name(mlp.activation);
  s += "/";
  const std::size_t width = mlp.hidden_dims.empty() ? 0 : mlp.hidden_dims[0];
  s += std::to_string(width) + "x" + std::to_string(mlp.hidden_dims.size() + 1);
  return s;
}

double lambda_at(const LambdaSchedule& schedule, std::size_t episode) {
  if (schedule.warmup_episodes == 0) return 1.0;
  return std::min(static_cast<double>(episode) / static_cast<double>(schedule.warmup_episodes),
                  1.0);
}

TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target) {
  return mean(square(sub(pred, target)));
}

TensorPtr cross_entropy_per_example(const TensorPtr& logits, const TensorPtr& onehot) {
  // per-row CE via logsumexp(logits) − Σ y·logits; stable for any logit scale
  return sub(row_logsumexp(logits), row_sum(mul(onehot, logits)));
}

double mean_loss(const Matrix& pred, const Matrix& target, LossKind kind) {
  if (!pred.same_shape(target)) throw DimensionError("mean_loss: shape mismatch");
  if (pred.rows == 0) throw ContractError("mean_loss: empty split");
  double acc = 0.0;
  if (kind == LossKind::kMse) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.v[i] - target.v[i];
      acc += d * d;
    }
    return acc / static_cast<double>(pred.rows * pred.cols);
  }
  for (std::size_t i = 0; i < pred.rows; ++i) {
    double p_true = 0.0;
    for (std::size_t j = 0; j < pred.cols; ++j) p_true += target(i, j) * pred(i, j);
    acc += -std::log(std::max(p_true, 1e-300));
  }
  return acc / static_cast<double>(pred.rows);
}

double accuracy(const Matrix& pred, const Matrix& onehot) {
  if (!pred.same_shape(onehot) || pred.rows == 0)
    throw DimensionError("accuracy: shape mismatch or empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.rows; ++i) {
    std::size_t ap = 0, at = 0;
    for (std::size_t j = 1; j < pred.cols; ++j) {
      if (pred(i, j) > pred(i, ap)) ap = j;
      if (onehot(i, j) > onehot(i, at)) at = j;
    }
    if (ap == at) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.rows);
}

Matrix Hypothesis::predict(const Matrix& x) const {
  switch (kind) {
    case LearnerKind::kMlp: {
      if (!net) throw ContractError("Hypothesis: mlp hypothesis without parameters");
      TensorPtr out = net->forward(from_matrix(x));
      if (loss == LossKind::kCrossEntropy) out = softmax(out, -1);
      return out->to_matrix();
    }
    case LearnerKind::kNearestNeighbor:
      return nearest_neighbor_predict(train_x, train_y, x);
    default: {
      Matrix out(x.rows, train_y.cols);
      for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < train_y.cols; ++j) out(i, j) = train_y(0, j);
      return out;
    }
  }
}

Matrix nearest_neighbor_predict(const Matrix& x_tr, const Matrix& y_tr, const Matrix& x_query) {
  if (x_tr.rows == 0) throw ContractError("nearest_neighbor_predict: empty train set");
  if (x_tr.cols != x_query.cols) throw DimensionError("nearest_neighbor_predict: width mismatch");
  Matrix out(x_query.rows, y_tr.cols);
  for (std::size_t q = 0; q < x_query.rows; ++q) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x_tr.rows; ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < x_tr.cols; ++j) {
        const double diff = x_tr(i, j) - x_query(q, j);
        d += diff * diff;
      }
      if (d < best_d) {  // strict: ties keep the lowest index
        best_d = d;
        best = i;
      }
    }
    for (std::size_t j = 0; j < y_tr.cols; ++j) out(q, j) = y_tr(best, j);
  }
  return out;
}

Hypothesis constant_predict(const Matrix& x_tr, const Matrix& y_tr, LossKind loss) {
  if (y_tr.rows == 0) throw ContractError("constant_predict: empty train set");
  (void)x_tr;
  Hypothesis h;
  h.kind = LearnerKind::kConstant;
  h.loss = loss;
  h.train_y = Matrix(1, y_tr.cols);
  for (std::size_t j = 0; j < y_tr.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < y_tr.rows; ++i) s += y_tr(i, j);
    h.train_y(0, j) = s / static_cast<double>(y_tr.rows);
  }
  return h;
}

double gap(const Hypothesis& h, const TaskBatch& task) {
  if (task.x_tr.rows == 0 || task.x_te.rows == 0)
    throw ContractError("gap: task has an empty split");
  const double train = mean_loss(h.predict(task.x_tr), task.y_tr, h.loss);
  const double test = mean_loss(h.predict(task.x_te), task.y_te, h.loss);
  return test - train;
}

namespace {

TrainResult fit_closed_form(const LearnerConfig& cfg, const TaskBatch& task,
                            const SnapshotSink& sink) {
  Hypothesis h;
  if (cfg.kind == LearnerKind::kNearestNeighbor) {
    h.kind = LearnerKind::kNearestNeighbor;
    h.loss = cfg.loss;
    h.train_x = task.x_tr;
    h.train_y = task.y_tr;
  } else {
    h = constant_predict(task.x_tr, task.y_tr, cfg.loss);
  }
  const Matrix pred_tr = h.predict(task.x_tr);
  const Matrix pred_te = h.predict(task.x_te);
  const double train_v = mean_loss(pred_tr, task.y_tr, cfg.loss);
  const double test_v = mean_loss(pred_te, task.y_te, cfg.loss);
  if (sink) sink(0, pred_tr, pred_te, train_v, test_v, nullptr);
  TrainResult out;
  out.hypothesis = std::move(h);
  out.trace.push_back({0, train_v, test_v, std::numeric_limits<double>::quiet_NaN()});
  return out;
}

TensorPtr penalty_node(const Penalty& penalty, const std::vector<TensorPtr>& params) {
  TensorPtr acc;
  for (const auto& p : params) {
    TensorPtr term = penalty.kind == PenaltyKind::kL2 ? sum(square(p)) : sum(abs(p));
    acc = acc ? add(acc, term) : term;
  }
  return mul(acc, penalty.weight);
}

}  // namespace

TrainResult train_regularized(const LearnerConfig& cfg, const TaskBatch& task,
                              const Regularizer* regularizer, double lambda, Rng& rng,
                              const SnapshotSink& sink, const Penalty& penalty,
                              std::optional<double> regularizer_clip_floor) {
  cfg.validate();
  if (lambda < 0) throw ContractError("train_regularized: lambda must be >= 0");
  if (lambda > 0 && !regularizer)
    throw ContractError("train_regularized: lambda > 0 requires a regularizer");
  if (task.x_tr.rows == 0 || task.x_te.rows == 0)
    throw ContractError("train_regularized: task has an empty split");

  if (cfg.kind != LearnerKind::kMlp) return fit_closed_form(cfg, task, sink);

  const bool ce = cfg.loss == LossKind::kCrossEntropy;
  Mlp net = Mlp::init(cfg.mlp, rng, "learner");
  const auto params = net.parameters();
  const auto frozen = regularizer ? regularizer->frozen_parameters() : std::vector<TensorPtr>{};
  OptimizerState opt = make_sgd(cfg.learning_rate);

  const TensorPtr x_tr = from_matrix(task.x_tr);
  const TensorPtr y_tr = from_matrix(task.y_tr);
  const TensorPtr x_te = from_matrix(task.x_te);

  TrainResult out;
  out.trace.reserve(cfg.steps + 1);

  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    TensorPtr raw_tr = net.forward(x_tr);
    TensorPtr raw_te = net.forward(x_te);
    TensorPtr loss_pe;  // per-example CE, classification only
    TensorPtr train_loss;
    if (ce) {
      loss_pe = cross_entropy_per_example(raw_tr, y_tr);
      train_loss = mean(loss_pe);
    } else {
      train_loss = mse_loss(raw_tr, y_tr);
    }
    TensorPtr pred_tr = ce ? softmax(raw_tr, -1) : raw_tr;
    TensorPtr pred_te = ce ? softmax(raw_te, -1) : raw_te;

    const double train_v = train_loss->value();
    const double test_v = mean_loss(pred_te->to_matrix(), task.y_te, cfg.loss);

    double nc_v = std::numeric_limits<double>::quiet_NaN();
    TensorPtr total = train_loss;
    if (regularizer) {
      EvalTensors ev;
      ev.kind = task.kind;
      ev.x_tr = x_tr;
      ev.x_te = x_te;
      ev.y_tr = y_tr;
      ev.pred_tr = pred_tr;
      ev.pred_te = pred_te;
      ev.train_loss_per_example = loss_pe;
      ev.train_loss = train_loss;
      TensorPtr nc_t = regularizer->value(ev);
      if (regularizer_clip_floor) nc_t = clip_min(nc_t, *regularizer_clip_floor);
      nc_v = nc_t->value();
      // λ = 0 leaves the loss graph untouched so the trajectory matches
      // plain SGD bit for bit
      if (lambda > 0) total = add(total, mul(nc_t, lambda));
    }
    if (penalty.kind != PenaltyKind::kNone && penalty.weight > 0)
      total = add(total, penalty_node(penalty, params));

    if (!std::isfinite(train_v) || !std::isfinite(total->value()))
      throw NumericError("train_regularized: non-finite loss at step " + std::to_string(step));

    out.trace.push_back({step, train_v, test_v, nc_v});
    if (sink) {
      std::optional<Matrix> lpe;
      if (loss_pe) lpe = loss_pe->to_matrix();
      sink(step, pred_tr->to_matrix(), pred_te->to_matrix(), train_v, test_v,
           lpe ? &*lpe : nullptr);
    }

    if (step == cfg.steps) break;
    zero_grad(params);
    backward(total, frozen.empty() ? nullptr : &frozen);
    optimizer_step(opt, params);
  }

  out.hypothesis.kind = LearnerKind::kMlp;
  out.hypothesis.loss = cfg.loss;
  out.hypothesis.net = std::move(net);
  return out;
}

}  // namespace ncx
