#include <doctest.h>

#include <cmath>

#include "ncx/learners.hpp"
#include "support.hpp"

using namespace ncx;

TEST_SUITE_BEGIN("learners");

namespace {

LearnerConfig sinusoid_learner() {
  LearnerConfig cfg;
  cfg.mlp.input_dim = 1;
  cfg.mlp.hidden_dims = {40};
  cfg.mlp.output_dim = 1;
  cfg.learning_rate = 0.01;
  cfg.steps = 16;
  return cfg;
}

struct ConstantReg : Regularizer {
  double value_ = 0.0;
  explicit ConstantReg(double v) : value_(v) {}
  TensorPtr value(const EvalTensors&) const override { return make_scalar(value_); }
};

struct PassThroughReg : Regularizer {
  TensorPtr value(const EvalTensors& ev) const override { return ev.train_loss; }
};

std::vector<double> flat_params(const Hypothesis& h) {
  std::vector<double> out;
  for (const auto& p : h.net->parameters()) out.insert(out.end(), p->data.begin(), p->data.end());
  return out;
}

}  // namespace

TEST_CASE("lambda schedule: linear ramp clamped at one") {
  LambdaSchedule sched{100};
  CHECK(lambda_at(sched, 0) == 0.0);
  CHECK(lambda_at(sched, 50) == 0.5);
  CHECK(lambda_at(sched, 100) == 1.0);
  CHECK(lambda_at(sched, 5000) == 1.0);
  CHECK(lambda_at(LambdaSchedule{0}, 0) == 1.0);
}

TEST_CASE("lambda = 0 reproduces plain SGD bit for bit") {
  Rng task_rng(50);
  TaskBatch task = sample_sinusoid_task(task_rng);
  ConstantReg reg(0.37);

  Rng r1(51), r2(51);
  TrainResult plain = train_regularized(sinusoid_learner(), task, nullptr, 0.0, r1);
  TrainResult with_reg = train_regularized(sinusoid_learner(), task, &reg, 0.0, r2);

  CHECK(flat_params(plain.hypothesis) == flat_params(with_reg.hypothesis));
  REQUIRE(plain.trace.size() == with_reg.trace.size());
  for (std::size_t i = 0; i < plain.trace.size(); ++i) {
    CHECK(plain.trace[i].train_loss == with_reg.trace[i].train_loss);
    CHECK(plain.trace[i].test_loss == with_reg.trace[i].test_loss);
  }
}

TEST_CASE("a constant regularizer leaves the trajectory unchanged") {
  Rng task_rng(52);
  TaskBatch task = sample_sinusoid_task(task_rng);
  ConstantReg reg(2.5);

  Rng r1(53), r2(53);
  TrainResult plain = train_regularized(sinusoid_learner(), task, nullptr, 0.0, r1);
  TrainResult with_reg = train_regularized(sinusoid_learner(), task, &reg, 1.0, r2);
  CHECK(flat_params(plain.hypothesis) == flat_params(with_reg.hypothesis));
  // the regularized loss differs, the parameters must not
  CHECK(with_reg.trace.back().nc_value == 2.5);
}

TEST_CASE("pass-through regularizer still converges on the zero function") {
  Rng task_rng(54);
  TaskBatch task = sample_sinusoid_task(task_rng);
  std::fill(task.y_tr.v.begin(), task.y_tr.v.end(), 0.0);
  std::fill(task.y_te.v.begin(), task.y_te.v.end(), 0.0);

  PassThroughReg reg;
  LearnerConfig cfg = sinusoid_learner();
  cfg.steps = 500;
  Rng rng(55);
  TrainResult res = train_regularized(cfg, task, &reg, 1.0, rng);
  CHECK(res.trace.back().train_loss < 1e-3);
}

TEST_CASE("gap: identical splits, perfect train fit, oracle") {
  Rng rng(56);
  TaskBatch task = sample_sinusoid_task(rng);
  task.x_te = task.x_tr;
  task.y_te = task.y_tr;
  Hypothesis h = constant_predict(task.x_tr, task.y_tr, LossKind::kMse);
  CHECK(gap(h, task) == 0.0);

  // perfect train fit, imperfect test: gap equals the test loss
  TaskBatch t2;
  t2.kind = TaskKind::kRegression;
  t2.x_tr = Matrix(2, 1, {0.0, 1.0});
  t2.y_tr = Matrix(2, 1, {3.0, 3.0});
  t2.x_te = Matrix(2, 1, {0.5, 2.0});
  t2.y_te = Matrix(2, 1, {3.7, 2.3});
  Hypothesis c = constant_predict(t2.x_tr, t2.y_tr, LossKind::kMse);
  const double expect = ((3.7 - 3.0) * (3.7 - 3.0) + (2.3 - 3.0) * (2.3 - 3.0)) / 2.0;
  CHECK(std::fabs(gap(c, t2) - expect) < 1e-15);

  // random hypothesis vs direct summation
  Rng rng2(57);
  TaskBatch t3 = sample_sinusoid_task(rng2, 4, 3);
  LearnerConfig lc = sinusoid_learner();
  lc.steps = 1;
  Rng rng3(58);
  Hypothesis rh = train_regularized(lc, t3, nullptr, 0.0, rng3).hypothesis;
  const Matrix ptr = rh.predict(t3.x_tr);
  const Matrix pte = rh.predict(t3.x_te);
  double tr = 0, te = 0;
  for (std::size_t i = 0; i < 4; ++i) tr += (ptr(i, 0) - t3.y_tr(i, 0)) * (ptr(i, 0) - t3.y_tr(i, 0));
  for (std::size_t i = 0; i < 3; ++i) te += (pte(i, 0) - t3.y_te(i, 0)) * (pte(i, 0) - t3.y_te(i, 0));
  CHECK(std::fabs(gap(rh, t3) - (te / 3 - tr / 4)) < 1e-12);
}

TEST_CASE("gap is invariant to shuffling within splits") {
  Rng rng(59);
  TaskBatch task = sample_sinusoid_task(rng, 6, 5);
  Hypothesis h = constant_predict(task.x_tr, task.y_tr, LossKind::kMse);
  const double base = gap(h, task);
  TaskBatch shuffled = task;
  std::swap(shuffled.x_tr.v[0], shuffled.x_tr.v[3]);
  std::swap(shuffled.y_tr.v[0], shuffled.y_tr.v[3]);
  std::swap(shuffled.x_te.v[1], shuffled.x_te.v[4]);
  std::swap(shuffled.y_te.v[1], shuffled.y_te.v[4]);
  CHECK(std::fabs(gap(h, shuffled) - base) < 1e-15);
}

TEST_CASE("nearest neighbor: exact hits, single point, oracle, ties") {
  Matrix x_tr(3, 2, {0, 0, 1, 0, 0, 1});
  Matrix y_tr(3, 1, {10, 20, 30});
  CHECK(nearest_neighbor_predict(x_tr, y_tr, Matrix(1, 2, {1, 0}))(0, 0) == 20);

  Matrix single_x(1, 2, {5, 5});
  Matrix single_y(1, 1, {7});
  for (double qx : {-10.0, 0.0, 10.0})
    CHECK(nearest_neighbor_predict(single_x, single_y, Matrix(1, 2, {qx, 0}))(0, 0) == 7);

  Rng rng(60);
  const Matrix xs = ncx::testing::random_matrix(5, 2, rng);
  const Matrix ys = ncx::testing::random_matrix(5, 1, rng);
  const Matrix qs = ncx::testing::random_matrix(3, 2, rng);
  const Matrix got = nearest_neighbor_predict(xs, ys, qs);
  for (std::size_t q = 0; q < 3; ++q) {
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t i = 0; i < 5; ++i) {
      double d = 0;
      for (std::size_t j = 0; j < 2; ++j)
        d += (xs(i, j) - qs(q, j)) * (xs(i, j) - qs(q, j));
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    CHECK(got(q, 0) == ys(best, 0));
  }

  // tie breaks to the lowest index
  Matrix dup_x(2, 1, {1.0, 1.0});
  Matrix dup_y(2, 1, {111, 222});
  CHECK(nearest_neighbor_predict(dup_x, dup_y, Matrix(1, 1, {1.0}))(0, 0) == 111);
}

TEST_CASE("constant learner predicts the mean") {
  Hypothesis h = constant_predict(Matrix(2, 1), Matrix(2, 1, {1, 3}), LossKind::kMse);
  CHECK(h.predict(Matrix(3, 1, {0, 5, -5}))(1, 0) == 2.0);

  Hypothesis single = constant_predict(Matrix(1, 1), Matrix(1, 1, {4.2}), LossKind::kMse);
  CHECK(single.predict(Matrix(1, 1, {0.0}))(0, 0) == 4.2);

  Rng rng(61);
  Matrix y = ncx::testing::random_matrix(7, 1, rng);
  double mean = 0;
  for (double v : y.v) mean += v;
  mean /= 7;
  Hypothesis r = constant_predict(Matrix(7, 1), y, LossKind::kMse);
  CHECK(r.predict(Matrix(1, 1, {0.0}))(0, 0) == doctest::Approx(mean).epsilon(1e-15));
}

TEST_CASE("training is deterministic given the seed") {
  Rng task_rng(62);
  TaskBatch task = sample_sinusoid_task(task_rng);
  Rng r1(63), r2(63);
  TrainResult a = train_regularized(sinusoid_learner(), task, nullptr, 0.0, r1);
  TrainResult b = train_regularized(sinusoid_learner(), task, nullptr, 0.0, r2);
  CHECK(flat_params(a.hypothesis) == flat_params(b.hypothesis));
  for (std::size_t i = 0; i < a.trace.size(); ++i)
    CHECK(a.trace[i].test_loss == b.trace[i].test_loss);
}

TEST_CASE("penalty weight zero is bitwise identical to no penalty") {
  Rng task_rng(64);
  TaskBatch task = sample_sinusoid_task(task_rng);
  Rng r1(65), r2(65);
  TrainResult none = train_regularized(sinusoid_learner(), task, nullptr, 0.0, r1);
  TrainResult zero =
      train_regularized(sinusoid_learner(), task, nullptr, 0.0, r2, {}, {PenaltyKind::kL2, 0.0});
  CHECK(flat_params(none.hypothesis) == flat_params(zero.hypothesis));
  for (std::size_t i = 0; i < none.trace.size(); ++i)
    CHECK(none.trace[i].test_loss == zero.trace[i].test_loss);
}

TEST_CASE("divergence aborts with the step index") {
  Rng task_rng(66);
  TaskBatch task = sample_sinusoid_task(task_rng);
  LearnerConfig cfg = sinusoid_learner();
  cfg.learning_rate = 1e9;
  cfg.steps = 60;
  Rng rng(67);
  CHECK_THROWS_WITH_AS(train_regularized(cfg, task, nullptr, 0.0, rng),
                       doctest::Contains("step"), NumericError);
}

TEST_CASE("snapshot sink sees every step including the final hypothesis") {
  Rng task_rng(68);
  TaskBatch task = sample_sinusoid_task(task_rng);
  LearnerConfig cfg = sinusoid_learner();
  cfg.steps = 4;
  std::vector<std::size_t> steps;
  Rng rng(69);
  train_regularized(cfg, task, nullptr, 0.0, rng,
                    [&](std::size_t step, const Matrix&, const Matrix&, double, double,
                        const Matrix*) { steps.push_back(step); });
  CHECK(steps == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_SUITE_END();
