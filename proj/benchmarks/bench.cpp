#include <benchmark/benchmark.h>

#include <cstdlib>

#include "ncx/harness.hpp"

using namespace ncx;

namespace {

HypothesisEval make_eval(Rng& rng, std::size_t m, std::size_t mt) {
  HypothesisEval ev;
  ev.kind = TaskKind::kRegression;
  ev.x_tr = Matrix(m, 1);
  ev.x_te = Matrix(mt, 1);
  ev.y_tr = Matrix(m, 1);
  ev.pred_tr = Matrix(m, 1);
  ev.pred_te = Matrix(mt, 1);
  for (auto* mat : {&ev.x_tr, &ev.x_te, &ev.y_tr, &ev.pred_tr, &ev.pred_te})
    for (double& v : mat->v) v = rng.uniform(-3, 3);
  return ev;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  std::vector<double> a(n * n), b(n * n);
  for (double& v : a) v = rng.uniform(-1, 1);
  for (double& v : b) v = rng.uniform(-1, 1);
  auto ta = make_tensor({n, n}, a);
  auto tb = make_tensor({n, n}, b);
  for (auto _ : state) {
    auto c = matmul(ta, tb);
    benchmark::DoNotOptimize(c->data.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MhaForward(benchmark::State& state) {
  AttentionConfig cfg;
  cfg.model_dim = 64;
  cfg.num_heads = 4;
  cfg.value_dim = 65;
  Rng rng(2);
  auto mha = MultiHeadAttention::init(cfg, rng);
  std::vector<double> q(15 * 64), k(10 * 64), v(10 * 65);
  for (auto* vec : {&q, &k, &v})
    for (double& x : *vec) x = rng.uniform(-1, 1);
  auto tq = make_tensor({15, 64}, q);
  auto tk = make_tensor({10, 64}, k);
  auto tv = make_tensor({10, 65}, v);
  for (auto _ : state) {
    auto out = mha.forward(tq, tk, tv);
    benchmark::DoNotOptimize(out->data.data());
  }
}
BENCHMARK(BM_MhaForward);

void BM_EstimatorForward(benchmark::State& state) {
  NcRegressionConfig cfg;
  cfg.model_dim = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  NcModel model = NcModel::init_regression(cfg, rng);
  HypothesisEval ev = make_eval(rng, 10, 15);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(ev));
}
BENCHMARK(BM_EstimatorForward)->Arg(32)->Arg(64)->Arg(128);

void BM_EstimatorTrainingStep(benchmark::State& state) {
  NcRegressionConfig cfg;
  cfg.model_dim = 64;
  Rng rng(4);
  NcModel model = NcModel::init_regression(cfg, rng);
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  std::vector<HypothesisEval> batch;
  std::vector<double> gaps;
  for (std::size_t i = 0; i < batch_size; ++i) {
    batch.push_back(make_eval(rng, 10, 15));
    gaps.push_back(rng.uniform(-1, 1));
  }
  OptimizerState opt = make_adam(5e-4);
  for (auto _ : state) benchmark::DoNotOptimize(model.training_step(opt, batch, gaps));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(batch_size));
}
BENCHMARK(BM_EstimatorTrainingStep)->Arg(16)->Arg(64)->Arg(256);

void BM_BankSample(benchmark::State& state) {
  Rng rng(5);
  MemoryBank bank;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    Snapshot s;
    s.task_id = i;
    s.kind = TaskKind::kRegression;
    HypothesisEval ev = make_eval(rng, 10, 15);
    s.x_tr = ev.x_tr;
    s.x_te = ev.x_te;
    s.val_count = 15;
    s.y_tr = ev.y_tr;
    s.pred_tr = ev.pred_tr;
    s.pred_te = ev.pred_te;
    s.gap = rng.uniform(-1, 1);
    bank.append(std::move(s));
  }
  Rng srng(6);
  for (auto _ : state) {
    auto batch = bank.sample_batch(256, srng);
    benchmark::DoNotOptimize(batch.data());
  }
}
BENCHMARK(BM_BankSample);

void BM_LearnerEpisode(benchmark::State& state) {
  // one full regularized 16-step learner run against an untrained estimator
  NcRegressionConfig cfg;
  cfg.model_dim = 64;
  Rng rng(7);
  NcModel model = NcModel::init_regression(cfg, rng);
  LearnerConfig lcfg;
  lcfg.mlp.input_dim = 1;
  lcfg.mlp.hidden_dims = {40};
  lcfg.mlp.output_dim = 1;
  for (auto _ : state) {
    Rng task_rng(static_cast<std::uint64_t>(state.iterations()) + 11);
    TaskBatch task = sample_sinusoid_task(task_rng);
    Rng learner_rng(static_cast<std::uint64_t>(state.iterations()) + 13);
    benchmark::DoNotOptimize(
        train_regularized(lcfg, task, &model, 1.0, learner_rng).trace.back().test_loss);
  }
}
BENCHMARK(BM_LearnerEpisode);

}  // namespace

int main(int argc, char** argv) {
  setenv("OMP_WAIT_POLICY", "passive", 0);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
