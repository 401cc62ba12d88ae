// Acceptance suite: runs every release criterion end to end and prints
// one PASS/FAIL line per criterion. Exits nonzero if any fail.
//
// The heavyweight part is criterion 1 (full sinusoid meta-training with
// the default configuration); criteria 2-4 reuse its checkpoint.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ncx/harness.hpp"

using namespace ncx;
namespace fs = std::filesystem;

namespace {

struct Shared {
  ExperimentConfig cfg;
  std::unique_ptr<NcModel> model;
  MetaTrainResult train_result;
  double train_minutes = 0.0;
};

double fd_check(const std::function<TensorPtr()>& make_loss,
                const std::vector<TensorPtr>& leaves) {
  for (const auto& p : leaves) p->zero_grad();
  backward(make_loss());
  double worst = 0.0;
  const double h = 1e-5;
  for (const auto& p : leaves)
    for (std::size_t j = 0; j < p->data.size(); ++j) {
      const double orig = p->data[j];
      p->data[j] = orig + h;
      const double up = make_loss()->value();
      p->data[j] = orig - h;
      const double down = make_loss()->value();
      p->data[j] = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.empty() ? 0.0 : p->grad[j];
      worst = std::max(worst, std::fabs(numeric - analytic) /
                                  std::max({std::fabs(numeric), std::fabs(analytic), 1e-8}));
    }
  return worst;
}

TensorPtr rand_t(std::vector<std::size_t> shape, Rng& rng, bool grad = true) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return make_tensor(std::move(shape), std::move(v), grad);
}

void nudge_off_kinks(const TensorPtr& t) {
  for (double& v : t->data)
    if (std::fabs(v) < 0.1) v += v >= 0 ? 0.15 : -0.15;
}

// ---------------------------------------------------------------- 1-4 --

bool criterion_1(Shared& sh, std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  sh.train_result = run_meta_training(sh.cfg);
  const auto t1 = std::chrono::steady_clock::now();
  sh.train_minutes = std::chrono::duration_cast<std::chrono::duration<double>>(t1 - t0).count() / 60.0;
  sh.model = std::make_unique<NcModel>(NcModel::load(sh.train_result.checkpoint_path));

  const GapFitStats& fit = sh.train_result.holdout_fit;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "R^2 = %.4f (need >= 0.85), n = %zu (need >= 500), %.1f min (need <= 30)",
                fit.r_squared, fit.n, sh.train_minutes);
  detail = buf;
  return fit.r_squared >= 0.85 && fit.n >= 500 && sh.train_minutes <= 30.0;
}

bool criterion_2(Shared& sh, std::string& detail) {
  const RegularizerComparison cmp = run_regularizer_comparison(sh.cfg, *sh.model, 200);
  const double none16 = cmp.row("none").test_loss.back();
  const double nc16 = cmp.row("nc").test_loss.back();
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "test MSE at 16 steps: nc = %.3f vs none = %.3f (need nc <= 0.85*none = %.3f)",
                nc16, none16, 0.85 * none16);
  detail = buf;
  return nc16 <= 0.85 * none16;
}

bool criterion_3(Shared& sh, std::string& detail) {
  // median final gap of regularized runs over fresh tasks
  const LearnerConfig lcfg = to_learner_config(sh.cfg.learner, sh.cfg.task);
  Rng root(sh.cfg.seed + 31);
  std::vector<double> gaps;
  for (std::size_t t = 0; t < 200; ++t) {
    Rng task_rng = root.fork(2 * t);
    Rng learner_rng = root.fork(2 * t + 1);
    TaskBatch task = sample_sinusoid_task(task_rng, sh.cfg.task.m, sh.cfg.task.m_te);
    TrainResult res = train_regularized(lcfg, task, sh.model.get(), 1.0, learner_rng);
    gaps.push_back(res.trace.back().test_loss - res.trace.back().train_loss);
  }
  std::sort(gaps.begin(), gaps.end());
  const double median = 0.5 * (gaps[99] + gaps[100]);
  char buf[96];
  std::snprintf(buf, sizeof(buf), "median gap over 200 tasks = %+.4f (need <= 0.05)", median);
  detail = buf;
  return median <= 0.05;
}

bool criterion_4(Shared& sh, std::string& detail) {
  const std::size_t episodes = 35;  // ~595 snapshots per variant
  Rng root(sh.cfg.seed + 47);
  LearnerSettings width10 = sh.cfg.learner;
  width10.width = 10;
  LearnerSettings tanh40 = sh.cfg.learner;
  tanh40.activation = Activation::kTanh;

  const GapFitStats ref = ood_fit(sh.cfg, *sh.model, sh.cfg.learner, episodes, root.fork(1));
  const GapFitStats w10 = ood_fit(sh.cfg, *sh.model, width10, episodes, root.fork(2));
  const GapFitStats th = ood_fit(sh.cfg, *sh.model, tanh40, episodes, root.fork(3));
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "R^2: width40/relu = %.3f, width10 = %.3f, tanh = %.3f (all need >= 0.6)",
                ref.r_squared, w10.r_squared, th.r_squared);
  detail = buf;
  return ref.r_squared >= 0.6 && w10.r_squared >= 0.6 && th.r_squared >= 0.6;
}

// ----------------------------------------------------------------- 5 --

bool criterion_5(std::string& detail) {
  std::vector<ResidualSample> rs(100, ResidualSample{0.0});
  const BoundReport rep = compute_bound(rs, 0.25, 0.05);
  const double oracle = 1.0 - 0.0 - 2.0 * std::sqrt(std::log(2.0 / 0.05) / 200.0);
  char buf[120];
  std::snprintf(buf, sizeof(buf), "bound = %.6f, oracle = %.6f, pinned 0.7284 +- 0.0001",
                rep.probability_lower_bound, oracle);
  detail = buf;
  return std::fabs(rep.probability_lower_bound - oracle) < 1e-12 &&
         std::fabs(rep.probability_lower_bound - 0.7284) <= 1e-4;
}

// ----------------------------------------------------------------- 6 --

bool criterion_6(std::string& detail) {
  Rng rng(77);
  double worst = 0.0;
  const int instances = 20;
  for (int i = 0; i < instances; ++i) {
    auto a = rand_t({3, 4}, rng);
    auto b = rand_t({3, 4}, rng);
    auto m2 = rand_t({4, 2}, rng);
    auto row = rand_t({4}, rng);
    auto col = rand_t({6, 1}, rng);
    auto pos = rand_t({3, 4}, rng);
    for (double& v : pos->data) v = std::fabs(v) + 0.5;
    nudge_off_kinks(a);
    nudge_off_kinks(b);

    const std::vector<std::pair<std::function<TensorPtr()>, std::vector<TensorPtr>>> checks{
        {[&] { return mean(square(matmul(a, m2))); }, {a, m2}},
        {[&] { return mean(square(add(a, b))); }, {a, b}},
        {[&] { return mean(square(sub(a, b))); }, {a, b}},
        {[&] { return mean(square(mul(a, b))); }, {a, b}},
        {[&] { return mean(square(add(a, row))); }, {a, row}},
        {[&] { return mean(relu(a)); }, {a}},
        {[&] { return mean(ncx::exp(a)); }, {a}},
        {[&] { return mean(ncx::log(pos)); }, {pos}},
        {[&] { return mean(square(a)); }, {a}},
        {[&] { return mean(ncx::abs(a)); }, {a}},
        {[&] { return mean(ncx::tanh(a)); }, {a}},
        {[&] { return mean(sigmoid(a)); }, {a}},
        {[&] { return mean(mul(softmax(a, -1), b)); }, {a, b}},
        {[&] { return mean(square(concat_rows(a, b))); }, {a, b}},
        {[&] { return mean(square(concat_cols(a, b))); }, {a, b}},
        {[&] { return mean(square(slice_rows(a, 1, 3))); }, {a}},
        {[&] { return mean(square(row_sum(a))); }, {a}},
        {[&] { return mean(row_logsumexp(a)); }, {a}},
        {[&] { return mean(huber(a)); }, {a}},
        {[&] { return mean(square(group_mean(col, {2, 1, 3}))); }, {col}},
        {[&] { return mean(square(clip_min(a, 0.2))); }, {a}},
    };
    for (const auto& [loss, leaves] : checks) worst = std::max(worst, fd_check(loss, leaves));

    // layered blocks
    Rng lr(1000 + i);
    MlpConfig mc;
    mc.input_dim = 2;
    mc.hidden_dims = {5, 4};
    mc.output_dim = 2;
    Mlp net = Mlp::init(mc, lr);
    auto x = rand_t({4, 2}, lr, false);
    worst = std::max(worst, fd_check([&] { return mean(square(net.forward(x))); },
                                     net.parameters()));

    AttentionConfig ac;
    ac.model_dim = 4;
    ac.num_heads = 2;
    ac.value_dim = 3;
    MultiHeadAttention mha = MultiHeadAttention::init(ac, lr);
    auto q = rand_t({3, 4}, lr);
    auto k = rand_t({4, 4}, lr);
    auto v = rand_t({4, 3}, lr);
    auto leaves = mha.parameters();
    leaves.insert(leaves.end(), {q, k, v});
    worst = std::max(worst, fd_check([&] { return mean(square(mha.forward(q, k, v))); }, leaves));

    BilinearWeights bw = BilinearWeights::init(3, 2, lr);
    auto e = rand_t({4, 3}, lr);
    auto y = rand_t({4, 4}, lr);
    worst = std::max(worst,
                     fd_check([&] { return mean(square(bilinear_forward(bw, e, y))); }, {bw.w, e, y}));
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max rel err over %d instances/op = %.2e (need < 1e-4)",
                instances, worst);
  detail = buf;
  return worst < 1e-4;
}

// ----------------------------------------------------------------- 7 --

bool criterion_7(std::string& detail) {
  Rng rng(78);
  double worst = 0.0;

  NcRegressionConfig rc;
  rc.model_dim = 16;
  rc.heads = 4;
  NcModel reg = NcModel::init_regression(rc, rng);
  HypothesisEval rev;
  rev.kind = TaskKind::kRegression;
  rev.x_tr = Matrix(8, 1);
  rev.x_te = Matrix(6, 1);
  rev.y_tr = Matrix(8, 1);
  rev.pred_tr = Matrix(8, 1);
  rev.pred_te = Matrix(6, 1);
  for (auto* m : {&rev.x_tr, &rev.x_te, &rev.y_tr, &rev.pred_tr, &rev.pred_te})
    for (double& v : m->v) v = rng.uniform(-3, 3);

  NcClassificationConfig cc;
  cc.input_dim = 2;
  cc.model_dim = 16;
  cc.heads = 4;
  NcModel cls = NcModel::init_classification(cc, rng);
  HypothesisEval cev;
  cev.kind = TaskKind::kClassification;
  cev.x_tr = Matrix(8, 2);
  cev.x_te = Matrix(6, 2);
  for (double& v : cev.x_tr.v) v = rng.uniform(-2, 2);
  for (double& v : cev.x_te.v) v = rng.uniform(-2, 2);
  cev.y_tr = Matrix(8, 2);
  for (std::size_t i = 0; i < 8; ++i) cev.y_tr(i, rng.index(2)) = 1.0;
  cev.pred_tr = Matrix(8, 2);
  cev.pred_te = Matrix(6, 2);
  for (auto* m : {&cev.pred_tr, &cev.pred_te})
    for (std::size_t i = 0; i < m->rows; ++i) {
      const double p = rng.uniform(0.05, 0.95);
      (*m)(i, 0) = p;
      (*m)(i, 1) = 1 - p;
    }
  cev.train_loss_per_example = Matrix(8, 1);
  for (double& v : cev.train_loss_per_example->v) v = rng.uniform(0.1, 1.5);

  auto permute = [&](const HypothesisEval& ev) {
    HypothesisEval out = ev;
    auto perm_rows = [&](Matrix& m, const std::vector<std::size_t>& p) {
      Matrix src = m;
      for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = src(p[i], j);
    };
    std::vector<std::size_t> ptr(ev.x_tr.rows), pte(ev.x_te.rows);
    std::iota(ptr.begin(), ptr.end(), 0);
    std::iota(pte.begin(), pte.end(), 0);
    for (std::size_t i = 0; i + 1 < ptr.size(); ++i)
      std::swap(ptr[i], ptr[i + rng.index(ptr.size() - i)]);
    for (std::size_t i = 0; i + 1 < pte.size(); ++i)
      std::swap(pte[i], pte[i + rng.index(pte.size() - i)]);
    perm_rows(out.x_tr, ptr);
    perm_rows(out.y_tr, ptr);
    perm_rows(out.pred_tr, ptr);
    if (out.train_loss_per_example) perm_rows(*out.train_loss_per_example, ptr);
    perm_rows(out.x_te, pte);
    perm_rows(out.pred_te, pte);
    return out;
  };

  const double base_r = reg.forward(rev);
  const double base_c = cls.forward(cev);
  for (int t = 0; t < 50; ++t) {
    worst = std::max(worst, std::fabs(reg.forward(permute(rev)) - base_r));
    worst = std::max(worst, std::fabs(cls.forward(permute(cev)) - base_c));
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max |delta| over 50 permutations x 2 variants = %.2e (need < 1e-10)",
                worst);
  detail = buf;
  return worst < 1e-10;
}

// ----------------------------------------------------------------- 8 --

bool criterion_8(std::string& detail) {
  Rng rng(129);
  std::string parts;
  bool ok = true;
  for (double delta : {0.1, 0.01}) {
    for (std::size_t n : {std::size_t{50}, std::size_t{500}}) {
      const double band = std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
      int exceed = 0;
      const int trials = 1000;
      std::vector<double> u(n);
      for (int t = 0; t < trials; ++t) {
        for (double& v : u) v = rng.uniform();
        std::sort(u.begin(), u.end());
        double sup = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          sup = std::max({sup, static_cast<double>(i + 1) / n - u[i],
                          u[i] - static_cast<double>(i) / n});
        }
        if (sup > band) ++exceed;
      }
      const double freq = exceed / 1000.0;
      char buf[64];
      std::snprintf(buf, sizeof(buf), " (d=%.2f,n=%zu): %.3f", delta, n, freq);
      parts += buf;
      ok = ok && freq <= delta;
    }
  }
  detail = "exceed frequency vs delta:" + parts;
  return ok;
}

// ----------------------------------------------------------------- 9 --

bool criterion_9(std::string& detail) {
  Rng rng(80);
  const double f = 0.5;      // constant estimate in the synthetic setup
  const double eps = 0.4;
  const double delta = 0.05;
  std::string parts;
  bool ok = true;
  for (int dist = 0; dist < 2; ++dist) {
    auto draw = [&]() {
      // gaussian residuals, then shifted-exponential residuals
      if (dist == 0) return 0.25 * rng.normal();
      double u = rng.uniform();
      while (u <= 0) u = rng.uniform();
      return 0.3 * (-std::log(u)) - 0.1;
    };
    int success = 0;
    const int trials = 1000;
    std::vector<ResidualSample> calib(100);
    for (int t = 0; t < trials; ++t) {
      for (auto& r : calib) r.delta = draw();
      const double lower = compute_bound(calib, eps, delta).probability_lower_bound;
      int hits = 0;
      const int eval_draws = 4000;
      for (int i = 0; i < eval_draws; ++i) {
        const double g = f + draw();  // gap with the estimate f
        if (std::fabs(g) <= f + eps) ++hits;
      }
      if (static_cast<double>(hits) / eval_draws >= lower) ++success;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %s: %d/1000", dist == 0 ? "gaussian" : "shifted-exp",
                  success);
    parts += buf;
    ok = ok && success >= 950;
  }
  detail = "event frequency >= bound in" + parts + " trials (need >= 950)";
  return ok;
}

// ---------------------------------------------------------------- 10 --

bool criterion_10(std::string& detail) {
  Rng rng(81);
  MemoryBank bank;
  for (std::uint64_t i = 0; i < 10; ++i) {
    Snapshot s;
    s.task_id = i;
    s.kind = TaskKind::kRegression;
    s.x_tr = Matrix(4, 1);
    s.x_te = Matrix(3, 1);
    for (double& v : s.x_tr->v) v = rng.uniform(-5, 5);
    for (double& v : s.x_te->v) v = rng.uniform(-5, 5);
    s.val_count = 3;
    s.y_tr = Matrix(4, 1);
    s.pred_tr = Matrix(4, 1);
    s.pred_te = Matrix(3, 1);
    for (auto* m : {&s.y_tr, &s.pred_tr, &s.pred_te})
      for (double& v : m->v) v = rng.uniform(-2, 2);
    s.gap = rng.uniform(-1, 1);
    s.learner = {"mlp/relu/40x2", 0.01};
    bank.append(std::move(s));
  }

  const fs::path dir = fs::temp_directory_path() / "ncx_acceptance";
  fs::create_directories(dir);
  const fs::path path = dir / "bank.ncxbank";
  bank.persist(path);
  MemoryBank back = MemoryBank::load(path);
  bool exact = back.size() == 10;
  const auto a = bank.contents();
  const auto b = back.contents();
  for (std::size_t i = 0; exact && i < a.size(); ++i) {
    exact = exact && a[i]->x_tr->v == b[i]->x_tr->v && a[i]->pred_te.v == b[i]->pred_te.v &&
            std::memcmp(&a[i]->gap, &b[i]->gap, 8) == 0;
  }

  Rng srng(82);
  std::vector<std::size_t> counts(10, 0);
  for (const auto& s : bank.sample_batch(100000, srng)) counts[s->task_id]++;
  double worst = 0.0;
  for (std::size_t c : counts)
    worst = std::max(worst, std::fabs(c / 100000.0 - 0.1));
  char buf[112];
  std::snprintf(buf, sizeof(buf), "round-trip exact = %s, worst frequency deviation = %.4f (need < 0.01)",
                exact ? "yes" : "no", worst);
  detail = buf;
  return exact && worst < 0.01;
}

// ---------------------------------------------------------------- 11 --

bool criterion_11(std::string& detail) {
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const fs::path base = fs::temp_directory_path() / "ncx_acceptance";
  ExperimentConfig cfg = sinusoid_defaults();
  cfg.seed = 2024;
  cfg.nc.model_dim = 16;
  cfg.nc.heads = 4;
  cfg.meta.episodes = 40;
  cfg.meta.batch_size = 16;
  cfg.meta.steps_per_episode = 2;
  cfg.meta.lambda_warmup = 10;
  cfg.meta.holdout_episodes = 0;
  cfg.meta.checkpoint_every = 0;

  cfg.out_dir = (base / "det1").string();
  fs::remove_all(cfg.out_dir);
  run_meta_training(cfg);
  cfg.out_dir = (base / "det2").string();
  fs::remove_all(cfg.out_dir);
  run_meta_training(cfg);

  const bool nd = slurp(base / "det1" / "metrics.ndjson") == slurp(base / "det2" / "metrics.ndjson");
  const bool csv = slurp(base / "det1" / "metrics.csv") == slurp(base / "det2" / "metrics.csv");
  detail = std::string("metrics.ndjson identical = ") + (nd ? "yes" : "no") +
           ", metrics.csv identical = " + (csv ? "yes" : "no");
  return nd && csv;
}

// ---------------------------------------------------------------- 12 --

bool criterion_12(std::string& detail) {
  double worst_val = 0.0;
  const std::vector<std::pair<double, double>> cases{
      {0.0, 0.0}, {0.5, 0.125}, {-0.5, 0.125}, {1.0, 0.5}, {-1.0, 0.5}, {3.0, 2.5}, {-3.0, 2.5}};
  for (const auto& [x, expect] : cases)
    worst_val = std::max(worst_val, std::fabs(huber(make_scalar(x))->value() - expect));

  bool clamped = true;
  for (double x : {-5.0, -1.0, -0.5, 0.0, 0.5, 1.0, 5.0}) {
    auto t = make_scalar(x, true);
    backward(huber(t));
    const double g = t->grad[0];
    clamped = clamped && g >= -1.0 && g <= 1.0 && g == std::clamp(x, -1.0, 1.0);
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max value error = %.2e (need <= 1e-15), derivative clamped = %s",
                worst_val, clamped ? "yes" : "no");
  detail = buf;
  return worst_val <= 1e-15 && clamped;
}

}  // namespace

int main(int argc, char** argv) {
  setenv("OMP_WAIT_POLICY", "passive", 0);  // avoid idle spin on small boxes
  // optional out-dir override (default: ./acceptance-out)
  fs::path out = "acceptance-out";
  if (argc > 1) out = argv[1];
  fs::create_directories(out);

  Shared sh;
  sh.cfg = sinusoid_defaults();
  sh.cfg.out_dir = (out / "meta-train").string();
  sh.cfg.seed = 1;

  struct Entry {
    int id;
    const char* label;
    std::function<bool(std::string&)> run;
  };
  const std::vector<Entry> entries{
      {1, "sinusoid gap-fit R^2 on held-out snapshots",
       [&](std::string& d) { return criterion_1(sh, d); }},
      {2, "regularization win vs unregularized baseline at 16 steps",
       [&](std::string& d) { return criterion_2(sh, d); }},
      {3, "median gap of regularized runs near or below zero",
       [&](std::string& d) { return criterion_3(sh, d); }},
      {4, "out-of-distribution transfer (width 10/40, relu/tanh)",
       [&](std::string& d) { return criterion_4(sh, d); }},
      {5, "bound arithmetic vs scripted oracle", [](std::string& d) { return criterion_5(d); }},
      {6, "finite-difference gradient checks, 20 instances per op",
       [](std::string& d) { return criterion_6(d); }},
      {7, "permutation invariance of both estimator variants",
       [](std::string& d) { return criterion_7(d); }},
      {8, "DKW Monte-Carlo coverage", [](std::string& d) { return criterion_8(d); }},
      {9, "bound coverage on synthetic residual distributions",
       [](std::string& d) { return criterion_9(d); }},
      {10, "memory bank round-trip and sampling uniformity",
       [](std::string& d) { return criterion_10(d); }},
      {11, "byte-identical metrics across identical runs",
       [](std::string& d) { return criterion_11(d); }},
      {12, "huber exactness and clamped derivative",
       [](std::string& d) { return criterion_12(d); }},
  };

  int failures = 0;
  for (const auto& e : entries) {
    std::string detail;
    bool ok = false;
    try {
      ok = e.run(detail);
    } catch (const std::exception& ex) {
      detail = std::string("exception: ") + ex.what();
    }
    if (!ok) ++failures;
    std::printf("criterion %2d [%s] %s: %s\n", e.id, ok ? "PASS" : "FAIL", e.label,
                detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %zu/%zu criteria passed\n", entries.size() - failures,
              entries.size());
  return failures == 0 ? 0 : 1;
}
