#include "ncx/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace ncx {

namespace fs = std::filesystem;

GapFitStats evaluate_gap_fit(std::span<const double> predictions, std::span<const double> gaps) {
  if (predictions.size() != gaps.size())
    throw ContractError("evaluate_gap_fit: prediction/gap size mismatch");
  const std::size_t n = gaps.size();
  if (n < 2) throw ContractError("evaluate_gap_fit: need at least 2 snapshots");
  double mean_gap = 0.0;
  for (double g : gaps) mean_gap += g;
  mean_gap /= static_cast<double>(n);
  double ss_tot = 0.0, ss_res = 0.0, abs_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ss_tot += (gaps[i] - mean_gap) * (gaps[i] - mean_gap);
    ss_res += (gaps[i] - predictions[i]) * (gaps[i] - predictions[i]);
    abs_err += std::fabs(gaps[i] - predictions[i]);
  }
  if (ss_tot == 0.0)
    throw ContractError("evaluate_gap_fit: zero gap variance, R^2 undefined");
  return {1.0 - ss_res / ss_tot, abs_err / static_cast<double>(n), n};
}

namespace {

std::pair<std::vector<HypothesisEval>, std::vector<double>> materialize_batch(
    std::span<const std::shared_ptr<const Snapshot>> snapshots, const Dataset* dataset) {
  std::vector<HypothesisEval> evals;
  std::vector<double> gaps;
  evals.reserve(snapshots.size());
  gaps.reserve(snapshots.size());
  for (const auto& s : snapshots) {
    evals.push_back(materialize(*s, dataset));
    gaps.push_back(s->gap);
  }
  return {std::move(evals), std::move(gaps)};
}

TaskBatch sample_task(const TaskConfig& cfg, Rng& rng) {
  if (cfg.kind == TaskKind::kRegression) return sample_sinusoid_task(rng, cfg.m, cfg.m_te);
  return sample_synthetic_classification_task(rng, cfg.classes, cfg.m, cfg.m_te, cfg.dim,
                                              cfg.sigma);
}

NcModel build_nc(const ExperimentConfig& cfg, Rng& rng) {
  if (cfg.task.kind == TaskKind::kRegression) {
    NcRegressionConfig c;
    c.input_dim = cfg.task.input_dim();
    c.enc_layers = cfg.nc.enc_layers;
    c.dec_layers = cfg.nc.dec_layers;
    c.model_dim = cfg.nc.model_dim;
    c.heads = cfg.nc.heads;
    return NcModel::init_regression(c, rng);
  }
  NcClassificationConfig c;
  c.input_dim = cfg.task.input_dim();
  c.classes = cfg.task.classes;
  c.enc_layers = cfg.nc.enc_layers;
  c.dec_layers = cfg.nc.dec_layers;
  c.model_dim = cfg.nc.model_dim;
  c.heads = cfg.nc.heads;
  c.self_attention_layers = cfg.nc.self_attention_layers;
  return NcModel::init_classification(c, rng);
}

SnapshotSink make_collector(std::vector<Snapshot>* out, const TaskBatch* task,
                            std::uint64_t task_id, std::size_t cadence, std::size_t final_step,
                            LearnerMeta meta) {
  return [out, task, task_id, cadence, final_step, meta](
             std::size_t step, const Matrix& pred_tr, const Matrix& pred_te, double train_v,
             double test_v, const Matrix* lpe) {
    if (step % cadence != 0 && step != final_step) return;
    Snapshot s;
    s.task_id = task_id;
    s.step = step;
    s.kind = task->kind;
    s.x_tr = task->x_tr;
    s.x_te = task->x_te;
    s.val_count = task->x_te.rows;
    s.y_tr = task->y_tr;
    s.pred_tr = pred_tr;
    s.pred_te = pred_te;
    if (lpe) s.train_loss_per_example = *lpe;
    s.gap = test_v - train_v;
    s.learner = meta;
    out->push_back(std::move(s));
  };
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

nlohmann::ordered_json fit_to_json(const GapFitStats& f) {
  return {{"r_squared", f.r_squared}, {"mae", f.mae}, {"n", f.n}};
}

}  // namespace

std::vector<Snapshot> generate_snapshots(const TaskConfig& task_cfg,
                                         const LearnerConfig& learner_cfg,
                                         const Regularizer* regularizer, double lambda,
                                         std::size_t episodes, std::size_t snapshot_every,
                                         Rng rng, std::size_t* diverged_episodes) {
  std::vector<Snapshot> out;
  LearnerMeta meta{std::string(learner_cfg.arch_string()), learner_cfg.learning_rate};
  for (std::size_t e = 0; e < episodes; ++e) {
    Rng task_rng = rng.fork(2 * e);
    Rng learner_rng = rng.fork(2 * e + 1);
    TaskBatch task = sample_task(task_cfg, task_rng);
    std::vector<Snapshot> episode_snaps;
    auto sink = make_collector(&episode_snaps, &task, e, snapshot_every, learner_cfg.steps, meta);
    try {
      train_regularized(learner_cfg, task, regularizer, lambda, learner_rng, sink);
    } catch (const NumericError&) {
      if (!diverged_episodes) throw;
      ++*diverged_episodes;
      continue;  // drop the partial trajectory
    }
    for (auto& s : episode_snaps) out.push_back(std::move(s));
  }
  return out;
}

GapFitStats evaluate_gap_fit(const NcModel& model,
                             std::span<const std::shared_ptr<const Snapshot>> snapshots,
                             const Dataset* dataset) {
  auto [evals, gaps] = materialize_batch(snapshots, dataset);
  const std::vector<double> preds = model.predict(evals);
  return evaluate_gap_fit(preds, gaps);
}

namespace {

struct EpisodeSummary {
  std::size_t episode = 0;
  StepRecord last;
  double lambda = 0.0;
};

// single-writer append / sampling consumer pair for workers >= 2; metrics
// stay on the consumer thread
void two_worker_loop(const ExperimentConfig& cfg, const Regularizer* override_reg, NcModel& nc,
                     MemoryBank& bank, OptimizerState& meta_opt, MetricsWriter& metrics,
                     std::size_t steps_per_episode, Rng& root, Rng& meta_rng) {
  std::mutex params_mu;
  std::mutex queue_mu;
  std::condition_variable queue_cv;
  std::deque<EpisodeSummary> queue;
  std::atomic<bool> done{false};
  const LearnerConfig learner_cfg = to_learner_config(cfg.learner, cfg.task);
  const LambdaSchedule sched{cfg.meta.lambda_warmup};

  std::thread producer([&] {
    LearnerMeta meta{learner_cfg.arch_string(), learner_cfg.learning_rate};
    for (std::size_t episode = 0; episode < cfg.meta.episodes; ++episode) {
      const double lam = lambda_at(sched, episode);
      NcModel frozen = [&] {
        std::lock_guard lock(params_mu);
        return nc.clone();
      }();
      const Regularizer* reg = override_reg ? override_reg : &frozen;
      Rng task_rng = root.fork(2 * episode + 2);
      Rng learner_rng = root.fork(2 * episode + 3);
      TaskBatch task = sample_task(cfg.task, task_rng);
      std::vector<Snapshot> snaps;
      auto sink =
          make_collector(&snaps, &task, episode, cfg.meta.snapshot_every, learner_cfg.steps, meta);
      TrainResult res = train_regularized(learner_cfg, task, reg, lam, learner_rng, sink);
      for (auto& s : snaps) bank.append(std::move(s));
      {
        std::lock_guard lock(queue_mu);
        queue.push_back({episode, res.trace.back(), lam});
      }
      queue_cv.notify_one();
    }
    done = true;
    queue_cv.notify_one();
  });

  const std::size_t target_steps = cfg.meta.episodes * steps_per_episode;
  std::size_t meta_steps = 0;
  double last_meta_loss = 0.0;
  while (true) {
    {
      std::unique_lock lock(queue_mu);
      while (!queue.empty()) {
        const EpisodeSummary s = queue.front();
        queue.pop_front();
        lock.unlock();
        metrics.write({static_cast<std::int64_t>(s.episode),
                       static_cast<std::int64_t>(s.last.step), s.last.train_loss,
                       s.last.test_loss, s.last.test_loss - s.last.train_loss, s.last.nc_value,
                       s.lambda, last_meta_loss});
        lock.lock();
      }
      if (done && meta_steps >= target_steps) break;
      if (bank.size() == 0 || meta_steps >= target_steps) {
        queue_cv.wait_for(lock, std::chrono::milliseconds(1));
        continue;
      }
    }
    auto batch = bank.sample_batch(cfg.meta.batch_size, meta_rng);
    auto [evals, gaps] = materialize_batch(batch, nullptr);
    {
      std::lock_guard lock(params_mu);
      last_meta_loss = nc.training_step(meta_opt, evals, gaps);
    }
    ++meta_steps;
  }
  producer.join();
}

}  // namespace

MetaTrainResult run_meta_training(const ExperimentConfig& cfg,
                                  const Regularizer* regularizer_override) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);
  save_experiment_config(cfg, out_dir / "config.json");

  Rng root(cfg.seed);
  Rng init_rng = root.fork(0);
  NcModel nc = build_nc(cfg, init_rng);
  const LearnerConfig learner_cfg = to_learner_config(cfg.learner, cfg.task);
  LearnerMeta meta{learner_cfg.arch_string(), learner_cfg.learning_rate};

  BankConfig bank_cfg;
  bank_cfg.capacity = cfg.meta.bank_capacity;
  MemoryBank bank(bank_cfg);
  OptimizerState meta_opt = make_adam(cfg.meta.adam_lr);
  MetricsWriter metrics(out_dir, "metrics");
  const LambdaSchedule sched{cfg.meta.lambda_warmup};
  const std::size_t steps_per_episode =
      cfg.meta.steps_per_episode ? cfg.meta.steps_per_episode : learner_cfg.steps;
  Rng meta_rng = root.fork(1);

  if (cfg.meta.workers >= 2) {
    two_worker_loop(cfg, regularizer_override, nc, bank, meta_opt, metrics, steps_per_episode,
                    root, meta_rng);
  } else {
    for (std::size_t episode = 0; episode < cfg.meta.episodes; ++episode) {
      const double lam = lambda_at(sched, episode);
      Rng task_rng = root.fork(2 * episode + 2);
      Rng learner_rng = root.fork(2 * episode + 3);
      TaskBatch task = sample_task(cfg.task, task_rng);
      std::vector<Snapshot> snaps;
      auto sink =
          make_collector(&snaps, &task, episode, cfg.meta.snapshot_every, learner_cfg.steps, meta);
      const Regularizer* reg = regularizer_override ? regularizer_override : &nc;
      TrainResult res = train_regularized(learner_cfg, task, reg, lam, learner_rng, sink);
      // snapshots land in the bank before any meta step can sample them
      for (auto& s : snaps) bank.append(std::move(s));

      double meta_loss_sum = 0.0;
      for (std::size_t t = 0; t < steps_per_episode; ++t) {
        auto batch = bank.sample_batch(cfg.meta.batch_size, meta_rng);
        auto [evals, gaps] = materialize_batch(batch, nullptr);
        meta_loss_sum += nc.training_step(meta_opt, evals, gaps);
      }
      const StepRecord& last = res.trace.back();
      metrics.write({static_cast<std::int64_t>(episode), static_cast<std::int64_t>(last.step),
                     last.train_loss, last.test_loss, last.test_loss - last.train_loss,
                     last.nc_value, lam,
                     steps_per_episode ? meta_loss_sum / static_cast<double>(steps_per_episode)
                                       : 0.0});
      if (cfg.meta.checkpoint_every && (episode + 1) % cfg.meta.checkpoint_every == 0) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "checkpoint-%06zu.ncxckpt", episode + 1);
        nc.save(out_dir / buf);
      }
    }
  }
  metrics.flush();

  MetaTrainResult result;
  result.episodes = cfg.meta.episodes;
  result.bank_size = bank.size();
  result.checkpoint_path = out_dir / "checkpoint.ncxckpt";
  nc.save(result.checkpoint_path);

  if (bank.size() >= 2) {
    Rng fit_rng = root.fork(2);
    const std::size_t n = std::min<std::size_t>(2000, bank.size());
    auto sample = bank.sample_batch(n, fit_rng);
    result.training_fit = evaluate_gap_fit(nc, sample);
  }
  std::size_t holdout_diverged = 0;
  if (cfg.meta.holdout_episodes > 0) {
    // pure-predictor fit: fresh unregularized trajectories
    auto fit_over = [&](const Regularizer* reg, double lambda, Rng rng) {
      const std::vector<Snapshot> holdout =
          generate_snapshots(cfg.task, learner_cfg, reg, lambda, cfg.meta.holdout_episodes,
                             cfg.meta.snapshot_every, rng, &holdout_diverged);
      std::vector<std::shared_ptr<const Snapshot>> ptrs;
      ptrs.reserve(holdout.size());
      for (const auto& s : holdout) ptrs.push_back(std::make_shared<const Snapshot>(s));
      return evaluate_gap_fit(nc, ptrs);
    };
    result.holdout_fit = fit_over(nullptr, 0.0, root.fork(3));
    result.holdout_fit_regularized =
        fit_over(regularizer_override ? regularizer_override : &nc, 1.0, root.fork(4));
  }

  const auto finished = std::chrono::steady_clock::now();
  const double wall =
      std::chrono::duration_cast<std::chrono::duration<double>>(finished - started).count();
  write_json(out_dir / "eval.json",
             {{"bank_size", result.bank_size},
              {"training_fit", fit_to_json(result.training_fit)},
              {"holdout_fit", fit_to_json(result.holdout_fit)},
              {"holdout_fit_regularized", fit_to_json(result.holdout_fit_regularized)},
              {"holdout_diverged_episodes", holdout_diverged}});
  // wall-clock lives here, never in the metrics streams
  write_json(out_dir / "run.json", {{"wall_seconds", wall}, {"episodes", cfg.meta.episodes}});
  return result;
}

const RegularizerComparison::Row& RegularizerComparison::row(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return r;
  throw ContractError("comparison: no row '" + method + "'");
}

std::string RegularizerComparison::to_table() const {
  std::string out = "method";
  for (std::size_t s : steps) out += "\tstep" + std::to_string(s);
  out += "\n";
  for (const auto& r : rows) {
    out += r.method;
    for (double v : r.test_loss) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "\t%.4f", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

RegularizerComparison run_regularizer_comparison(const ExperimentConfig& cfg,
                                                 const NcModel& model, std::size_t tasks) {
  if (tasks == 0) throw ContractError("comparison: need at least one task");
  struct MethodSpec {
    std::string label;
    Penalty penalty;
    bool use_nc = false;
  };
  std::vector<MethodSpec> methods{{"none", {}, false}};
  for (double w : {1.0, 0.1, 0.01}) methods.push_back({"l2_" + format_double(w),
                                                       {PenaltyKind::kL2, w}, false});
  for (double w : {1.0, 0.1, 0.01}) methods.push_back({"l1_" + format_double(w),
                                                       {PenaltyKind::kL1, w}, false});
  methods.push_back({"nc", {}, true});

  const LearnerConfig learner_cfg = to_learner_config(cfg.learner, cfg.task);
  RegularizerComparison cmp;
  cmp.tasks = tasks;
  for (std::size_t s : {1u, 2u, 4u, 8u, 16u})
    if (s <= learner_cfg.steps) cmp.steps.push_back(s);

  std::vector<std::vector<double>> sums(methods.size(),
                                        std::vector<double>(cmp.steps.size(), 0.0));
  Rng root(cfg.seed);
  for (std::size_t t = 0; t < tasks; ++t) {
    Rng task_rng = root.fork(2 * t);
    TaskBatch task = sample_task(cfg.task, task_rng);
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      Rng learner_rng = root.fork(2 * t + 1);  // same init for every method
      const auto& m = methods[mi];
      TrainResult res =
          train_regularized(learner_cfg, task, m.use_nc ? &model : nullptr,
                            m.use_nc ? 1.0 : 0.0, learner_rng, {}, m.penalty);
      for (std::size_t si = 0; si < cmp.steps.size(); ++si)
        sums[mi][si] += res.trace.at(cmp.steps[si]).test_loss;
    }
  }
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    RegularizerComparison::Row row;
    row.method = methods[mi].label;
    for (double s : sums[mi]) row.test_loss.push_back(s / static_cast<double>(tasks));
    cmp.rows.push_back(std::move(row));
  }
  return cmp;
}

GapFitStats ood_fit(const ExperimentConfig& cfg, const NcModel& model,
                    const LearnerSettings& learner, std::size_t episodes, Rng rng,
                    std::size_t* diverged_episodes) {
  const LearnerConfig lcfg = to_learner_config(learner, cfg.task);
  std::size_t local_diverged = 0;
  // fit statistics come from unregularized runs: they keep the learner
  // variants comparable (closed-form learners cannot be regularized) and
  // keep the gap distribution untainted by the model under evaluation
  const std::vector<Snapshot> snaps =
      generate_snapshots(cfg.task, lcfg, nullptr, 0.0, episodes, cfg.meta.snapshot_every, rng,
                         diverged_episodes ? diverged_episodes : &local_diverged);
  std::vector<std::shared_ptr<const Snapshot>> ptrs;
  ptrs.reserve(snaps.size());
  for (const auto& s : snaps) ptrs.push_back(std::make_shared<const Snapshot>(s));
  if (ptrs.size() < 2) {
    // not enough surviving trajectories for a fit
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
            ptrs.size()};
  }
  return evaluate_gap_fit(model, ptrs);
}

const OodRow& OodReport::row(const std::string& variant) const {
  for (const auto& r : rows)
    if (r.variant == variant) return r;
  throw ContractError("ood report: no row '" + variant + "'");
}

std::string OodReport::to_table() const {
  std::string out = "variant\tr_squared\tmae\ttest_nc\ttest_none\ttest_l2\tdiverged\n";
  for (const auto& r : rows) {
    char buf[192];
    if (r.trainable)
      std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%zu+%zu\n",
                    r.variant.c_str(), r.fit.r_squared, r.fit.mae, r.test_nc, r.test_none,
                    r.test_l2, r.diverged_fit, r.diverged_loss);
    else
      std::snprintf(buf, sizeof(buf), "%s\t%.4f\t%.4f\t-\t%.4f\t-\t%zu+%zu\n",
                    r.variant.c_str(), r.fit.r_squared, r.fit.mae, r.test_none, r.diverged_fit,
                    r.diverged_loss);
    out += buf;
  }
  return out;
}

OodReport run_ood_sweep(const ExperimentConfig& cfg, const NcModel& model,
                        std::size_t fit_episodes, std::size_t loss_tasks) {
  struct Variant {
    std::string label;
    LearnerSettings settings;
  };
  LearnerSettings ref = cfg.learner;
  std::vector<Variant> variants{{"reference", ref}};
  for (Activation a : {Activation::kTanh, Activation::kSigmoid}) {
    LearnerSettings s = ref;
    s.activation = a;
    variants.push_back({"activation=" + std::string(activation_name(a)), s});
  }
  for (double lr : {0.1, 0.001}) {
    LearnerSettings s = ref;
    s.learning_rate = lr;
    variants.push_back({"lr=" + format_double(lr), s});
  }
  for (std::size_t w : {std::size_t{10}, std::size_t{160}}) {
    LearnerSettings s = ref;
    s.width = w;
    variants.push_back({"width=" + std::to_string(w), s});
  }
  for (std::size_t d : {std::size_t{1}, std::size_t{4}}) {
    LearnerSettings s = ref;
    s.depth = d;
    variants.push_back({"depth=" + std::to_string(d), s});
  }
  for (LearnerKind k : {LearnerKind::kNearestNeighbor, LearnerKind::kConstant}) {
    LearnerSettings s = ref;
    s.kind = k;
    variants.push_back({std::string(learner_kind_name(k)), s});
  }

  OodReport report;
  Rng root(cfg.seed + 17);
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const auto& var = variants[vi];
    const LearnerConfig lcfg = to_learner_config(var.settings, cfg.task);
    const bool trainable = lcfg.kind == LearnerKind::kMlp;
    OodRow row;
    row.variant = var.label;
    row.trainable = trainable;
    // closed-form learners yield one snapshot per task; scale up episodes
    // to gather a comparable sample
    const std::size_t episodes =
        trainable ? fit_episodes : fit_episodes * (ref.steps / cfg.meta.snapshot_every + 1);
    row.fit = ood_fit(cfg, model, var.settings, episodes, root.fork(100 + vi),
                      &row.diverged_fit);

    if (trainable && loss_tasks > 0) {
      const std::vector<double> l2_grid{1.0, 0.1, 0.01};
      double sum_nc = 0.0, sum_none = 0.0;
      std::size_t n_nc = 0, n_none = 0;
      std::vector<double> sum_l2(l2_grid.size(), 0.0);
      std::vector<std::size_t> n_l2(l2_grid.size(), 0);
      Rng loss_rng = root.fork(500 + vi);
      auto final_test = [&](const TaskBatch& task, Rng r, const NcModel* reg,
                            const Penalty& pen, double& sum, std::size_t& n) {
        try {
          sum += train_regularized(lcfg, task, reg, reg ? 1.0 : 0.0, r, {}, pen)
                     .trace.back()
                     .test_loss;
          ++n;
        } catch (const NumericError&) {
          ++row.diverged_loss;
        }
      };
      for (std::size_t t = 0; t < loss_tasks; ++t) {
        Rng task_rng = loss_rng.fork(2 * t);
        TaskBatch task = sample_task(cfg.task, task_rng);
        const auto learner_seed = 2 * t + 1;
        final_test(task, loss_rng.fork(learner_seed), nullptr, {}, sum_none, n_none);
        for (std::size_t li = 0; li < l2_grid.size(); ++li)
          final_test(task, loss_rng.fork(learner_seed), nullptr,
                     Penalty{PenaltyKind::kL2, l2_grid[li]}, sum_l2[li], n_l2[li]);
        final_test(task, loss_rng.fork(learner_seed), &model, {}, sum_nc, n_nc);
      }
      const auto safe_mean = [](double sum, std::size_t n) {
        return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
      };
      row.test_nc = safe_mean(sum_nc, n_nc);
      row.test_none = safe_mean(sum_none, n_none);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t li = 0; li < l2_grid.size(); ++li)
        if (n_l2[li]) best = std::min(best, sum_l2[li] / static_cast<double>(n_l2[li]));
      row.test_l2 = std::isfinite(best) ? best : std::numeric_limits<double>::quiet_NaN();
    } else if (!trainable && loss_tasks > 0) {
      double sum_none = 0.0;
      Rng loss_rng = root.fork(500 + vi);
      for (std::size_t t = 0; t < loss_tasks; ++t) {
        Rng task_rng = loss_rng.fork(2 * t);
        TaskBatch task = sample_task(cfg.task, task_rng);
        Rng r = loss_rng.fork(2 * t + 1);
        sum_none += train_regularized(lcfg, task, nullptr, 0.0, r).trace.back().test_loss;
      }
      row.test_none = sum_none / static_cast<double>(loss_tasks);
      row.test_nc = std::numeric_limits<double>::quiet_NaN();
      row.test_l2 = std::numeric_limits<double>::quiet_NaN();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

// gathers rows of a dataset split referenced by global indices
Matrix gather_rows(const Matrix& src, std::span<const std::uint64_t> rows) {
  Matrix out(rows.size(), src.cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < src.cols; ++j) out(i, j) = src(rows[i], j);
  return out;
}

struct FullEval {
  double train_loss = 0.0, test_loss = 0.0, test_accuracy = 0.0;
};

FullEval evaluate_full(const Mlp& net, const Dataset& train_ds, const Dataset& test_ds) {
  auto probs = [&](const Matrix& x) {
    return softmax(net.forward(from_matrix(x)), -1)->to_matrix();
  };
  FullEval ev;
  const Matrix p_tr = probs(train_ds.x);
  const Matrix p_te = probs(test_ds.x);
  ev.train_loss = mean_loss(p_tr, train_ds.y, LossKind::kCrossEntropy);
  ev.test_loss = mean_loss(p_te, test_ds.y, LossKind::kCrossEntropy);
  ev.test_accuracy = accuracy(p_te, test_ds.y);
  return ev;
}

// disjoint index minibatches drawn from [0, n)
std::pair<std::vector<std::uint64_t>, std::vector<std::uint64_t>> two_disjoint_batches(
    std::size_t n, std::size_t a, std::size_t b, Rng& rng) {
  std::vector<std::uint64_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = a + b;
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + rng.index(n - i);
    std::swap(idx[i], idx[j]);
  }
  return {{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(a)},
          {idx.begin() + static_cast<std::ptrdiff_t>(a),
           idx.begin() + static_cast<std::ptrdiff_t>(take)}};
}

}  // namespace

SingleTaskReport run_single_task(const SingleTaskConfig& cfg) {
  cfg.validate();
  const Dataset train_ds = load_dataset(cfg.dataset);
  const Dataset test_ds = load_dataset(cfg.test_dataset);
  if (train_ds.kind != TaskKind::kClassification)
    throw ContractError("single-task runner requires a classification dataset");
  if (test_ds.feature_dim() != train_ds.feature_dim() || test_ds.classes != train_ds.classes)
    throw ContractError("single-task: train/test dataset schema mismatch");

  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);

  Rng root(cfg.seed);
  NcClassificationConfig ncc;
  ncc.input_dim = train_ds.feature_dim();
  ncc.classes = train_ds.classes;
  ncc.enc_layers = cfg.nc.enc_layers;
  ncc.dec_layers = cfg.nc.dec_layers;
  ncc.model_dim = cfg.nc.model_dim;
  ncc.heads = cfg.nc.heads;
  ncc.self_attention_layers = cfg.nc.self_attention_layers;
  Rng init_rng = root.fork(0);
  NcModel nc = NcModel::init_classification(ncc, init_rng);

  TaskConfig task_like;
  task_like.kind = TaskKind::kClassification;
  task_like.classes = train_ds.classes;
  task_like.dim = train_ds.feature_dim();
  const LearnerConfig lcfg = to_learner_config(cfg.learner, task_like);
  LearnerMeta lmeta{lcfg.arch_string(), lcfg.learning_rate};

  BankConfig bank_cfg;
  bank_cfg.capacity = cfg.meta.bank_capacity;
  MemoryBank bank(bank_cfg);
  OptimizerState meta_opt = make_adam(cfg.meta.adam_lr);
  MetricsWriter meta_metrics(out_dir, "meta_metrics");
  const LambdaSchedule sched{cfg.meta.lambda_warmup};
  const std::size_t steps_per_episode =
      cfg.meta.steps_per_episode ? cfg.meta.steps_per_episode : lcfg.steps;
  Rng meta_rng = root.fork(1);

  SplitProtocol proto;
  proto.dataset = &train_ds;
  proto.train_count = cfg.subtask_train;
  proto.val_count = cfg.subtask_val;

  // ---- meta phase: estimator training on random sub-splits ----
  for (std::size_t episode = 0; episode < cfg.meta.episodes; ++episode) {
    const double lam = lambda_at(sched, episode);
    Rng task_rng = root.fork(1000 + 3 * episode);
    Rng learner_rng = root.fork(1001 + 3 * episode);
    Rng batch_rng = root.fork(1002 + 3 * episode);
    TaskBatch task = sample_subtask(proto, task_rng);

    Mlp net = Mlp::init(lcfg.mlp, learner_rng, "learner");
    const auto params = net.parameters();
    const auto frozen = nc.frozen_parameters();
    OptimizerState opt = make_sgd(lcfg.learning_rate);
    const TensorPtr sub_xtr = from_matrix(task.x_tr);
    const TensorPtr sub_ytr = from_matrix(task.y_tr);
    const TensorPtr sub_xte = from_matrix(task.x_te);

    double last_train = 0.0, last_val = 0.0, last_nc = 0.0;
    std::vector<Snapshot> snaps;
    for (std::size_t step = 0; step <= lcfg.steps; ++step) {
      auto [mb_tr, mb_te_pos] =
          two_disjoint_batches(cfg.subtask_train, cfg.minibatch, 0, batch_rng);
      // validation minibatch comes from the val side
      std::vector<std::uint64_t> mb_te(cfg.minibatch_te);
      {
        std::vector<std::uint64_t> idx(cfg.subtask_val);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < cfg.minibatch_te; ++i) {
          const std::size_t j = i + batch_rng.index(cfg.subtask_val - i);
          std::swap(idx[i], idx[j]);
        }
        mb_te.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cfg.minibatch_te));
      }

      const TensorPtr x_mb = from_matrix(gather_rows(task.x_tr, mb_tr));
      const TensorPtr y_mb = from_matrix(gather_rows(task.y_tr, mb_tr));
      const TensorPtr xte_mb = from_matrix(gather_rows(task.x_te, mb_te));

      TensorPtr logits_tr = net.forward(x_mb);
      TensorPtr logits_te = net.forward(xte_mb);
      TensorPtr loss_pe = cross_entropy_per_example(logits_tr, y_mb);
      TensorPtr train_loss = mean(loss_pe);
      TensorPtr p_tr = softmax(logits_tr, -1);
      TensorPtr p_te = softmax(logits_te, -1);

      EvalTensors evt;
      evt.kind = TaskKind::kClassification;
      evt.x_tr = x_mb;
      evt.x_te = xte_mb;
      evt.y_tr = y_mb;
      evt.pred_tr = p_tr;
      evt.pred_te = p_te;
      evt.train_loss_per_example = loss_pe;
      evt.train_loss = train_loss;
      TensorPtr nc_t = nc.value(evt);
      last_nc = nc_t->value();
      TensorPtr total = lam > 0 ? add(train_loss, mul(nc_t, lam)) : train_loss;
      if (!std::isfinite(total->value()))
        throw NumericError("single-task meta phase: non-finite loss at episode " +
                           std::to_string(episode) + ", step " + std::to_string(step));

      const bool snap_now = step % cfg.meta.snapshot_every == 0 || step == lcfg.steps;
      if (snap_now) {
        // the gap target uses the full sub-split losses of the current net
        const Matrix full_ptr = softmax(net.forward(sub_xtr), -1)->to_matrix();
        const Matrix full_pte = softmax(net.forward(sub_xte), -1)->to_matrix();
        last_train = mean_loss(full_ptr, task.y_tr, LossKind::kCrossEntropy);
        last_val = mean_loss(full_pte, task.y_te, LossKind::kCrossEntropy);
        Snapshot s;
        s.task_id = episode;
        s.step = step;
        s.kind = TaskKind::kClassification;
        s.idx_tr.reserve(mb_tr.size());
        for (auto p : mb_tr) s.idx_tr.push_back(task.idx_tr[p]);
        for (auto p : mb_te) s.idx_te.push_back(task.idx_te[p]);
        s.val_count = task.idx_te.size();
        s.y_tr = y_mb->to_matrix();
        s.pred_tr = p_tr->to_matrix();
        s.pred_te = p_te->to_matrix();
        s.train_loss_per_example = loss_pe->to_matrix();
        s.gap = last_val - last_train;
        s.learner = lmeta;
        snaps.push_back(std::move(s));
      }
      if (step == lcfg.steps) break;
      zero_grad(params);
      backward(total, &frozen);
      optimizer_step(opt, params);
    }
    for (auto& s : snaps) bank.append(std::move(s));

    double meta_loss_sum = 0.0;
    for (std::size_t t = 0; t < steps_per_episode; ++t) {
      auto batch = bank.sample_batch(cfg.meta.batch_size, meta_rng);
      auto [evals, gaps] = materialize_batch(batch, &train_ds);
      meta_loss_sum += nc.training_step(meta_opt, evals, gaps);
    }
    meta_metrics.write({static_cast<std::int64_t>(episode),
                        static_cast<std::int64_t>(lcfg.steps), last_train, last_val,
                        last_val - last_train, last_nc, lam,
                        meta_loss_sum / static_cast<double>(steps_per_episode)});
  }
  meta_metrics.flush();

  SingleTaskReport report;
  report.checkpoint_path = out_dir / "checkpoint.ncxckpt";
  nc.save(report.checkpoint_path);

  // ---- final phase: full training set, clipped estimate as regularizer ----
  const double lam_final = lambda_at(sched, cfg.meta.episodes);
  auto final_run = [&](const NcModel* reg, const std::string& metrics_name) {
    Rng net_rng = root.fork(7000);  // identical init across both runs
    Mlp net = Mlp::init(lcfg.mlp, net_rng, "final");
    const auto params = net.parameters();
    const auto frozen = reg ? reg->frozen_parameters() : std::vector<TensorPtr>{};
    OptimizerState opt = make_sgd(lcfg.learning_rate);
    MetricsWriter metrics(out_dir, metrics_name);
    for (std::size_t step = 0; step < cfg.final_steps; ++step) {
      Rng step_rng = root.fork(9000 + step);  // identical batches across runs
      auto [mb_tr, mb_te] =
          two_disjoint_batches(train_ds.rows(), cfg.minibatch, cfg.minibatch_te, step_rng);
      const TensorPtr x_mb = from_matrix(gather_rows(train_ds.x, mb_tr));
      const TensorPtr y_mb = from_matrix(gather_rows(train_ds.y, mb_tr));
      const TensorPtr xte_mb = from_matrix(gather_rows(train_ds.x, mb_te));

      TensorPtr logits_tr = net.forward(x_mb);
      TensorPtr loss_pe = cross_entropy_per_example(logits_tr, y_mb);
      TensorPtr train_loss = mean(loss_pe);
      TensorPtr total = train_loss;
      double nc_v = 0.0;
      if (reg && lam_final > 0) {
        EvalTensors evt;
        evt.kind = TaskKind::kClassification;
        evt.x_tr = x_mb;
        evt.x_te = xte_mb;
        evt.y_tr = y_mb;
        evt.pred_tr = softmax(logits_tr, -1);
        evt.pred_te = softmax(net.forward(xte_mb), -1);
        evt.train_loss_per_example = loss_pe;
        evt.train_loss = train_loss;
        TensorPtr nc_t = clip_min(reg->value(evt), cfg.clip_floor);
        nc_v = nc_t->value();
        total = add(train_loss, mul(nc_t, lam_final));
      }
      if (!std::isfinite(total->value()))
        throw NumericError("single-task final phase: non-finite loss at step " +
                           std::to_string(step));
      if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.final_steps) {
        const FullEval fe = evaluate_full(net, train_ds, test_ds);
        metrics.write({-1, static_cast<std::int64_t>(step + 1), fe.train_loss, fe.test_loss,
                       fe.test_loss - fe.train_loss, nc_v, reg ? lam_final : 0.0, 0.0});
      }
      zero_grad(params);
      backward(total, frozen.empty() ? nullptr : &frozen);
      optimizer_step(opt, params);
    }
    metrics.flush();
    return evaluate_full(net, train_ds, test_ds);
  };

  const FullEval with_nc = final_run(&nc, "final_metrics");
  const FullEval baseline = final_run(nullptr, "final_baseline_metrics");

  report.nc_test_loss = with_nc.test_loss;
  report.nc_test_accuracy = with_nc.test_accuracy;
  report.nc_train_loss = with_nc.train_loss;
  report.nc_gap = with_nc.test_loss - with_nc.train_loss;
  report.base_test_loss = baseline.test_loss;
  report.base_test_accuracy = baseline.test_accuracy;
  report.base_train_loss = baseline.train_loss;
  report.base_gap = baseline.test_loss - baseline.train_loss;

  write_json(out_dir / "single_task_report.json",
             {{"nc", {{"test_loss", report.nc_test_loss},
                      {"test_accuracy", report.nc_test_accuracy},
                      {"train_loss", report.nc_train_loss},
                      {"gap", report.nc_gap}}},
              {"baseline", {{"test_loss", report.base_test_loss},
                            {"test_accuracy", report.base_test_accuracy},
                            {"train_loss", report.base_train_loss},
                            {"gap", report.base_gap}}}});
  return report;
}

BoundReport run_bound(const BoundRunConfig& cfg, const std::filesystem::path& out_dir) {
  std::vector<ResidualSample> residuals;
  if (!cfg.residuals_file.empty()) {
    std::ifstream in(cfg.residuals_file);
    if (!in) throw FormatError("cannot open residuals file '" + cfg.residuals_file + "'");
    double v;
    while (in >> v) residuals.push_back({v});
  } else if (!cfg.bank_file.empty()) {
    if (cfg.checkpoint.empty())
      throw ContractError("bound: bank_file needs a checkpoint to score snapshots");
    NcModel model = NcModel::load(cfg.checkpoint);
    BankConfig bc;
    bc.capacity = std::numeric_limits<std::size_t>::max();
    MemoryBank bank = MemoryBank::load(cfg.bank_file, bc);
    std::optional<Dataset> ds;
    if (!cfg.dataset.empty()) ds = load_dataset(cfg.dataset);
    auto [evals, gaps] = materialize_batch(bank.contents(), ds ? &*ds : nullptr);
    const std::vector<double> preds = model.predict(evals);
    residuals.reserve(gaps.size());
    for (std::size_t i = 0; i < gaps.size(); ++i) residuals.push_back({gaps[i] - preds[i]});
  } else {
    throw ContractError("bound: need residuals_file or bank_file");
  }

  const double eps = (cfg.epsilon <= 0 && cfg.target_prob > 0)
                         ? epsilon_for_target(residuals, cfg.delta, cfg.target_prob)
                         : cfg.epsilon;
  const BoundReport rep = compute_bound(residuals, eps, cfg.delta);
  fs::create_directories(out_dir);
  write_json(out_dir / "bound_report.json",
             {{"epsilon", rep.epsilon},
              {"delta", rep.delta},
              {"n", rep.n},
              {"count_exceeding", rep.count_exceeding},
              {"probability_lower_bound", rep.probability_lower_bound},
              {"raw_lower_bound", rep.raw_lower_bound}});
  return rep;
}

}  // namespace ncx
