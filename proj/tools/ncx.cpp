// ncx command line: meta-train the gap estimator, evaluate its fit, run
// the regularizer comparison and OOD sweep, drive the single-task
// protocol, and compute probability lower bounds from residuals.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ncx/harness.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config, "JSON config file");
  if (config_required) c->required();
  cmd->add_option("--seed", opts.seed, "Override the config seed");
  cmd->add_option("--out", opts.out, "Override the output directory");
}

ncx::ExperimentConfig resolve_experiment(const CommonOpts& opts) {
  ncx::ExperimentConfig cfg =
      opts.config.empty() ? ncx::sinusoid_defaults() : ncx::load_experiment_config(opts.config);
  if (opts.seed) cfg.seed = *opts.seed;
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string csv_from_comparison(const ncx::RegularizerComparison& cmp) {
  std::string out = "method";
  for (std::size_t s : cmp.steps) out += ",step" + std::to_string(s);
  out += "\n";
  for (const auto& row : cmp.rows) {
    out += row.method;
    for (double v : row.test_loss) out += "," + ncx::format_double(v);
    out += "\n";
  }
  return out;
}

std::string csv_from_ood(const ncx::OodReport& rep) {
  std::string out = "variant,r_squared,mae,n,test_nc,test_none,test_l2\n";
  for (const auto& r : rep.rows) {
    out += r.variant + "," + ncx::format_double(r.fit.r_squared) + "," +
           ncx::format_double(r.fit.mae) + "," + std::to_string(r.fit.n) + ",";
    if (r.trainable)
      out += ncx::format_double(r.test_nc) + "," + ncx::format_double(r.test_none) + "," +
             ncx::format_double(r.test_l2);
    else
      out += "," + ncx::format_double(r.test_none) + ",";
    out += "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  setenv("OMP_WAIT_POLICY", "passive", 0);  // avoid idle spin on small boxes
  CLI::App app{"ncx: meta-learned generalization-gap estimation and regularization"};
  app.require_subcommand(1);

  CommonOpts meta_opts, fit_opts, cmp_opts, ood_opts, single_opts, bound_opts;

  auto* meta = app.add_subcommand("meta-train", "Interleaved task learning + estimator training");
  add_common(meta, meta_opts, false);

  auto* fit = app.add_subcommand("eval-fit", "R^2/MAE of a checkpoint against observed gaps");
  add_common(fit, fit_opts, false);
  std::string fit_checkpoint, fit_bank, fit_dataset;
  std::size_t fit_episodes = 35;
  fit->add_option("--checkpoint", fit_checkpoint, "Estimator checkpoint")->required();
  fit->add_option("--bank", fit_bank, "Score a persisted snapshot bank instead of fresh tasks");
  fit->add_option("--dataset", fit_dataset, "Dataset file for index-stored snapshots");
  fit->add_option("--episodes", fit_episodes, "Fresh holdout episodes when no bank is given");

  auto* cmp = app.add_subcommand("compare-regularizers",
                                 "Mean test loss after {1,2,4,8,16} steps per method");
  add_common(cmp, cmp_opts, false);
  std::string cmp_checkpoint;
  std::size_t cmp_tasks = 200;
  cmp->add_option("--checkpoint", cmp_checkpoint, "Estimator checkpoint")->required();
  cmp->add_option("--tasks", cmp_tasks, "Number of fresh tasks");

  auto* ood = app.add_subcommand("ood-sweep", "Fit + regularization metrics per learner variant");
  add_common(ood, ood_opts, false);
  std::string ood_checkpoint;
  std::size_t ood_fit_episodes = 30, ood_loss_tasks = 100;
  ood->add_option("--checkpoint", ood_checkpoint, "Estimator checkpoint")->required();
  ood->add_option("--fit-episodes", ood_fit_episodes, "Episodes per variant for fit statistics");
  ood->add_option("--loss-tasks", ood_loss_tasks, "Tasks per variant for test-loss comparison");

  auto* single = app.add_subcommand("single-task", "Sub-task protocol on one dataset");
  add_common(single, single_opts, true);

  auto* bound = app.add_subcommand("bound", "Probability lower bound from residuals");
  add_common(bound, bound_opts, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (meta->parsed()) {
      const ncx::ExperimentConfig cfg = resolve_experiment(meta_opts);
      const ncx::MetaTrainResult res = ncx::run_meta_training(cfg);
      std::printf("checkpoint: %s\n", res.checkpoint_path.string().c_str());
      std::printf("bank snapshots: %zu\n", res.bank_size);
      std::printf("training fit:  R^2 = %.4f  MAE = %.4f  (n = %zu)\n",
                  res.training_fit.r_squared, res.training_fit.mae, res.training_fit.n);
      std::printf("holdout fit:   R^2 = %.4f  MAE = %.4f  (n = %zu)\n",
                  res.holdout_fit.r_squared, res.holdout_fit.mae, res.holdout_fit.n);
      std::printf("regularized:   R^2 = %.4f  MAE = %.4f  (n = %zu)\n",
                  res.holdout_fit_regularized.r_squared, res.holdout_fit_regularized.mae,
                  res.holdout_fit_regularized.n);
    } else if (fit->parsed()) {
      ncx::ExperimentConfig cfg = resolve_experiment(fit_opts);
      const ncx::NcModel model = ncx::NcModel::load(fit_checkpoint);
      ncx::GapFitStats stats;
      if (!fit_bank.empty()) {
        ncx::BankConfig bc;
        bc.capacity = std::numeric_limits<std::size_t>::max();
        const ncx::MemoryBank bank = ncx::MemoryBank::load(fit_bank, bc);
        std::optional<ncx::Dataset> ds;
        if (!fit_dataset.empty()) ds = ncx::load_dataset(fit_dataset);
        stats = ncx::evaluate_gap_fit(model, bank.contents(), ds ? &*ds : nullptr);
      } else {
        const auto learner_cfg = ncx::to_learner_config(cfg.learner, cfg.task);
        const auto snaps =
            ncx::generate_snapshots(cfg.task, learner_cfg, nullptr, 0.0, fit_episodes,
                                    cfg.meta.snapshot_every, ncx::Rng(cfg.seed).fork(3));
        std::vector<std::shared_ptr<const ncx::Snapshot>> ptrs;
        for (const auto& s : snaps) ptrs.push_back(std::make_shared<const ncx::Snapshot>(s));
        stats = ncx::evaluate_gap_fit(model, ptrs);
      }
      std::printf("R^2 = %.4f  MAE = %.4f  (n = %zu)\n", stats.r_squared, stats.mae, stats.n);
      if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        write_text(fs::path(cfg.out_dir) / "fit.json",
                   "{\"r_squared\": " + ncx::format_double(stats.r_squared) +
                       ", \"mae\": " + ncx::format_double(stats.mae) +
                       ", \"n\": " + std::to_string(stats.n) + "}\n");
      }
    } else if (cmp->parsed()) {
      const ncx::ExperimentConfig cfg = resolve_experiment(cmp_opts);
      const ncx::NcModel model = ncx::NcModel::load(cmp_checkpoint);
      const ncx::RegularizerComparison table =
          ncx::run_regularizer_comparison(cfg, model, cmp_tasks);
      std::fputs(table.to_table().c_str(), stdout);
      fs::create_directories(cfg.out_dir);
      write_text(fs::path(cfg.out_dir) / "comparison.csv", csv_from_comparison(table));
    } else if (ood->parsed()) {
      const ncx::ExperimentConfig cfg = resolve_experiment(ood_opts);
      const ncx::NcModel model = ncx::NcModel::load(ood_checkpoint);
      const ncx::OodReport rep =
          ncx::run_ood_sweep(cfg, model, ood_fit_episodes, ood_loss_tasks);
      std::fputs(rep.to_table().c_str(), stdout);
      fs::create_directories(cfg.out_dir);
      write_text(fs::path(cfg.out_dir) / "ood.csv", csv_from_ood(rep));
    } else if (single->parsed()) {
      ncx::SingleTaskConfig cfg = ncx::load_single_task_config(single_opts.config);
      if (single_opts.seed) cfg.seed = *single_opts.seed;
      if (!single_opts.out.empty()) cfg.out_dir = single_opts.out;
      const ncx::SingleTaskReport rep = ncx::run_single_task(cfg);
      std::printf("final (with estimator):  test_loss = %.4f  test_acc = %.4f  gap = %+.4f\n",
                  rep.nc_test_loss, rep.nc_test_accuracy, rep.nc_gap);
      std::printf("final (baseline):        test_loss = %.4f  test_acc = %.4f  gap = %+.4f\n",
                  rep.base_test_loss, rep.base_test_accuracy, rep.base_gap);
    } else if (bound->parsed()) {
      const ncx::BoundRunConfig cfg = ncx::load_bound_config(bound_opts.config);
      const std::string out_dir = bound_opts.out.empty() ? "out" : bound_opts.out;
      const ncx::BoundReport rep = ncx::run_bound(cfg, out_dir);
      std::printf("n = %zu, epsilon = %.6f, delta = %.4f\n", rep.n, rep.epsilon, rep.delta);
      std::printf("count exceeding = %zu\n", rep.count_exceeding);
      std::printf("probability lower bound = %.6f (raw %.6f)\n", rep.probability_lower_bound,
                  rep.raw_lower_bound);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
