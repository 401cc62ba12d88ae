#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ncx/bound.hpp"
#include "ncx/config.hpp"
#include "ncx/learners.hpp"
#include "ncx/memory_bank.hpp"
#include "ncx/metrics.hpp"
#include "ncx/model.hpp"

namespace ncx {

struct GapFitStats {
  double r_squared = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
};

/// R² = 1 − SS_res/SS_tot and MAE of predictions against observed gaps.
/// Needs at least two points and nonzero gap variance.
GapFitStats evaluate_gap_fit(std::span<const double> predictions, std::span<const double> gaps);
GapFitStats evaluate_gap_fit(const NcModel& model,
                             std::span<const std::shared_ptr<const Snapshot>> snapshots,
                             const Dataset* dataset = nullptr);

/// Runs task learning on fresh tasks and collects snapshots along each
/// trajectory (every `snapshot_every` steps, final step included). When
/// `diverged_episodes` is given, episodes whose learner hits a non-finite
/// loss are dropped and counted instead of aborting the caller.
std::vector<Snapshot> generate_snapshots(const TaskConfig& task_cfg,
                                         const LearnerConfig& learner_cfg,
                                         const Regularizer* regularizer, double lambda,
                                         std::size_t episodes, std::size_t snapshot_every,
                                         Rng rng, std::size_t* diverged_episodes = nullptr);

struct MetaTrainResult {
  std::filesystem::path checkpoint_path;
  GapFitStats training_fit;  // over a uniform sample of bank snapshots
  // fresh unregularized runs: the estimator as a pure gap predictor
  GapFitStats holdout_fit;
  // fresh runs regularized by the trained estimator: the deployment view
  GapFitStats holdout_fit_regularized;
  std::size_t episodes = 0;
  std::size_t bank_size = 0;
};

/// Interleaved task learning and estimator training. Emits metrics.ndjson
/// + metrics.csv, periodic checkpoints and checkpoint.ncxckpt under
/// cfg.out_dir. `regularizer_override` replaces the live estimator as the
/// learners' regularizer (the estimator still trains); used for ablations
/// and tests.
MetaTrainResult run_meta_training(const ExperimentConfig& cfg,
                                  const Regularizer* regularizer_override = nullptr);

struct RegularizerComparison {
  std::vector<std::size_t> steps;  // columns
  struct Row {
    std::string method;
    std::vector<double> test_loss;  // mean over tasks, one per step column
  };
  std::vector<Row> rows;
  std::size_t tasks = 0;

  std::string to_table() const;
  const Row& row(const std::string& method) const;
};

/// Mean test loss after {1,2,4,8,16} steps for none / L2 grid / L1 grid /
/// NC over fresh tasks; every method sees identical tasks and inits.
RegularizerComparison run_regularizer_comparison(const ExperimentConfig& cfg,
                                                 const NcModel& model, std::size_t tasks = 200);

struct OodRow {
  std::string variant;
  GapFitStats fit;
  bool trainable = true;
  double test_nc = 0.0;    // mean final test loss, NC-regularized
  double test_none = 0.0;  // unregularized
  double test_l2 = 0.0;    // best L2 over {1, 0.1, 0.01}
  // diverged runs are dropped from the statistics and counted here
  std::size_t diverged_fit = 0;
  std::size_t diverged_loss = 0;
};

struct OodReport {
  std::vector<OodRow> rows;
  std::string to_table() const;
  const OodRow& row(const std::string& variant) const;
};

/// Varies one learner axis at a time from the reference
/// (relu, 0.01, 40, 2): activation, learning rate, width, depth; plus the
/// closed-form learners. Reports fit statistics and test losses per
/// variant using the given trained estimator.
OodReport run_ood_sweep(const ExperimentConfig& cfg, const NcModel& model,
                        std::size_t fit_episodes = 30, std::size_t loss_tasks = 100);

/// Single OOD-style evaluation: fit statistics of `model` on snapshots
/// from `learner` trajectories (regularized when lambda > 0).
GapFitStats ood_fit(const ExperimentConfig& cfg, const NcModel& model,
                    const LearnerSettings& learner, std::size_t episodes, Rng rng,
                    std::size_t* diverged_episodes = nullptr);

struct SingleTaskReport {
  double nc_test_loss = 0.0, nc_test_accuracy = 0.0, nc_train_loss = 0.0, nc_gap = 0.0;
  double base_test_loss = 0.0, base_test_accuracy = 0.0, base_train_loss = 0.0,
         base_gap = 0.0;
  std::filesystem::path checkpoint_path;
};

/// The single-dataset protocol: meta-train the estimator on random
/// disjoint train/validation sub-splits of the training set, then train a
/// final learner on the full training set with the (clipped) estimate as
/// a regularizer, next to a λ=0 baseline with identical seeds.
SingleTaskReport run_single_task(const SingleTaskConfig& cfg);

/// Residuals from a file or from bank snapshots scored by a checkpoint;
/// computes the probability lower bound (or inverts it for a target).
BoundReport run_bound(const BoundRunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace ncx
