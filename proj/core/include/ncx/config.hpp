#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ncx/learners.hpp"
#include "ncx/model.hpp"
#include "ncx/types.hpp"

namespace ncx {

struct TaskConfig {
  TaskKind kind = TaskKind::kRegression;
  std::size_t m = 10;     // train shots
  std::size_t m_te = 15;  // held-out points per task
  // synthetic classification only
  std::size_t classes = 2;
  std::size_t dim = 2;
  double sigma = 0.25;

  std::size_t input_dim() const { return kind == TaskKind::kRegression ? 1 : dim; }
};

struct LearnerSettings {
  LearnerKind kind = LearnerKind::kMlp;
  std::size_t width = 40;
  std::size_t depth = 2;  // number of affine layers; hidden layers = depth-1
  Activation activation = Activation::kRelu;
  double learning_rate = 0.01;
  std::size_t steps = 16;
};

LearnerConfig to_learner_config(const LearnerSettings& s, const TaskConfig& task);

struct NcSettings {
  std::size_t model_dim = 64;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t heads = 4;
  std::size_t self_attention_layers = 1;  // classification variant
};

struct MetaConfig {
  std::size_t episodes = 2500;
  std::size_t batch_size = 64;
  double adam_lr = 5e-4;
  std::size_t steps_per_episode = 0;  // 0: one meta step per learner step
  std::size_t bank_capacity = 100000;
  std::size_t snapshot_every = 1;
  std::size_t lambda_warmup = 500;
  std::size_t checkpoint_every = 1000;
  std::size_t holdout_episodes = 35;
  std::size_t workers = 1;  // 2 enables the producer/consumer split
};

struct ExperimentConfig {
  std::string name = "sinusoid";
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  TaskConfig task;
  LearnerSettings learner;
  NcSettings nc;
  MetaConfig meta;

  void validate() const;
};

/// Defaults for the sinusoid regression experiment.
ExperimentConfig sinusoid_defaults();

struct SingleTaskConfig {
  std::string name = "single-task";
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string dataset;       // training dataset file (sub-tasks come from here)
  std::string test_dataset;  // held-out evaluation dataset file
  std::size_t subtask_train = 128;
  std::size_t subtask_val = 128;
  std::size_t minibatch = 32;     // learner minibatch (also the estimator's m)
  std::size_t minibatch_te = 32;  // validation minibatch (the estimator's m')
  LearnerSettings learner{.width = 64, .depth = 2, .learning_rate = 0.05, .steps = 40};
  NcSettings nc{.model_dim = 32, .enc_layers = 1, .dec_layers = 2, .heads = 4,
                .self_attention_layers = 1};
  MetaConfig meta{.episodes = 200, .batch_size = 32, .lambda_warmup = 50,
                  .holdout_episodes = 0};
  std::size_t final_steps = 600;
  std::size_t eval_interval = 50;
  double clip_floor = -0.1;

  void validate() const;
};

struct BoundRunConfig {
  std::string residuals_file;  // newline-separated floats, or:
  std::string bank_file;       // snapshots + checkpoint -> residuals
  std::string checkpoint;
  std::string dataset;  // needed when bank snapshots store indices
  double epsilon = 0.0;  // 0 with target_prob > 0: solve for epsilon
  double delta = 0.05;
  double target_prob = 0.0;
};

// config files are versioned JSON; see README for the schema
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path);
SingleTaskConfig load_single_task_config(const std::filesystem::path& path);
BoundRunConfig load_bound_config(const std::filesystem::path& path);

}  // namespace ncx
