#include "ncx/config.hpp"

#include <fstream>

#include <json.hpp>

namespace ncx {

using nlohmann::json;

LearnerConfig to_learner_config(const LearnerSettings& s, const TaskConfig& task) {
  LearnerConfig cfg;
  cfg.kind = s.kind;
  cfg.learning_rate = s.learning_rate;
  cfg.steps = s.steps;
  cfg.loss = task.kind == TaskKind::kRegression ? LossKind::kMse : LossKind::kCrossEntropy;
  cfg.mlp.input_dim = task.input_dim();
  cfg.mlp.output_dim = task.kind == TaskKind::kRegression ? 1 : task.classes;
  if (s.depth == 0) throw ContractError("LearnerSettings: depth must be >= 1");
  cfg.mlp.hidden_dims.assign(s.depth - 1, s.width);
  cfg.mlp.activation = s.activation;
  return cfg;
}

void ExperimentConfig::validate() const {
  to_learner_config(learner, task).validate();
  if (meta.batch_size == 0 || meta.bank_capacity == 0 || meta.snapshot_every == 0)
    throw ContractError("ExperimentConfig: zero meta-config field");
  if (task.kind == TaskKind::kClassification &&
      (task.m % task.classes != 0 || task.m_te % task.classes != 0))
    throw ContractError("ExperimentConfig: split sizes must be divisible by class count");
}

ExperimentConfig sinusoid_defaults() { return ExperimentConfig{}; }

void SingleTaskConfig::validate() const {
  if (dataset.empty() || test_dataset.empty())
    throw ContractError("SingleTaskConfig: dataset and test_dataset are required");
  if (subtask_train == 0 || subtask_val == 0 || minibatch == 0 || minibatch_te == 0)
    throw ContractError("SingleTaskConfig: zero split/minibatch size");
  if (minibatch > subtask_train || minibatch_te > subtask_val)
    throw ContractError("SingleTaskConfig: minibatch larger than sub-task split");
  if (eval_interval == 0) throw ContractError("SingleTaskConfig: eval_interval must be >= 1");
}

namespace {

constexpr int kConfigVersion = 1;

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw FormatError("config '" + path.string() + "': " + e.what());
  }
  const int version = j.value("version", kConfigVersion);
  if (version != kConfigVersion)
    throw FormatError("config '" + path.string() + "': unsupported version " +
                      std::to_string(version));
  return j;
}

void parse_task(const json& j, TaskConfig& t) {
  if (j.contains("kind")) t.kind = task_kind_from_name(j.at("kind").get<std::string>());
  t.m = j.value("m", t.m);
  t.m_te = j.value("m_te", t.m_te);
  t.classes = j.value("classes", t.classes);
  t.dim = j.value("dim", t.dim);
  t.sigma = j.value("sigma", t.sigma);
}

void parse_learner(const json& j, LearnerSettings& s) {
  if (j.contains("kind")) s.kind = learner_kind_from_name(j.at("kind").get<std::string>());
  s.width = j.value("width", s.width);
  s.depth = j.value("depth", s.depth);
  if (j.contains("activation"))
    s.activation = activation_from_name(j.at("activation").get<std::string>());
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.steps = j.value("steps", s.steps);
}

void parse_nc(const json& j, NcSettings& s) {
  s.model_dim = j.value("model_dim", s.model_dim);
  s.enc_layers = j.value("enc_layers", s.enc_layers);
  s.dec_layers = j.value("dec_layers", s.dec_layers);
  s.heads = j.value("heads", s.heads);
  s.self_attention_layers = j.value("self_attention_layers", s.self_attention_layers);
}

void parse_meta(const json& j, MetaConfig& m) {
  m.episodes = j.value("episodes", m.episodes);
  m.batch_size = j.value("batch_size", m.batch_size);
  m.adam_lr = j.value("adam_lr", m.adam_lr);
  m.steps_per_episode = j.value("steps_per_episode", m.steps_per_episode);
  m.bank_capacity = j.value("bank_capacity", m.bank_capacity);
  m.snapshot_every = j.value("snapshot_every", m.snapshot_every);
  m.lambda_warmup = j.value("lambda_warmup", m.lambda_warmup);
  m.checkpoint_every = j.value("checkpoint_every", m.checkpoint_every);
  m.holdout_episodes = j.value("holdout_episodes", m.holdout_episodes);
  m.workers = j.value("workers", m.workers);
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  ExperimentConfig cfg = sinusoid_defaults();
  cfg.name = j.value("name", cfg.name);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  if (j.contains("task")) parse_task(j.at("task"), cfg.task);
  if (j.contains("learner")) parse_learner(j.at("learner"), cfg.learner);
  if (j.contains("nc")) parse_nc(j.at("nc"), cfg.nc);
  if (j.contains("meta")) parse_meta(j.at("meta"), cfg.meta);
  cfg.validate();
  return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["version"] = kConfigVersion;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["task"] = {{"kind", std::string(task_kind_name(cfg.task.kind))},
               {"m", cfg.task.m},
               {"m_te", cfg.task.m_te},
               {"classes", cfg.task.classes},
               {"dim", cfg.task.dim},
               {"sigma", cfg.task.sigma}};
  j["learner"] = {{"kind", std::string(learner_kind_name(cfg.learner.kind))},
                  {"width", cfg.learner.width},
                  {"depth", cfg.learner.depth},
                  {"activation", std::string(activation_name(cfg.learner.activation))},
                  {"learning_rate", cfg.learner.learning_rate},
                  {"steps", cfg.learner.steps}};
  j["nc"] = {{"model_dim", cfg.nc.model_dim},
             {"enc_layers", cfg.nc.enc_layers},
             {"dec_layers", cfg.nc.dec_layers},
             {"heads", cfg.nc.heads},
             {"self_attention_layers", cfg.nc.self_attention_layers}};
  j["meta"] = {{"episodes", cfg.meta.episodes},
               {"batch_size", cfg.meta.batch_size},
               {"adam_lr", cfg.meta.adam_lr},
               {"steps_per_episode", cfg.meta.steps_per_episode},
               {"bank_capacity", cfg.meta.bank_capacity},
               {"snapshot_every", cfg.meta.snapshot_every},
               {"lambda_warmup", cfg.meta.lambda_warmup},
               {"checkpoint_every", cfg.meta.checkpoint_every},
               {"holdout_episodes", cfg.meta.holdout_episodes},
               {"workers", cfg.meta.workers}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write config '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

SingleTaskConfig load_single_task_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  SingleTaskConfig cfg;
  cfg.name = j.value("name", cfg.name);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.dataset = j.value("dataset", cfg.dataset);
  cfg.test_dataset = j.value("test_dataset", cfg.test_dataset);
  cfg.subtask_train = j.value("subtask_train", cfg.subtask_train);
  cfg.subtask_val = j.value("subtask_val", cfg.subtask_val);
  cfg.minibatch = j.value("minibatch", cfg.minibatch);
  cfg.minibatch_te = j.value("minibatch_te", cfg.minibatch_te);
  if (j.contains("learner")) parse_learner(j.at("learner"), cfg.learner);
  if (j.contains("nc")) parse_nc(j.at("nc"), cfg.nc);
  if (j.contains("meta")) parse_meta(j.at("meta"), cfg.meta);
  cfg.final_steps = j.value("final_steps", cfg.final_steps);
  cfg.eval_interval = j.value("eval_interval", cfg.eval_interval);
  cfg.clip_floor = j.value("clip_floor", cfg.clip_floor);
  cfg.validate();
  return cfg;
}

BoundRunConfig load_bound_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  BoundRunConfig cfg;
  cfg.residuals_file = j.value("residuals_file", cfg.residuals_file);
  cfg.bank_file = j.value("bank_file", cfg.bank_file);
  cfg.checkpoint = j.value("checkpoint", cfg.checkpoint);
  cfg.dataset = j.value("dataset", cfg.dataset);
  cfg.epsilon = j.value("epsilon", cfg.epsilon);
  cfg.delta = j.value("delta", cfg.delta);
  cfg.target_prob = j.value("target_prob", cfg.target_prob);
  return cfg;
}

}  // namespace ncx
