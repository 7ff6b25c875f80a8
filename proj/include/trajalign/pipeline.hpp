#pragma once

// End-to-end iterative loop: sample -> score -> rank -> pair -> train,
// with dataset persistence, evaluation suites and metrics.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajalign/gcpg.hpp"
#include "trajalign/policy.hpp"
#include "trajalign/simenv.hpp"
#include "trajalign/tpo.hpp"

namespace trajalign::pipeline {

using policy::PolicyParams;
using simenv::TaskSuite;
using simenv::Trajectory;

struct IterationConfig {
  int iterations = 3;        // K
  int samples_per_task = 5;  // N_t
  int pair_width = 1;        // m
  gcpg::Lambdas lambdas;     // effective weights (cost spec, then overrides)
  double beta = 0.1;
  double tpo_lr = 5e-4;
  double tpo_weight_decay = 0.01;
  int tpo_epochs = 40;        // optimizer passes over the pair set per iteration
  int tpo_batch_size = 0;     // 0 = full batch
  double tpo_loss_floor = 0.02;  // stop the iteration early once the batch
                                 // loss saturates below this (0 disables)
  int t_max = simenv::kDefaultTMax;
  double jitter = simenv::kStartJitter;
  std::string algo = "tpo";      // tpo | stepdpo
  std::string pairing = "gcpg";  // gcpg | random (success/failure ablation)
  std::uint64_t master_seed = 0;
  int workers = 1;
};

// Full run configuration; the CLI parses/overrides/validates this.
struct RunConfig {
  // iterative loop
  int iterations = 3;
  int samples_per_task = 5;
  int pair_width = 1;
  double beta = 0.1;
  std::optional<double> lambda_self;     // override the cost spec when set
  std::optional<double> lambda_ext;
  std::optional<double> lambda_success;
  double tpo_lr = 5e-4;
  double tpo_weight_decay = 0.01;
  int tpo_epochs = 40;
  int tpo_batch_size = 0;
  double tpo_loss_floor = 0.02;
  std::string algo = "tpo";
  std::string pairing = "gcpg";
  // environment / policy
  int t_max = simenv::kDefaultTMax;
  double jitter = simenv::kStartJitter;
  int hidden = 64;
  // behavior cloning phase (skipped when sft_model points at a checkpoint)
  std::string sft_model;
  int demos_per_task = 20;
  int sft_epochs = 12;
  int sft_batch_size = 64;
  double sft_lr = 1e-3;
  double sft_weight_decay = 0.01;
  // evaluation
  int eval_episodes = 50;
  std::vector<std::string> eval_suites = {"in_domain", "subject", "physical", "semantic"};
  // references
  std::string task_suite = "in_domain";       // builtin suite name or file path
  std::string cost_spec = "task-completion";  // preset name or file path
  std::string out_dir;
  std::string model;       // policy checkpoint for eval / score
  std::string demos_path;  // demonstration JSONL for sft (empty = generate)
  std::string dataset;     // trajectory JSONL for score
  std::uint64_t seed = 0;
  bool seed_set = false;  // wall-clock defaults are not allowed
  int workers = 1;
};

// Collects every violated invariant into one ConfigError.
void validate_run_config(const RunConfig& cfg);

TaskSuite resolve_task_suite(const std::string& name_or_path);
gcpg::CostSpec resolve_cost_spec(const std::string& name_or_path);

struct MetricsRow {
  int iteration = 0;
  std::string suite;
  double success_rate = 0.0;
  double grasp_rate = 0.0;
  double collision_rate = 0.0;  // fraction of episodes with >= 1 collision step
  double mean_step_length = 0.0;
  int episodes = 0;
};

MetricsRow evaluate(const PolicyParams& policy, const TaskSuite& suite, int episodes_per_task,
                    std::uint64_t base_seed, int iteration, int t_max = simenv::kDefaultTMax,
                    double jitter = simenv::kStartJitter, int workers = 1);

// Same aggregation over an arbitrary rollout source (scripted expert,
// canned trajectories in tests).
using RolloutFn = std::function<Trajectory(const simenv::Task& task, std::uint64_t seed)>;
MetricsRow evaluate_rollouts(const RolloutFn& rollout, const TaskSuite& suite,
                             int episodes_per_task, std::uint64_t base_seed, int iteration,
                             int workers = 1);

struct PairRecord {
  std::string task_id;
  std::uint64_t chosen_seed = 0;
  std::uint64_t rejected_seed = 0;
  double gap = 0.0;
  int chosen_index = 0;  // indices into the iteration dataset
  int rejected_index = 0;
};

struct IterationResult {
  PolicyParams policy;
  std::vector<Trajectory> dataset;
  std::vector<gcpg::ScoredTrajectory> scored;
  std::vector<PairRecord> pairs;
  std::vector<tpo::MarginRow> margins;  // post-update report vs. the frozen reference
};

// One loop iteration: sample N_t trajectories per task with derived seeds,
// score with the sampling-policy snapshot, rank and pair per task, then
// train against the snapshot reference. Tasks that cannot form pairs are
// logged and skipped.
IterationResult run_iteration(const PolicyParams& policy, const TaskSuite& train_suite,
                              const gcpg::CostSpec& spec, const IterationConfig& cfg,
                              int iteration_index);

struct RunResult {
  PolicyParams final_policy;
  std::vector<MetricsRow> history;  // iteration 0 = pre-alignment baseline
};

// Full pipeline: SFT (or checkpoint), K iterations with per-iteration
// evaluation, everything persisted under cfg.out_dir.
RunResult run_pipeline(const RunConfig& cfg);

// Expert demonstrations for behavior cloning.
std::vector<Trajectory> generate_demos(const TaskSuite& suite, int per_task,
                                       std::uint64_t master_seed, int t_max = simenv::kDefaultTMax,
                                       double jitter = simenv::kStartJitter);

// ---------------------------------------------------------------------------
// Persistence. JSONL round-trips are lossless including float bit patterns.

void persist_dataset(std::span<const Trajectory> trajectories, const std::string& path);
std::vector<Trajectory> load_dataset(const std::string& path);

void write_scored(std::span<const gcpg::ScoredTrajectory> scored, const std::string& path);
void write_pairs(std::span<const PairRecord> pairs, const std::string& path);

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);
std::vector<MetricsRow> load_metrics_csv(const std::string& path);

std::uint64_t model_hash(const PolicyParams& params);

}  // namespace trajalign::pipeline
