#include "trajalign/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace trajalign::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Index-sharded parallel map; results land in caller-owned slots so the
// outcome is independent of the worker count.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int count = std::min(workers, n);
  std::vector<std::thread> threads;
  threads.reserve(count);
  for (int w = 0; w < count; ++w) {
    threads.emplace_back([&, w]() {
      for (int i = w; i < n; i += count) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace

void validate_run_config(const RunConfig& cfg) {
  std::vector<std::string> problems;
  if (!cfg.seed_set) problems.push_back("seed must be specified (no wall-clock defaults)");
  if (cfg.iterations < 1) problems.push_back("iterations (K) must be >= 1");
  if (cfg.pair_width < 1) problems.push_back("pair_width (m) must be >= 1");
  if (cfg.samples_per_task < 2 * cfg.pair_width) {
    problems.push_back(format_str("samples_per_task (N_t=%d) must be >= 2*pair_width (m=%d)",
                                  cfg.samples_per_task, cfg.pair_width));
  }
  if (cfg.beta <= 0.0) problems.push_back("beta must be > 0");
  auto check_lambda = [&](const std::optional<double>& l, const char* name) {
    if (l.has_value() && *l < 0.0) problems.push_back(format_str("%s must be >= 0", name));
  };
  check_lambda(cfg.lambda_self, "lambda_self");
  check_lambda(cfg.lambda_ext, "lambda_ext");
  check_lambda(cfg.lambda_success, "lambda_success");
  if (cfg.tpo_lr <= 0.0) problems.push_back("tpo_lr must be > 0");
  if (cfg.tpo_epochs < 0) problems.push_back("tpo_epochs must be >= 0");
  if (cfg.sft_lr <= 0.0) problems.push_back("sft_lr must be > 0");
  if (cfg.sft_epochs < 0) problems.push_back("sft_epochs must be >= 0");
  if (cfg.demos_per_task < 0) problems.push_back("demos_per_task must be >= 0");
  if (cfg.t_max < 1) problems.push_back("t_max must be >= 1");
  if (cfg.jitter < 0.0) problems.push_back("jitter must be >= 0");
  if (cfg.hidden < 1) problems.push_back("hidden must be >= 1");
  if (cfg.eval_episodes < 1) problems.push_back("eval_episodes must be >= 1");
  if (cfg.algo != "tpo" && cfg.algo != "stepdpo") {
    problems.push_back(format_str("algo must be 'tpo' or 'stepdpo', got '%s'", cfg.algo.c_str()));
  }
  if (cfg.pairing != "gcpg" && cfg.pairing != "random") {
    problems.push_back(format_str("pairing must be 'gcpg' or 'random', got '%s'", cfg.pairing.c_str()));
  }
  auto check_ref = [&](const std::string& ref, auto&& builtin_ok, const char* what) {
    if (builtin_ok(ref)) return;
    if (!fs::exists(ref)) {
      problems.push_back(format_str("%s '%s' is neither a builtin name nor an existing file", what,
                                    ref.c_str()));
    }
  };
  auto suite_ok = [](const std::string& n) { return simenv::builtin_task_suite(n).has_value(); };
  auto spec_ok = [](const std::string& n) {
    auto names = gcpg::preset_names();
    return std::find(names.begin(), names.end(), n) != names.end();
  };
  check_ref(cfg.task_suite, suite_ok, "task_suite");
  check_ref(cfg.cost_spec, spec_ok, "cost_spec");
  for (const std::string& s : cfg.eval_suites) check_ref(s, suite_ok, "eval suite");
  if (!cfg.sft_model.empty() && !fs::exists(cfg.sft_model)) {
    problems.push_back(format_str("sft_model '%s' does not exist", cfg.sft_model.c_str()));
  }
  if (!problems.empty()) {
    std::string msg = "invalid run config:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

TaskSuite resolve_task_suite(const std::string& name_or_path) {
  if (auto s = simenv::builtin_task_suite(name_or_path)) return *s;
  return simenv::load_suite(name_or_path);
}

gcpg::CostSpec resolve_cost_spec(const std::string& name_or_path) {
  auto names = gcpg::preset_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) {
    return gcpg::preset_cost_spec(name_or_path);
  }
  return gcpg::load_cost_spec(name_or_path);
}

MetricsRow evaluate(const PolicyParams& policy, const TaskSuite& suite, int episodes_per_task,
                    std::uint64_t base_seed, int iteration, int t_max, double jitter, int workers) {
  RolloutFn fn = [&](const simenv::Task& task, std::uint64_t seed) {
    return policy::rollout(policy, task, seed, t_max, false, jitter);
  };
  return evaluate_rollouts(fn, suite, episodes_per_task, base_seed, iteration, workers);
}

MetricsRow evaluate_rollouts(const RolloutFn& rollout, const TaskSuite& suite,
                             int episodes_per_task, std::uint64_t base_seed, int iteration,
                             int workers) {
  if (suite.tasks.empty()) throw UsageError("evaluate: suite has no tasks");
  if (episodes_per_task < 1) throw UsageError("evaluate: episodes_per_task must be >= 1");
  int n_tasks = static_cast<int>(suite.tasks.size());
  int total = n_tasks * episodes_per_task;
  struct EpisodeStats {
    bool success = false, grasp = false, collision = false;
    int length = 0;
  };
  std::vector<EpisodeStats> stats(total);
  parallel_for(total, workers, [&](int idx) {
    int ti = idx / episodes_per_task;
    int ep = idx % episodes_per_task;
    std::uint64_t seed = eval_seed(derive_seed(base_seed, "eval-ep",
                                               static_cast<std::uint64_t>(ti),
                                               static_cast<std::uint64_t>(ep)));
    Trajectory traj = rollout(suite.tasks[ti], seed);
    EpisodeStats& s = stats[idx];
    s.success = traj.status == simenv::Status::kSuccess;
    s.length = traj.length();
    for (const simenv::TrajStep& st : traj.steps) {
      s.grasp = s.grasp || st.events.grasp;
      s.collision = s.collision || st.events.collision;
    }
  });
  MetricsRow row;
  row.iteration = iteration;
  row.suite = suite.name;
  row.episodes = total;
  double sum_len = 0.0;
  int n_success = 0, n_grasp = 0, n_collision = 0;
  for (const EpisodeStats& s : stats) {
    n_success += s.success ? 1 : 0;
    n_grasp += s.grasp ? 1 : 0;
    n_collision += s.collision ? 1 : 0;
    sum_len += s.length;
  }
  row.success_rate = static_cast<double>(n_success) / total;
  row.grasp_rate = static_cast<double>(n_grasp) / total;
  row.collision_rate = static_cast<double>(n_collision) / total;
  row.mean_step_length = sum_len / total;
  return row;
}

std::vector<Trajectory> generate_demos(const TaskSuite& suite, int per_task,
                                       std::uint64_t master_seed, int t_max, double jitter) {
  std::vector<Trajectory> demos;
  for (std::size_t ti = 0; ti < suite.tasks.size(); ++ti) {
    for (int d = 0; d < per_task; ++d) {
      std::uint64_t seed = train_seed(derive_seed(master_seed, "demo", ti, static_cast<std::uint64_t>(d)));
      demos.push_back(simenv::expert_rollout(suite.tasks[ti], seed, t_max, jitter));
    }
  }
  return demos;
}

namespace {

std::vector<PairRecord> make_pairs(const std::vector<Trajectory>& dataset,
                                   const std::vector<gcpg::ScoredTrajectory>& scored,
                                   const TaskSuite& suite, const IterationConfig& cfg,
                                   int iteration_index) {
  std::vector<PairRecord> pairs;
  int per_task = cfg.samples_per_task;
  for (std::size_t ti = 0; ti < suite.tasks.size(); ++ti) {
    int begin = static_cast<int>(ti) * per_task;
    std::span<const gcpg::ScoredTrajectory> slice(scored.data() + begin, per_task);
    if (cfg.pairing == "gcpg") {
      if (per_task < 2 * cfg.pair_width) {
        log_warn(format_str("task '%s': %d trajectories cannot form %d pairs, skipping",
                            suite.tasks[ti].id.c_str(), per_task, cfg.pair_width * cfg.pair_width));
        continue;
      }
      for (const gcpg::PreferencePair& p : gcpg::rank_and_pair(slice, cfg.pair_width)) {
        PairRecord r;
        r.task_id = suite.tasks[ti].id;
        r.chosen_seed = p.chosen_seed;
        r.rejected_seed = p.rejected_seed;
        r.gap = p.gap;
        r.chosen_index = begin + p.chosen_index;
        r.rejected_index = begin + p.rejected_index;
        pairs.push_back(std::move(r));
      }
    } else {  // random success/failure ablation
      std::vector<int> winners, losers;
      for (int j = 0; j < per_task; ++j) {
        (slice[j].i_success == 1 ? winners : losers).push_back(begin + j);
      }
      if (winners.empty() || losers.empty()) {
        log_warn(format_str("task '%s': no mixed outcomes for random pairing, skipping",
                            suite.tasks[ti].id.c_str()));
        continue;
      }
      Rng rng(derive_seed(cfg.master_seed, "random-pair", static_cast<std::uint64_t>(iteration_index), ti));
      for (int p = 0; p < cfg.pair_width; ++p) {
        int wi = winners[rng.uniform_int(static_cast<int>(winners.size()))];
        int li = losers[rng.uniform_int(static_cast<int>(losers.size()))];
        PairRecord r;
        r.task_id = suite.tasks[ti].id;
        r.chosen_seed = dataset[wi].seed;
        r.rejected_seed = dataset[li].seed;
        r.gap = scored[wi].r_gcpg - scored[li].r_gcpg;
        r.chosen_index = wi;
        r.rejected_index = li;
        pairs.push_back(std::move(r));
      }
    }
  }
  return pairs;
}

}  // namespace

IterationResult run_iteration(const PolicyParams& policy, const TaskSuite& train_suite,
                              const gcpg::CostSpec& spec, const IterationConfig& cfg,
                              int iteration_index) {
  IterationResult result;
  const PolicyParams sampler = policy;  // frozen snapshot: reference and self-reward scorer

  // Sample N_t trajectories per task.
  int n_tasks = static_cast<int>(train_suite.tasks.size());
  int total = n_tasks * cfg.samples_per_task;
  result.dataset.resize(total);
  parallel_for(total, cfg.workers, [&](int idx) {
    int ti = idx / cfg.samples_per_task;
    int j = idx % cfg.samples_per_task;
    std::uint64_t seed = train_seed(derive_seed(cfg.master_seed, "sample",
                                                static_cast<std::uint64_t>(iteration_index),
                                                static_cast<std::uint64_t>(ti),
                                                static_cast<std::uint64_t>(j)));
    result.dataset[idx] = policy::rollout(sampler, train_suite.tasks[ti], seed, cfg.t_max, false,
                                          cfg.jitter);
  });

  // Score against the sampling-policy snapshot.
  gcpg::CostSpec effective = spec;
  effective.lambdas = cfg.lambdas;
  result.scored.resize(total);
  parallel_for(total, cfg.workers, [&](int idx) {
    int ti = idx / cfg.samples_per_task;
    result.scored[idx] =
        gcpg::score_trajectory(result.dataset[idx], train_suite.tasks[ti], effective, sampler);
  });

  result.pairs = make_pairs(result.dataset, result.scored, train_suite, cfg, iteration_index);

  if (result.pairs.empty() || cfg.tpo_epochs == 0) {
    if (result.pairs.empty()) log_warn("iteration produced no preference pairs; policy unchanged");
    result.policy = policy;
    return result;
  }

  std::vector<tpo::TpoPair> tpairs;
  tpairs.reserve(result.pairs.size());
  for (const PairRecord& r : result.pairs) {
    tpairs.push_back({&result.dataset[r.chosen_index], &result.dataset[r.rejected_index]});
  }

  PolicyParams trained = policy;
  numgrad::AdamWConfig hp;
  hp.lr = cfg.tpo_lr;
  hp.weight_decay = cfg.tpo_weight_decay;
  numgrad::OptState opt = numgrad::init_opt(
      {&trained.net.w1, &trained.net.b1, &trained.net.w2, &trained.net.b2}, hp);

  int batch_size = cfg.tpo_batch_size > 0 ? cfg.tpo_batch_size : static_cast<int>(tpairs.size());
  std::vector<std::size_t> order(tpairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.tpo_epochs; ++epoch) {
    if (batch_size < static_cast<int>(tpairs.size())) {
      Rng rng(derive_seed(cfg.master_seed, "tpo-shuffle",
                          static_cast<std::uint64_t>(iteration_index),
                          static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = rng.next_u64() % i;
        std::swap(order[i - 1], order[j]);
      }
    }
    for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
      std::vector<tpo::TpoPair> batch;
      for (std::size_t k = pos; k < std::min(order.size(), pos + batch_size); ++k) {
        batch.push_back(tpairs[order[k]]);
      }
      tpo::LossAndGrad lg = cfg.algo == "stepdpo"
                                ? tpo::stepdpo_grad(trained, sampler, batch, cfg.beta)
                                : tpo::tpo_grad(trained, sampler, batch, cfg.beta);
      numgrad::adamw_step(trained.tensors(), lg.grads, opt);
    }
  }
  trained.provenance = format_str("%s-iter-%d", cfg.algo.c_str(), iteration_index);
  result.margins = tpo::margin_report(trained, sampler, tpairs, cfg.beta);
  result.policy = std::move(trained);
  return result;
}

// ---------------------------------------------------------------------------

namespace {

json trajectory_to_json(const Trajectory& t) {
  json steps = json::array();
  for (const simenv::TrajStep& s : t.steps) {
    steps.push_back({{"obs", s.obs},
                     {"action", s.action},
                     {"events",
                      {{"grasp", s.events.grasp},
                       {"release", s.events.release},
                       {"collision", s.events.collision},
                       {"success", s.events.success}}}});
  }
  return {{"task_id", t.task_id},
          {"seed", t.seed},
          {"status", t.status == simenv::Status::kSuccess ? "success" : "timeout"},
          {"steps", steps}};
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  t.task_id = j.at("task_id").get<std::string>();
  t.seed = j.at("seed").get<std::uint64_t>();
  std::string status = j.at("status").get<std::string>();
  if (status == "success") {
    t.status = simenv::Status::kSuccess;
  } else if (status == "timeout") {
    t.status = simenv::Status::kTimeout;
  } else {
    throw ParseError(format_str("unknown trajectory status '%s'", status.c_str()));
  }
  for (const json& s : j.at("steps")) {
    simenv::TrajStep step;
    step.obs = s.at("obs").get<std::vector<double>>();
    step.action = s.at("action").get<int>();
    const json& e = s.at("events");
    step.events.grasp = e.at("grasp").get<bool>();
    step.events.release = e.at("release").get<bool>();
    step.events.collision = e.at("collision").get<bool>();
    step.events.success = e.at("success").get<bool>();
    t.steps.push_back(std::move(step));
  }
  return t;
}

}  // namespace

void persist_dataset(std::span<const Trajectory> trajectories, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write dataset: %s", path.c_str()));
  for (const Trajectory& t : trajectories) f << trajectory_to_json(t).dump() << "\n";
}

std::vector<Trajectory> load_dataset(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot read dataset: %s", path.c_str()));
  std::vector<Trajectory> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(trajectory_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(format_str("%s line %d: %s", path.c_str(), lineno, e.what()));
    }
  }
  return out;
}

void write_scored(std::span<const gcpg::ScoredTrajectory> scored, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write scored file: %s", path.c_str()));
  for (const gcpg::ScoredTrajectory& s : scored) {
    json j{{"task_id", s.task_id},     {"seed", s.seed},       {"stage_costs", s.stage_costs},
           {"r_ext", s.r_ext},         {"r_self", s.r_self},   {"i_success", s.i_success},
           {"r_gcpg", s.r_gcpg}};
    f << j.dump() << "\n";
  }
}

void write_pairs(std::span<const PairRecord> pairs, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write pairs file: %s", path.c_str()));
  for (const PairRecord& p : pairs) {
    json j{{"task_id", p.task_id},
           {"chosen_seed", p.chosen_seed},
           {"rejected_seed", p.rejected_seed},
           {"gap", p.gap}};
    f << j.dump() << "\n";
  }
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write metrics: %s", path.c_str()));
  f << "iteration,suite,success_rate,grasp_rate,collision_rate,mean_step_length,episodes\n";
  char buf[320];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.17g,%.17g,%.17g,%.17g,%d\n", r.iteration,
                  r.suite.c_str(), r.success_rate, r.grasp_rate, r.collision_rate,
                  r.mean_step_length, r.episodes);
    f << buf;
  }
}

std::vector<MetricsRow> load_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot read metrics: %s", path.c_str()));
  std::vector<MetricsRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;  // header
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 7) {
      throw ParseError(format_str("%s line %d: expected 7 columns, got %zu", path.c_str(), lineno,
                                  cells.size()));
    }
    MetricsRow r;
    try {
      r.iteration = std::stoi(cells[0]);
      r.suite = cells[1];
      r.success_rate = std::stod(cells[2]);
      r.grasp_rate = std::stod(cells[3]);
      r.collision_rate = std::stod(cells[4]);
      r.mean_step_length = std::stod(cells[5]);
      r.episodes = std::stoi(cells[6]);
    } catch (const std::exception& e) {
      throw ParseError(format_str("%s line %d: %s", path.c_str(), lineno, e.what()));
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::uint64_t model_hash(const PolicyParams& params) {
  return fnv1a64(numgrad::model_to_json(params.net, params.provenance));
}

// ---------------------------------------------------------------------------

namespace {

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["iterations"] = cfg.iterations;
  j["samples_per_task"] = cfg.samples_per_task;
  j["pair_width"] = cfg.pair_width;
  j["beta"] = cfg.beta;
  if (cfg.lambda_self) j["lambda_self"] = *cfg.lambda_self;
  if (cfg.lambda_ext) j["lambda_ext"] = *cfg.lambda_ext;
  if (cfg.lambda_success) j["lambda_success"] = *cfg.lambda_success;
  j["tpo_lr"] = cfg.tpo_lr;
  j["tpo_weight_decay"] = cfg.tpo_weight_decay;
  j["tpo_epochs"] = cfg.tpo_epochs;
  j["tpo_batch_size"] = cfg.tpo_batch_size;
  j["algo"] = cfg.algo;
  j["pairing"] = cfg.pairing;
  j["t_max"] = cfg.t_max;
  j["jitter"] = cfg.jitter;
  j["hidden"] = cfg.hidden;
  j["sft_model"] = cfg.sft_model;
  j["demos_per_task"] = cfg.demos_per_task;
  j["sft_epochs"] = cfg.sft_epochs;
  j["sft_batch_size"] = cfg.sft_batch_size;
  j["sft_lr"] = cfg.sft_lr;
  j["sft_weight_decay"] = cfg.sft_weight_decay;
  j["eval_episodes"] = cfg.eval_episodes;
  j["eval_suites"] = cfg.eval_suites;
  j["task_suite"] = cfg.task_suite;
  j["cost_spec"] = cfg.cost_spec;
  j["out_dir"] = cfg.out_dir;
  j["model"] = cfg.model;
  j["demos_path"] = cfg.demos_path;
  j["dataset"] = cfg.dataset;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  return j;
}

std::string hash_hex(std::uint64_t h) { return format_str("%016llx", static_cast<unsigned long long>(h)); }

}  // namespace

RunResult run_pipeline(const RunConfig& cfg) {
  validate_run_config(cfg);
  if (cfg.out_dir.empty()) throw ConfigError("run_pipeline: out_dir is required");
  fs::create_directories(cfg.out_dir);

  TaskSuite train_suite = resolve_task_suite(cfg.task_suite);
  std::vector<TaskSuite> eval_suites;
  for (const std::string& s : cfg.eval_suites) eval_suites.push_back(resolve_task_suite(s));
  gcpg::CostSpec spec = resolve_cost_spec(cfg.cost_spec);
  gcpg::Lambdas lambdas = spec.lambdas;
  if (cfg.lambda_self) lambdas.self = *cfg.lambda_self;
  if (cfg.lambda_ext) lambdas.ext = *cfg.lambda_ext;
  if (cfg.lambda_success) lambdas.success = *cfg.lambda_success;

  // Behavior-cloning starting point.
  PolicyParams policy;
  if (!cfg.sft_model.empty()) {
    policy = policy::load_policy(cfg.sft_model);
  } else {
    std::vector<Trajectory> demos =
        generate_demos(train_suite, cfg.demos_per_task, cfg.seed, cfg.t_max, cfg.jitter);
    policy =
        policy::init_policy(simenv::kObsDim, cfg.hidden, simenv::kNumActions,
                            derive_seed(cfg.seed, "policy-init"));
    policy::SftConfig sft;
    sft.lr = cfg.sft_lr;
    sft.weight_decay = cfg.sft_weight_decay;
    sft.epochs = cfg.sft_epochs;
    sft.batch_size = cfg.sft_batch_size;
    sft.shuffle_seed = derive_seed(cfg.seed, "sft-shuffle-root");
    policy::train_sft(policy, demos, sft);
  }
  policy::save_policy((fs::path(cfg.out_dir) / "sft_model.json").string(), policy);

  IterationConfig iter;
  iter.iterations = cfg.iterations;
  iter.samples_per_task = cfg.samples_per_task;
  iter.pair_width = cfg.pair_width;
  iter.lambdas = lambdas;
  iter.beta = cfg.beta;
  iter.tpo_lr = cfg.tpo_lr;
  iter.tpo_weight_decay = cfg.tpo_weight_decay;
  iter.tpo_epochs = cfg.tpo_epochs;
  iter.tpo_batch_size = cfg.tpo_batch_size;
  iter.t_max = cfg.t_max;
  iter.jitter = cfg.jitter;
  iter.algo = cfg.algo;
  iter.pairing = cfg.pairing;
  iter.master_seed = cfg.seed;
  iter.workers = cfg.workers;

  RunResult result;
  json checkpoints;
  checkpoints["sft"] = hash_hex(model_hash(policy));

  auto eval_all = [&](const PolicyParams& p, int iteration) {
    for (const TaskSuite& suite : eval_suites) {
      std::uint64_t base = derive_seed(cfg.seed, "eval-" + suite.name,
                                       static_cast<std::uint64_t>(iteration));
      result.history.push_back(evaluate(p, suite, cfg.eval_episodes, base, iteration, cfg.t_max,
                                        cfg.jitter, cfg.workers));
    }
  };
  eval_all(policy, 0);

  for (int k = 1; k <= cfg.iterations; ++k) {
    std::uint64_t ref_hash = model_hash(policy);
    IterationResult ir = run_iteration(policy, train_suite, spec, iter, k);
    fs::path iter_dir = fs::path(cfg.out_dir) / format_str("iter_%d", k);
    fs::create_directories(iter_dir);
    persist_dataset(ir.dataset, (iter_dir / "trajectories.jsonl").string());
    write_scored(ir.scored, (iter_dir / "scored.jsonl").string());
    write_pairs(ir.pairs, (iter_dir / "pairs.jsonl").string());
    tpo::write_margin_csv((iter_dir / "margins.csv").string(), ir.margins);
    policy = std::move(ir.policy);
    policy::save_policy((iter_dir / "model.json").string(), policy);
    checkpoints[format_str("iter_%d", k)] = {{"model", hash_hex(model_hash(policy))},
                                             {"ref", hash_hex(ref_hash)}};
    eval_all(policy, k);
  }

  write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), result.history);

  json manifest;
  manifest["config"] = run_config_to_json(cfg);
  manifest["lambdas_effective"] = {{"l1", lambdas.self}, {"l2", lambdas.ext}, {"l3", lambdas.success}};
  manifest["cost_spec_objective"] = spec.objective;
  manifest["train_suite"] = train_suite.name;
  manifest["checkpoints"] = checkpoints;
  std::ofstream mf(fs::path(cfg.out_dir) / "manifest.json");
  if (!mf) throw MissingArtifact("cannot write manifest.json");
  mf << manifest.dump(2) << "\n";

  result.final_policy = std::move(policy);
  return result;
}

}  // namespace trajalign::pipeline
