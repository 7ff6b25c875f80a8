#include "trajalign/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

namespace trajalign::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::RunConfig;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = s.find(',', start);
    std::string piece = s.substr(start, comma - start);
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact(format_str("config file not found: %s", path.c_str()));
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ParseError(format_str("config %s: %s", path.c_str(), e.what()));
  }
  RunConfig cfg;
  auto geti = [&](const char* k, int d) { return j.value(k, d); };
  auto getd = [&](const char* k, double d) { return j.value(k, d); };
  auto gets = [&](const char* k, const std::string& d) { return j.value(k, d); };
  cfg.iterations = geti("iterations", cfg.iterations);
  cfg.samples_per_task = geti("samples_per_task", cfg.samples_per_task);
  cfg.pair_width = geti("pair_width", cfg.pair_width);
  cfg.beta = getd("beta", cfg.beta);
  if (j.contains("lambda_self")) cfg.lambda_self = j["lambda_self"].get<double>();
  if (j.contains("lambda_ext")) cfg.lambda_ext = j["lambda_ext"].get<double>();
  if (j.contains("lambda_success")) cfg.lambda_success = j["lambda_success"].get<double>();
  cfg.tpo_lr = getd("tpo_lr", cfg.tpo_lr);
  cfg.tpo_weight_decay = getd("tpo_weight_decay", cfg.tpo_weight_decay);
  cfg.tpo_epochs = geti("tpo_epochs", cfg.tpo_epochs);
  cfg.tpo_batch_size = geti("tpo_batch_size", cfg.tpo_batch_size);
  cfg.algo = gets("algo", cfg.algo);
  cfg.pairing = gets("pairing", cfg.pairing);
  cfg.t_max = geti("t_max", cfg.t_max);
  cfg.jitter = getd("jitter", cfg.jitter);
  cfg.hidden = geti("hidden", cfg.hidden);
  cfg.sft_model = gets("sft_model", cfg.sft_model);
  cfg.demos_per_task = geti("demos_per_task", cfg.demos_per_task);
  cfg.sft_epochs = geti("sft_epochs", cfg.sft_epochs);
  cfg.sft_batch_size = geti("sft_batch_size", cfg.sft_batch_size);
  cfg.sft_lr = getd("sft_lr", cfg.sft_lr);
  cfg.sft_weight_decay = getd("sft_weight_decay", cfg.sft_weight_decay);
  cfg.eval_episodes = geti("eval_episodes", cfg.eval_episodes);
  if (j.contains("eval_suites")) cfg.eval_suites = j["eval_suites"].get<std::vector<std::string>>();
  cfg.task_suite = gets("task_suite", cfg.task_suite);
  cfg.cost_spec = gets("cost_spec", cfg.cost_spec);
  cfg.out_dir = gets("out_dir", cfg.out_dir);
  cfg.model = gets("model", cfg.model);
  cfg.demos_path = gets("demos_path", cfg.demos_path);
  cfg.dataset = gets("dataset", cfg.dataset);
  cfg.workers = geti("workers", cfg.workers);
  if (j.contains("seed")) {
    cfg.seed = j["seed"].get<std::uint64_t>();
    cfg.seed_set = true;
  }
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  try {
    if (key == "iterations") cfg.iterations = std::stoi(value);
    else if (key == "samples_per_task") cfg.samples_per_task = std::stoi(value);
    else if (key == "pair_width") cfg.pair_width = std::stoi(value);
    else if (key == "beta") cfg.beta = std::stod(value);
    else if (key == "lambda_self") cfg.lambda_self = std::stod(value);
    else if (key == "lambda_ext") cfg.lambda_ext = std::stod(value);
    else if (key == "lambda_success") cfg.lambda_success = std::stod(value);
    else if (key == "tpo_lr") cfg.tpo_lr = std::stod(value);
    else if (key == "tpo_weight_decay") cfg.tpo_weight_decay = std::stod(value);
    else if (key == "tpo_epochs") cfg.tpo_epochs = std::stoi(value);
    else if (key == "tpo_batch_size") cfg.tpo_batch_size = std::stoi(value);
    else if (key == "algo") cfg.algo = value;
    else if (key == "pairing") cfg.pairing = value;
    else if (key == "t_max") cfg.t_max = std::stoi(value);
    else if (key == "jitter") cfg.jitter = std::stod(value);
    else if (key == "hidden") cfg.hidden = std::stoi(value);
    else if (key == "sft_model") cfg.sft_model = value;
    else if (key == "demos_per_task") cfg.demos_per_task = std::stoi(value);
    else if (key == "sft_epochs") cfg.sft_epochs = std::stoi(value);
    else if (key == "sft_batch_size") cfg.sft_batch_size = std::stoi(value);
    else if (key == "sft_lr") cfg.sft_lr = std::stod(value);
    else if (key == "sft_weight_decay") cfg.sft_weight_decay = std::stod(value);
    else if (key == "eval_episodes") cfg.eval_episodes = std::stoi(value);
    else if (key == "eval_suites") cfg.eval_suites = split_csv(value);
    else if (key == "task_suite") cfg.task_suite = value;
    else if (key == "cost_spec") cfg.cost_spec = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "model") cfg.model = value;
    else if (key == "demos_path") cfg.demos_path = value;
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "workers") cfg.workers = std::stoi(value);
    else if (key == "seed") {
      cfg.seed = std::stoull(value);
      cfg.seed_set = true;
    } else {
      throw ConfigError(format_str("unknown config key '%s'", key.c_str()));
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError(format_str("cannot parse value '%s' for key '%s'", value.c_str(), key.c_str()));
  } catch (const std::out_of_range&) {
    throw ConfigError(format_str("value '%s' out of range for key '%s'", value.c_str(), key.c_str()));
  }
}

namespace {

void require_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is required (use --out)");
  fs::create_directories(cfg.out_dir);
}

std::uint64_t policy_init_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "policy-init"); }

}  // namespace

int cmd_demos(const RunConfig& cfg) {
  pipeline::validate_run_config(cfg);
  require_out_dir(cfg);
  simenv::TaskSuite suite = pipeline::resolve_task_suite(cfg.task_suite);
  std::vector<simenv::Trajectory> demos =
      pipeline::generate_demos(suite, cfg.demos_per_task, cfg.seed, cfg.t_max, cfg.jitter);
  if (demos.empty()) log_warn("demo count is 0; writing an empty dataset");
  std::string path = (fs::path(cfg.out_dir) / "demos.jsonl").string();
  pipeline::persist_dataset(demos, path);
  std::printf("wrote %zu demonstrations (%zu tasks x %d) to %s\n", demos.size(),
              suite.tasks.size(), cfg.demos_per_task, path.c_str());
  return 0;
}

int cmd_sft(const RunConfig& cfg) {
  pipeline::validate_run_config(cfg);
  require_out_dir(cfg);
  simenv::TaskSuite suite = pipeline::resolve_task_suite(cfg.task_suite);
  std::vector<simenv::Trajectory> demos;
  if (!cfg.demos_path.empty()) {
    demos = pipeline::load_dataset(cfg.demos_path);
  } else {
    demos = pipeline::generate_demos(suite, cfg.demos_per_task, cfg.seed, cfg.t_max, cfg.jitter);
  }
  policy::PolicyParams p =
      policy::init_policy(simenv::kObsDim, cfg.hidden, simenv::kNumActions, policy_init_seed(cfg));
  policy::SftConfig sft;
  sft.lr = cfg.sft_lr;
  sft.weight_decay = cfg.sft_weight_decay;
  sft.epochs = cfg.sft_epochs;
  sft.batch_size = cfg.sft_batch_size;
  sft.shuffle_seed = derive_seed(cfg.seed, "sft-shuffle-root");
  std::vector<double> losses = policy::train_sft(p, demos, sft);
  std::string path = (fs::path(cfg.out_dir) / "model.json").string();
  policy::save_policy(path, p);
  std::printf("sft: %zu demos, %d epochs, loss %.4f -> %.4f, model %s\n", demos.size(),
              cfg.sft_epochs, losses.empty() ? 0.0 : losses.front(),
              losses.empty() ? 0.0 : losses.back(), path.c_str());
  return 0;
}

int cmd_run(const RunConfig& cfg) {
  pipeline::RunResult result = pipeline::run_pipeline(cfg);
  for (const pipeline::MetricsRow& r : result.history) {
    std::printf("iter %d  %-10s sr %.3f  grasp %.3f  cr %.3f  sl %.1f\n", r.iteration,
                r.suite.c_str(), r.success_rate, r.grasp_rate, r.collision_rate,
                r.mean_step_length);
  }
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  pipeline::validate_run_config(cfg);
  if (cfg.model.empty()) throw ConfigError("eval requires a 'model' path in the config");
  require_out_dir(cfg);
  policy::PolicyParams p = policy::load_policy(cfg.model);
  std::vector<pipeline::MetricsRow> rows;
  for (const std::string& name : cfg.eval_suites) {
    simenv::TaskSuite suite = pipeline::resolve_task_suite(name);
    std::uint64_t base = derive_seed(cfg.seed, "eval-" + suite.name, 0);
    rows.push_back(pipeline::evaluate(p, suite, cfg.eval_episodes, base, 0, cfg.t_max, cfg.jitter,
                                      cfg.workers));
  }
  std::string path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  pipeline::write_metrics_csv(path, rows);
  for (const pipeline::MetricsRow& r : rows) {
    std::printf("%-10s sr %.3f  grasp %.3f  cr %.3f  sl %.1f  (%d episodes)\n", r.suite.c_str(),
                r.success_rate, r.grasp_rate, r.collision_rate, r.mean_step_length, r.episodes);
  }
  return 0;
}

int cmd_score(const RunConfig& cfg) {
  pipeline::validate_run_config(cfg);
  if (cfg.dataset.empty()) throw ConfigError("score requires a 'dataset' path in the config");
  if (cfg.model.empty()) throw ConfigError("score requires a 'model' path (sampling policy)");
  require_out_dir(cfg);
  std::vector<simenv::Trajectory> trajs = pipeline::load_dataset(cfg.dataset);
  simenv::TaskSuite suite = pipeline::resolve_task_suite(cfg.task_suite);
  gcpg::CostSpec spec = pipeline::resolve_cost_spec(cfg.cost_spec);
  if (cfg.lambda_self) spec.lambdas.self = *cfg.lambda_self;
  if (cfg.lambda_ext) spec.lambdas.ext = *cfg.lambda_ext;
  if (cfg.lambda_success) spec.lambdas.success = *cfg.lambda_success;
  policy::PolicyParams sampler = policy::load_policy(cfg.model);
  std::vector<gcpg::ScoredTrajectory> scored;
  scored.reserve(trajs.size());
  for (const simenv::Trajectory& t : trajs) {
    scored.push_back(gcpg::score_trajectory(t, simenv::find_task(suite, t.task_id), spec, sampler));
  }
  std::string path = (fs::path(cfg.out_dir) / "scored.jsonl").string();
  pipeline::write_scored(scored, path);
  std::printf("scored %zu trajectories with objective '%s' -> %s\n", scored.size(),
              spec.objective.c_str(), path.c_str());
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_path) {
  if (run_dirs.empty()) throw ConfigError("report requires at least one run directory");
  struct Acc {
    std::vector<double> sr, grasp, cr, sl;
    long episodes = 0;
  };
  std::map<std::pair<std::string, int>, Acc> groups;
  for (const std::string& dir : run_dirs) {
    std::string path = (fs::path(dir) / "metrics.csv").string();
    if (!fs::exists(path)) throw MissingArtifact(format_str("missing metrics file: %s", path.c_str()));
    for (const pipeline::MetricsRow& r : pipeline::load_metrics_csv(path)) {
      Acc& a = groups[{r.suite, r.iteration}];
      a.sr.push_back(r.success_rate);
      a.grasp.push_back(r.grasp_rate);
      a.cr.push_back(r.collision_rate);
      a.sl.push_back(r.mean_step_length);
      a.episodes += r.episodes;
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto stddev = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  std::string csv =
      "suite,iteration,runs,success_rate_mean,success_rate_std,grasp_rate_mean,grasp_rate_std,"
      "collision_rate_mean,collision_rate_std,mean_step_length_mean,mean_step_length_std,"
      "episodes_total\n";
  char buf[512];
  for (const auto& [key, a] : groups) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%zu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%ld\n",
                  key.first.c_str(), key.second, a.sr.size(), mean(a.sr), stddev(a.sr),
                  mean(a.grasp), stddev(a.grasp), mean(a.cr), stddev(a.cr), mean(a.sl),
                  stddev(a.sl), a.episodes);
    csv += buf;
  }
  if (out_path.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream f(out_path);
    if (!f) throw MissingArtifact(format_str("cannot write report: %s", out_path.c_str()));
    f << csv;
    std::printf("wrote summary for %zu runs to %s\n", run_dirs.size(), out_path.c_str());
  }
  return 0;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"trajectory-preference alignment for a planar pick-and-place policy"};
  app.require_subcommand(1);

  std::string config_path, out, seed_str;
  int workers = -1;
  std::vector<std::string> overrides;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config");
    sub->add_option("--seed", seed_str, "master seed (overrides config)");
    sub->add_option("--out", out, "output directory (report: output file)");
    sub->add_option("--workers", workers, "worker threads for sampling/evaluation");
    sub->add_option("--set", overrides, "key=value config overrides")->take_all();
  };

  CLI::App* demos = app.add_subcommand("demos", "generate scripted-expert demonstrations");
  CLI::App* sft = app.add_subcommand("sft", "behavior-clone a policy from demonstrations");
  CLI::App* run = app.add_subcommand("run", "iterative preference-alignment pipeline");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a policy checkpoint on task suites");
  CLI::App* score = app.add_subcommand("score", "score a trajectory dataset against a cost spec");
  CLI::App* report = app.add_subcommand("report", "aggregate metrics across seed runs");
  for (CLI::App* sub : {demos, sft, run, eval, score, report}) add_common(sub);
  report->add_option("dirs", run_dirs, "run directories to aggregate");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    for (const std::string& kv : overrides) {
      std::size_t eq = kv.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(format_str("--set expects key=value, got '%s'", kv.c_str()));
      }
      apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!seed_str.empty()) apply_override(cfg, "seed", seed_str);
    if (!out.empty()) cfg.out_dir = out;
    if (workers >= 0) cfg.workers = workers;

    if (demos->parsed()) return cmd_demos(cfg);
    if (sft->parsed()) return cmd_sft(cfg);
    if (run->parsed()) return cmd_run(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (score->parsed()) return cmd_score(cfg);
    if (report->parsed()) return cmd_report(run_dirs, out);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
}

}  // namespace trajalign::cli
