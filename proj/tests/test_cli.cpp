#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "trajalign/cli.hpp"

using namespace trajalign;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

// Synthetic successful trajectory for the blocked_middle task following the
// given gripper waypoints; the object rides along after the grasp step.
simenv::Trajectory synthetic_success(const std::vector<simenv::Vec2>& path, std::uint64_t seed) {
  simenv::Trajectory traj;
  traj.task_id = "blocked_middle";
  traj.seed = seed;
  traj.status = simenv::Status::kSuccess;
  for (std::size_t t = 0; t < path.size(); ++t) {
    simenv::TrajStep s;
    s.obs.assign(simenv::kObsDim, 0.0);
    s.obs[0] = path[t].x;
    s.obs[1] = path[t].y;
    bool held = t >= 1 && t + 1 < path.size();
    s.obs[2] = held ? 1.0 : 0.0;
    s.obs[3] = held ? path[t].x : (t == 0 ? 0.30 : path[t].x);
    s.obs[4] = held ? path[t].y : (t == 0 ? 0.50 : path[t].y);
    s.obs[5] = held ? 1.0 : 0.0;
    s.obs[6] = 0.85;
    s.obs[7] = 0.50;
    s.action = 0;
    s.events.grasp = t == 1;
    s.events.release = t + 1 == path.size();
    s.events.success = t + 1 == path.size();
    traj.steps.push_back(std::move(s));
  }
  return traj;
}

}  // namespace

TEST_CASE("run config json parsing and seed detection") {
  fs::path dir = temp_dir("trajalign_cli_cfg");
  fs::path cfg_path = dir / "cfg.json";
  write_file(cfg_path, R"({"iterations": 2, "beta": 0.3, "lambda_ext": 0.5,
                           "eval_suites": ["in_domain", "subject"], "seed": 9})");
  pipeline::RunConfig cfg = cli::load_run_config(cfg_path.string());
  CHECK(cfg.iterations == 2);
  CHECK(cfg.beta == 0.3);
  REQUIRE(cfg.lambda_ext.has_value());
  CHECK(*cfg.lambda_ext == 0.5);
  CHECK(cfg.eval_suites.size() == 2);
  CHECK(cfg.seed == 9);
  CHECK(cfg.seed_set);

  write_file(cfg_path, R"({"iterations": 2})");
  pipeline::RunConfig no_seed = cli::load_run_config(cfg_path.string());
  CHECK_FALSE(no_seed.seed_set);

  CHECK_THROWS_AS(cli::load_run_config("/no/such/config.json"), MissingArtifact);
  write_file(cfg_path, "{broken");
  CHECK_THROWS_AS(cli::load_run_config(cfg_path.string()), ParseError);
  fs::remove_all(dir);
}

TEST_CASE("set overrides parse typed values and reject unknown keys") {
  pipeline::RunConfig cfg;
  cli::apply_override(cfg, "beta", "0.25");
  CHECK(cfg.beta == 0.25);
  cli::apply_override(cfg, "algo", "stepdpo");
  CHECK(cfg.algo == "stepdpo");
  cli::apply_override(cfg, "eval_suites", "in_domain,physical");
  CHECK(cfg.eval_suites == std::vector<std::string>{"in_domain", "physical"});
  cli::apply_override(cfg, "seed", "77");
  CHECK(cfg.seed == 77);
  CHECK(cfg.seed_set);
  CHECK_THROWS_AS(cli::apply_override(cfg, "nope", "1"), ConfigError);
  CHECK_THROWS_AS(cli::apply_override(cfg, "beta", "xyz"), ConfigError);
}

TEST_CASE("dispatch exit codes for config problems") {
  // Missing config file -> missing artifact.
  CHECK(cli::dispatch({"demos", "--config", "/no/such.json"}) == 3);
  // Invalid config -> config error.
  fs::path dir = temp_dir("trajalign_cli_codes");
  CHECK(cli::dispatch({"demos", "--seed", "1", "--out", (dir / "d").string(), "--set",
                       "iterations=0"}) == 2);
  // Unknown flag -> config error.
  CHECK(cli::dispatch({"demos", "--bogus"}) == 2);
  // eval without a model -> config error; with a missing model -> missing artifact.
  CHECK(cli::dispatch({"eval", "--seed", "1", "--out", (dir / "e").string()}) == 2);
  CHECK(cli::dispatch({"eval", "--seed", "1", "--out", (dir / "e").string(), "--set",
                       "model=/no/model.json", "--set", "eval_episodes=1"}) == 3);
  fs::remove_all(dir);
}

TEST_CASE("demos writes per-task demonstrations deterministically") {
  fs::path a = temp_dir("trajalign_cli_demos_a");
  fs::path b = temp_dir("trajalign_cli_demos_b");
  std::vector<std::string> args{"demos", "--seed", "5", "--set", "demos_per_task=2"};
  std::vector<std::string> run_a = args;
  run_a.push_back("--out");
  run_a.push_back(a.string());
  std::vector<std::string> run_b = args;
  run_b.push_back("--out");
  run_b.push_back(b.string());
  REQUIRE(cli::dispatch(run_a) == 0);
  REQUIRE(cli::dispatch(run_b) == 0);
  std::string da = slurp(a / "demos.jsonl");
  CHECK(da == slurp(b / "demos.jsonl"));

  std::vector<simenv::Trajectory> demos = pipeline::load_dataset((a / "demos.jsonl").string());
  CHECK(demos.size() == 8);  // 4 tasks x 2
  for (const simenv::Trajectory& d : demos) CHECK(d.status == simenv::Status::kSuccess);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("demos with count zero writes an empty dataset") {
  fs::path dir = temp_dir("trajalign_cli_demos_zero");
  REQUIRE(cli::dispatch({"demos", "--seed", "1", "--out", dir.string(), "--set",
                         "demos_per_task=0"}) == 0);
  CHECK(pipeline::load_dataset((dir / "demos.jsonl").string()).empty());
  fs::remove_all(dir);
}

TEST_CASE("sft trains from a demos file and writes a model") {
  fs::path dir = temp_dir("trajalign_cli_sft");
  REQUIRE(cli::dispatch({"demos", "--seed", "3", "--out", dir.string(), "--set",
                         "demos_per_task=2"}) == 0);
  REQUIRE(cli::dispatch({"sft", "--seed", "3", "--out", dir.string(), "--set",
                         ("demos_path=" + (dir / "demos.jsonl").string()), "--set",
                         "sft_epochs=1", "--set", "hidden=16"}) == 0);
  policy::PolicyParams p = policy::load_policy((dir / "model.json").string());
  CHECK(p.provenance == "sft");
  CHECK(p.net.arch.hidden == 16);
  fs::remove_all(dir);
}

TEST_CASE("eval on a random-init policy reports near-zero success") {
  fs::path dir = temp_dir("trajalign_cli_eval");
  policy::PolicyParams p = policy::init_policy(simenv::kObsDim, 16, simenv::kNumActions, 8);
  policy::save_policy((dir / "model.json").string(), p);
  REQUIRE(cli::dispatch({"eval", "--seed", "2", "--out", dir.string(), "--set",
                         ("model=" + (dir / "model.json").string()), "--set", "eval_episodes=5",
                         "--set", "eval_suites=in_domain"}) == 0);
  std::vector<pipeline::MetricsRow> rows =
      pipeline::load_metrics_csv((dir / "metrics.csv").string());
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].success_rate <= 0.10);  // a random walk essentially never finishes
  fs::remove_all(dir);
}

TEST_CASE("score ranks colliding vs clean trajectories differently per objective") {
  fs::path dir = temp_dir("trajalign_cli_score");

  // Straight-through success grazes the obstacle at (0.55, 0.50); the
  // detour stays clear but takes longer.
  std::vector<simenv::Vec2> straight, detour;
  for (int i = 0; i <= 27; ++i) straight.push_back({0.30 + 0.55 * i / 27.0, 0.50});
  for (int i = 0; i <= 40; ++i) {
    double x = 0.30 + 0.55 * i / 40.0;
    double y = (x > 0.40 && x < 0.70) ? 0.72 : 0.50;
    detour.push_back({x, y});
  }
  std::vector<simenv::Trajectory> dataset{synthetic_success(straight, 1),
                                          synthetic_success(detour, 2)};
  pipeline::persist_dataset(dataset, (dir / "rollouts.jsonl").string());

  policy::PolicyParams uniform = policy::init_policy(simenv::kObsDim, 8, simenv::kNumActions, 1);
  for (numgrad::DenseMatrix* t : uniform.tensors()) {
    for (double& x : t->data) x = 0.0;
  }
  policy::save_policy((dir / "model.json").string(), uniform);

  auto score_with = [&](const std::string& objective, const fs::path& out) {
    std::vector<std::string> args{"score",
                                  "--seed",
                                  "1",
                                  "--out",
                                  out.string(),
                                  "--set",
                                  "dataset=" + (dir / "rollouts.jsonl").string(),
                                  "--set",
                                  "model=" + (dir / "model.json").string(),
                                  "--set",
                                  "cost_spec=" + objective};
    REQUIRE(cli::dispatch(args) == 0);
    std::vector<double> rewards;
    std::ifstream f(out / "scored.jsonl");
    std::string line;
    while (std::getline(f, line)) {
      if (!line.empty()) rewards.push_back(json::parse(line)["r_gcpg"].get<double>());
    }
    REQUIRE(rewards.size() == 2);
    return rewards;  // [straight, detour]
  };
  std::vector<double> tc = score_with("task-completion", dir / "tc");
  std::vector<double> safety = score_with("safety", dir / "safety");
  CHECK(tc[0] > tc[1]);          // completion weights favor the short straight success
  CHECK(safety[1] > safety[0]);  // safety weights favor the clean detour
  fs::remove_all(dir);
}

TEST_CASE("report aggregates mean and stddev per suite per iteration") {
  fs::path base = temp_dir("trajalign_cli_report");
  for (int r = 0; r < 2; ++r) {
    fs::path run = base / ("run" + std::to_string(r));
    fs::create_directories(run);
    std::vector<pipeline::MetricsRow> rows{
        {0, "in_domain", r == 0 ? 0.4 : 0.6, 0.8, 0.1, 50.0, 10},
        {1, "in_domain", r == 0 ? 0.7 : 0.9, 0.9, 0.1, 45.0, 10},
        {0, "subject", 0.5, 0.8, 0.2, 60.0, 10},
        {1, "subject", 0.5, 0.8, 0.2, 55.0, 10},
    };
    pipeline::write_metrics_csv((run / "metrics.csv").string(), rows);
  }
  fs::path out = base / "summary.csv";
  REQUIRE(cli::dispatch({"report", "--out", out.string(), (base / "run0").string(),
                         (base / "run1").string()}) == 0);
  std::ifstream f(out);
  std::string header;
  std::getline(f, header);
  CHECK(header.find("success_rate_mean") != std::string::npos);
  int rows = 0;
  bool found_expected = false;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    rows++;
    if (line.rfind("in_domain,0,", 0) == 0) {
      // mean 0.5, sample stddev of {0.4, 0.6} = 0.141421...
      CHECK(line.find("0.5") != std::string::npos);
      CHECK(line.find("0.141421") != std::string::npos);
      found_expected = true;
    }
  }
  CHECK(rows == 4);  // suites x iterations
  CHECK(found_expected);

  CHECK(cli::dispatch({"report", (base / "missing").string()}) == 3);
  fs::remove_all(base);
}

TEST_CASE("subcommand is required") {
  CHECK(cli::dispatch({}) == 2);
}
