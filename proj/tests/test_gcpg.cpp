#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trajalign/gcpg.hpp"

using namespace trajalign;
using namespace trajalign::gcpg;
using simenv::Task;
using simenv::Trajectory;

namespace {

Task bare_task() {
  Task t;
  t.id = "bare";
  t.instruction = "x";
  t.instruction_slot = 0;
  t.start = {0.1, 0.1};
  t.object = {0.3, 0.3};
  t.target_center = {0.8, 0.8};
  t.target_radius = 0.08;
  return t;
}

// Synthetic trajectory with chosen gripper positions and event flags.
Trajectory path_trajectory(const std::vector<simenv::Vec2>& grippers, int grasp_at, int release_at) {
  Trajectory traj;
  traj.task_id = "bare";
  traj.seed = 1;
  for (std::size_t t = 0; t < grippers.size(); ++t) {
    simenv::TrajStep s;
    s.obs.assign(simenv::kObsDim, 0.0);
    s.obs[0] = grippers[t].x;
    s.obs[1] = grippers[t].y;
    s.obs[3] = 0.3;  // object stays put in these synthetic paths
    s.obs[4] = 0.3;
    s.action = 0;
    s.events.grasp = static_cast<int>(t) == grasp_at;
    s.events.release = static_cast<int>(t) == release_at;
    traj.steps.push_back(std::move(s));
  }
  return traj;
}

ScoredTrajectory scored(double gcpg, double ext, double self, std::uint64_t seed, int success = 0) {
  ScoredTrajectory s;
  s.task_id = "bare";
  s.seed = seed;
  s.r_gcpg = gcpg;
  s.r_ext = ext;
  s.r_self = self;
  s.i_success = success;
  return s;
}

}  // namespace

TEST_CASE("stage boundaries fall at first grasp and first release") {
  std::vector<simenv::Vec2> pts(30, {0.5, 0.5});
  Trajectory traj = path_trajectory(pts, 10, 25);
  StageSegmentation seg = decompose_stages(traj, bare_task());
  REQUIRE(seg.spans.size() == 3);
  CHECK(seg.spans[0].begin == 0);
  CHECK(seg.spans[0].end == 10);
  CHECK(seg.spans[0].label == StageLabel::kReach);
  CHECK(seg.spans[1].begin == 10);
  CHECK(seg.spans[1].end == 25);
  CHECK(seg.spans[1].label == StageLabel::kTransport);
  CHECK(seg.spans[2].begin == 25);
  CHECK(seg.spans[2].end == 30);
  CHECK(seg.spans[2].label == StageLabel::kPlace);
}

TEST_CASE("a trajectory that never grasps is a single reach stage") {
  std::vector<simenv::Vec2> pts(40, {0.5, 0.5});
  Trajectory traj = path_trajectory(pts, -1, -1);
  StageSegmentation seg = decompose_stages(traj, bare_task());
  REQUIRE(seg.spans.size() == 1);
  CHECK(seg.spans[0].begin == 0);
  CHECK(seg.spans[0].end == 40);
  CHECK(seg.spans[0].label == StageLabel::kReach);
}

TEST_CASE("grasp without release gives reach + transport") {
  std::vector<simenv::Vec2> pts(20, {0.5, 0.5});
  Trajectory traj = path_trajectory(pts, 5, -1);
  StageSegmentation seg = decompose_stages(traj, bare_task());
  REQUIRE(seg.spans.size() == 2);
  CHECK(seg.spans[1].begin == 5);
  CHECK(seg.spans[1].end == 20);
}

TEST_CASE("spans partition [0, T) for random event placements") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    int T = 2 + rng.uniform_int(40);
    int grasp_at = rng.uniform_int(T + 4) - 2;  // sometimes absent
    int release_at = grasp_at >= 0 ? grasp_at + 1 + rng.uniform_int(T) : -1;
    if (release_at >= T) release_at = -1;
    std::vector<simenv::Vec2> pts(T, {0.4, 0.4});
    Trajectory traj = path_trajectory(pts, grasp_at, release_at);
    StageSegmentation seg = decompose_stages(traj, bare_task());
    REQUIRE(!seg.spans.empty());
    CHECK(seg.spans.front().begin == 0);
    CHECK(seg.spans.back().end == T);
    for (std::size_t i = 0; i + 1 < seg.spans.size(); ++i) {
      CHECK(seg.spans[i].end == seg.spans[i + 1].begin);
      CHECK(seg.spans[i].begin < seg.spans[i].end);
    }
  }
}

TEST_CASE("expert stage boundaries match the controller's phase switches") {
  for (const Task& task : simenv::default_task_suite().tasks) {
    std::uint64_t seed = 11;
    // Manual env loop, tracking the expert's phase on each post-action state.
    simenv::WorkspaceState state = simenv::reset(task, seed);
    Trajectory traj;
    traj.task_id = task.id;
    traj.seed = seed;
    int transport_start = -1, place_start = -1;
    for (int t = 0; t < simenv::kDefaultTMax; ++t) {
      simenv::TrajStep rec;
      rec.obs = simenv::observe(state, task);
      rec.action = simenv::scripted_expert(state, task);
      rec.events = simenv::step(state, task, rec.action);
      traj.steps.push_back(rec);
      simenv::ExpertPhase phase = simenv::expert_phase(state, task);
      if (phase == simenv::ExpertPhase::kTransport && transport_start < 0) transport_start = t;
      if (phase == simenv::ExpertPhase::kPlace && place_start < 0) place_start = t;
      if (rec.events.success) {
        traj.status = simenv::Status::kSuccess;
        break;
      }
    }
    REQUIRE(traj.status == simenv::Status::kSuccess);
    StageSegmentation seg = decompose_stages(traj, task);
    REQUIRE(seg.spans.size() == 3);
    CHECK(seg.spans[1].begin == transport_start);
    CHECK(seg.spans[2].begin == place_start);
  }
}

TEST_CASE("target-distance uses the end-of-stage gripper position") {
  Trajectory traj = path_trajectory({{0.2, 0.2}, {0.1, 0.1}, {0.0, 0.0}}, -1, -1);
  StageSpan span{0, 3, StageLabel::kReach};
  Keypoints kp;
  kp.object = {0.3, 0.4};
  ConstraintDef c;
  c.kind = ConstraintKind::kTargetDistance;
  c.keypoint = KeypointRef::kObject;
  c.weight = 1.0;
  CHECK(stage_cost(traj, span, std::vector<ConstraintDef>{c}, kp) ==
        doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("collision clearance penalizes only inside the threshold") {
  Keypoints kp;
  kp.obstacles.push_back({{0.5, 0.5}, 0.1});
  ConstraintDef c;
  c.kind = ConstraintKind::kCollisionClearance;
  c.keypoint = KeypointRef::kObstacles;
  c.threshold = 0.1;
  c.weight = 1.0;
  // Surface distance 0.05 -> cost 0.05.
  Trajectory near = path_trajectory({{0.5, 0.65}}, -1, -1);
  CHECK(stage_cost(near, {0, 1, StageLabel::kReach}, std::vector<ConstraintDef>{c}, kp) ==
        doctest::Approx(0.05).epsilon(1e-9));
  // Surface distance 0.2 -> no cost.
  Trajectory far = path_trajectory({{0.5, 0.8}}, -1, -1);
  CHECK(stage_cost(far, {0, 1, StageLabel::kReach}, std::vector<ConstraintDef>{c}, kp) == 0.0);
}

TEST_CASE("path-steps floors traversed arc length over step size") {
  Trajectory traj = path_trajectory({{0.0, 0.0}, {0.25, 0.0}}, -1, -1);
  ConstraintDef c;
  c.kind = ConstraintKind::kPathSteps;
  c.keypoint = KeypointRef::kTarget;
  c.step_size = 0.01;
  c.weight = 1.0;
  Keypoints kp;
  CHECK(stage_cost(traj, {0, 2, StageLabel::kReach}, std::vector<ConstraintDef>{c}, kp) ==
        doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("approach-direction checks the side at the stage boundary") {
  Keypoints kp;
  kp.object = {0.5, 0.5};
  ConstraintDef c;
  c.kind = ConstraintKind::kApproachDirection;
  c.keypoint = KeypointRef::kObject;
  c.weight = 1.0;
  Trajectory above = path_trajectory({{0.5, 0.7}}, -1, -1);
  CHECK(stage_cost(above, {0, 1, StageLabel::kReach}, std::vector<ConstraintDef>{c}, kp) == 0.0);
  Trajectory below = path_trajectory({{0.5, 0.3}}, -1, -1);
  CHECK(stage_cost(below, {0, 1, StageLabel::kReach}, std::vector<ConstraintDef>{c}, kp) == 1.0);
}

TEST_CASE("stage_cost rejects spans outside the trajectory") {
  Trajectory traj = path_trajectory({{0.1, 0.1}}, -1, -1);
  Keypoints kp;
  std::vector<ConstraintDef> cs;
  CHECK_THROWS_AS(stage_cost(traj, {0, 2, StageLabel::kReach}, cs, kp), UsageError);
  CHECK_THROWS_AS(stage_cost(traj, {1, 1, StageLabel::kReach}, cs, kp), UsageError);
}

TEST_CASE("external reward of zero costs is 1") {
  std::vector<double> costs{0.0, 0.0, 0.0};
  CHECK(external_reward(costs) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("external reward matches e^-1 and the product-sum identity") {
  std::vector<double> one{1.0};
  CHECK(external_reward(one) == doctest::Approx(0.36787944117144233).epsilon(1e-12));
  std::vector<double> mix{0.5, 0.5, 1.0};
  CHECK(external_reward(mix) == doctest::Approx(0.1353352832366127).epsilon(1e-12));

  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> costs;
    int n = 1 + rng.uniform_int(5);
    for (int i = 0; i < n; ++i) costs.push_back(rng.uniform(0.0, 3.0));
    double sum = std::accumulate(costs.begin(), costs.end(), 0.0);
    CHECK(external_reward(costs) == doctest::Approx(std::exp(-sum)).epsilon(1e-12));
  }
}

TEST_CASE("external reward is strictly antitone in every cost") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> costs{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
    double base = external_reward(costs);
    int k = rng.uniform_int(3);
    costs[k] += rng.uniform(0.01, 1.0);
    CHECK(external_reward(costs) < base);
  }
}

TEST_CASE("external reward rejects an empty cost list") {
  std::vector<double> empty;
  CHECK_THROWS_AS(external_reward(empty), UsageError);
}

TEST_CASE("self reward delegates to the trajectory log-probability") {
  policy::PolicyParams uniform = policy::init_policy(simenv::kObsDim, 8, simenv::kNumActions, 2);
  for (numgrad::DenseMatrix* t : uniform.tensors()) {
    for (double& x : t->data) x = 0.0;
  }
  std::vector<simenv::Vec2> pts(10, {0.5, 0.5});
  Trajectory traj = path_trajectory(pts, -1, -1);
  double r = self_reward(uniform, traj);
  CHECK(r == doctest::Approx(-28.903717578961651).epsilon(1e-12));
  CHECK(r == policy::trajectory_logprob(uniform, traj));  // bit-for-bit delegation

  // Additivity: doubling the steps doubles the uniform-policy reward.
  std::vector<simenv::Vec2> pts2(20, {0.5, 0.5});
  Trajectory traj2 = path_trajectory(pts2, -1, -1);
  CHECK(self_reward(uniform, traj2) == doctest::Approx(2.0 * r).epsilon(1e-12));
}

TEST_CASE("success indicator reads the terminal status") {
  Trajectory traj = path_trajectory({{0.1, 0.1}}, -1, -1);
  traj.status = simenv::Status::kTimeout;
  CHECK(success_indicator(traj, bare_task()) == 0);
  traj.status = simenv::Status::kSuccess;
  CHECK(success_indicator(traj, bare_task()) == 1);
}

TEST_CASE("success status is consistent with recorded events across rollouts") {
  simenv::TaskSuite suite = simenv::default_task_suite();
  auto random_policy = [](const std::vector<double>&, Rng& rng) {
    return rng.uniform_int(simenv::kNumActions);
  };
  for (const Task& task : suite.tasks) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Trajectory traj = simenv::rollout_with(random_policy, task, seed);
      bool event_success = !traj.steps.empty() && traj.steps.back().events.success;
      CHECK((traj.status == simenv::Status::kSuccess) == event_success);
    }
    Trajectory expert = simenv::expert_rollout(task, 99);
    CHECK(success_indicator(expert, task) == 1);
    CHECK(expert.steps.back().events.success);
  }
}

TEST_CASE("gcpg reward is the lambda-weighted sum") {
  Lambdas paper{0.01, 0.01, 2.0};
  double expected = 0.01 * (-10.0) + 0.01 * 1.0 + 2.0 * 1.0;
  CHECK(gcpg_reward(-10.0, 1.0, 1, paper) == expected);
  CHECK(gcpg_reward(-10.0, 1.0, 1, paper) == doctest::Approx(1.91).epsilon(1e-12));

  Lambdas zero{0.0, 0.0, 0.0};
  CHECK(gcpg_reward(123.0, 0.9, 1, zero) == 0.0);

  // Success flip raises the reward by exactly the success weight.
  double up = gcpg_reward(-3.0, 0.4, 1, paper);
  double down = gcpg_reward(-3.0, 0.4, 0, paper);
  CHECK(up - down == doctest::Approx(2.0).epsilon(1e-12));

  Lambdas negative{-0.1, 0.0, 0.0};
  CHECK_THROWS_AS(gcpg_reward(1.0, 1.0, 0, negative), UsageError);
}

TEST_CASE("rank_and_pair m=1 pairs the extremes") {
  std::vector<ScoredTrajectory> s{scored(1.91, 0.9, -3, 11, 1), scored(0.5, 0.8, -4, 12),
                                  scored(0.3, 0.7, -5, 13), scored(-0.2, 0.6, -6, 14),
                                  scored(-1.0, 0.5, -7, 15)};
  std::vector<PreferencePair> pairs = rank_and_pair(s, 1);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].chosen_seed == 11);
  CHECK(pairs[0].rejected_seed == 15);
  CHECK(pairs[0].gap == doctest::Approx(2.91).epsilon(1e-12));
}

TEST_CASE("rank_and_pair m=2 crosses top and bottom") {
  std::vector<ScoredTrajectory> s{scored(1.91, 0.9, -3, 11, 1), scored(0.5, 0.8, -4, 12),
                                  scored(0.3, 0.7, -5, 13), scored(-0.2, 0.6, -6, 14),
                                  scored(-1.0, 0.5, -7, 15)};
  std::vector<PreferencePair> pairs = rank_and_pair(s, 2);
  REQUIRE(pairs.size() == 4);
  // chosen from {11, 12}, rejected from {14, 15}
  for (const PreferencePair& p : pairs) {
    CHECK((p.chosen_seed == 11 || p.chosen_seed == 12));
    CHECK((p.rejected_seed == 14 || p.rejected_seed == 15));
    CHECK(p.gap > 0.0);
  }
}

TEST_CASE("identical rewards produce no pairs") {
  std::vector<ScoredTrajectory> s;
  for (int i = 0; i < 5; ++i) s.push_back(scored(0.7, 0.5, -2, 100 + i));
  CHECK(rank_and_pair(s, 1).empty());
  CHECK(rank_and_pair(s, 2).empty());
}

TEST_CASE("ties break by r_ext, then r_self, then lower seed") {
  std::vector<ScoredTrajectory> s{scored(1.0, 0.5, -2, 21), scored(1.0, 0.9, -2, 22),
                                  scored(1.0, 0.5, -1, 23), scored(0.0, 0.1, -9, 24)};
  std::vector<PreferencePair> pairs = rank_and_pair(s, 1);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].chosen_seed == 22);  // highest r_ext among equal rewards
  CHECK(pairs[0].rejected_seed == 24);
}

TEST_CASE("rank_and_pair validates its inputs") {
  std::vector<ScoredTrajectory> s{scored(1.0, 0.5, -2, 1), scored(0.5, 0.4, -3, 2)};
  CHECK_THROWS_AS(rank_and_pair(s, 2), UsageError);  // needs >= 4
  CHECK_THROWS_AS(rank_and_pair(s, 0), UsageError);
  std::vector<ScoredTrajectory> mixed = s;
  mixed[1].task_id = "other";
  CHECK_THROWS_AS(rank_and_pair(mixed, 1), UsageError);
}

TEST_CASE("rank_and_pair output is invariant under input permutation") {
  Rng rng(8);
  std::vector<ScoredTrajectory> s;
  for (int i = 0; i < 8; ++i) {
    s.push_back(scored(rng.uniform(-1.0, 2.0), rng.uniform(0.0, 1.0), rng.uniform(-30.0, 0.0),
                       500 + i, i % 2));
  }
  std::vector<PreferencePair> base = rank_and_pair(s, 2);
  std::vector<ScoredTrajectory> shuffled = s;
  for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.next_u64() % i]);
  std::vector<PreferencePair> perm = rank_and_pair(shuffled, 2);
  REQUIRE(base.size() == perm.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i].chosen_seed == perm[i].chosen_seed);
    CHECK(base[i].rejected_seed == perm[i].rejected_seed);
    CHECK(base[i].gap == perm[i].gap);
  }
}

TEST_CASE("cost spec json round-trip and presets") {
  for (const std::string& name : preset_names()) {
    CostSpec spec = preset_cost_spec(name);
    CostSpec back = cost_spec_from_json(cost_spec_to_json(spec));
    CHECK(back.objective == spec.objective);
    CHECK(back.lambdas.self == spec.lambdas.self);
    CHECK(back.lambdas.ext == spec.lambdas.ext);
    CHECK(back.lambdas.success == spec.lambdas.success);
    REQUIRE(back.stages.size() == spec.stages.size());
    for (const auto& [label, defs] : spec.stages) {
      const auto& bdefs = back.stages.at(label);
      REQUIRE(bdefs.size() == defs.size());
      for (std::size_t i = 0; i < defs.size(); ++i) {
        CHECK(bdefs[i].kind == defs[i].kind);
        CHECK(bdefs[i].weight == defs[i].weight);
        CHECK(bdefs[i].threshold == defs[i].threshold);
      }
    }
  }
  CHECK_THROWS_AS(preset_cost_spec("nope"), ConfigError);
}

TEST_CASE("cost spec validation rejects malformed specs") {
  CostSpec spec = preset_cost_spec("task-completion");
  spec.stages.erase(StageLabel::kPlace);
  CHECK_THROWS_AS(validate_cost_spec(spec), ConfigError);

  CostSpec neg = preset_cost_spec("safety");
  neg.stages[StageLabel::kReach][0].weight = -1.0;
  CHECK_THROWS_AS(validate_cost_spec(neg), ConfigError);

  CHECK_THROWS_AS(cost_spec_from_json("{\"stages\": {\"reach\": [{\"kind\": \"wat\", \"keypoint\": \"object\"}]}}"),
                  ConfigError);
  CHECK_THROWS_AS(cost_spec_from_json("not json"), ParseError);
}

TEST_CASE("score_trajectory assembles all reward components") {
  simenv::TaskSuite suite = simenv::default_task_suite();
  const Task& task = suite.tasks[1];  // has an obstacle
  Trajectory traj = simenv::expert_rollout(task, 5);
  policy::PolicyParams sampler = policy::init_policy(simenv::kObsDim, 16, simenv::kNumActions, 40);
  CostSpec spec = preset_cost_spec("task-completion");
  ScoredTrajectory s = score_trajectory(traj, task, spec, sampler);
  CHECK(s.task_id == task.id);
  CHECK(s.seed == 5);
  CHECK(s.stage_costs.size() == 3);
  CHECK(s.r_ext > 0.0);
  CHECK(s.r_ext <= 1.0);
  CHECK(s.i_success == 1);
  CHECK(s.r_self == policy::trajectory_logprob(sampler, traj));
  CHECK(s.r_gcpg ==
        doctest::Approx(0.01 * s.r_self + 0.01 * s.r_ext + 2.0).epsilon(1e-12));
}

TEST_CASE("safety spec inverts the ranking of a colliding success vs a clean near-miss") {
  // Hand-built: one trajectory that grazes the obstacle but succeeds, one
  // that stays clear. Under task-completion weights the success bonus
  // dominates; under safety weights the clearance cost must outweigh it.
  Task task = bare_task();
  task.obstacles.push_back({{0.5, 0.5}, 0.1});
  task.object = {0.3, 0.5};
  task.target_center = {0.8, 0.5};

  auto build = [&](bool through_obstacle) {
    std::vector<simenv::Vec2> pts;
    for (int i = 0; i <= 25; ++i) {
      double x = 0.3 + 0.5 * i / 25.0;
      double y = through_obstacle ? 0.5 : (x < 0.45 || x > 0.62 ? 0.5 : 0.70);
      pts.push_back({x, y});
    }
    Trajectory t = path_trajectory(pts, 1, 24);
    t.task_id = task.id;
    t.status = through_obstacle ? simenv::Status::kSuccess : simenv::Status::kTimeout;
    t.seed = through_obstacle ? 1 : 2;
    return t;
  };
  Trajectory colliding = build(true);
  Trajectory clean = build(false);
  policy::PolicyParams uniform = policy::init_policy(simenv::kObsDim, 8, simenv::kNumActions, 3);
  for (numgrad::DenseMatrix* t : uniform.tensors()) {
    for (double& x : t->data) x = 0.0;
  }

  CostSpec tc = preset_cost_spec("task-completion");
  ScoredTrajectory tc_col = score_trajectory(colliding, task, tc, uniform);
  ScoredTrajectory tc_clean = score_trajectory(clean, task, tc, uniform);
  CHECK(tc_col.r_gcpg > tc_clean.r_gcpg);  // success bonus dominates

  CostSpec safety = preset_cost_spec("safety");
  ScoredTrajectory sf_col = score_trajectory(colliding, task, safety, uniform);
  ScoredTrajectory sf_clean = score_trajectory(clean, task, safety, uniform);
  CHECK(sf_clean.r_ext > sf_col.r_ext);
}
