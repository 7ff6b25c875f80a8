#include "trajalign/gcpg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace trajalign::gcpg {

using simenv::Trajectory;
using simenv::Vec2;

std::string to_string(StageLabel label) {
  switch (label) {
    case StageLabel::kReach: return "reach";
    case StageLabel::kTransport: return "transport";
    case StageLabel::kPlace: return "place";
  }
  return "?";
}

StageLabel stage_label_from_string(const std::string& s) {
  if (s == "reach") return StageLabel::kReach;
  if (s == "transport") return StageLabel::kTransport;
  if (s == "place") return StageLabel::kPlace;
  throw ParseError(format_str("unknown stage label '%s'", s.c_str()));
}

namespace {

Vec2 gripper_at(const Trajectory& traj, int t) {
  const auto& obs = traj.steps[t].obs;
  return {obs[0], obs[1]};
}

Vec2 object_at(const Trajectory& traj, int t) {
  const auto& obs = traj.steps[t].obs;
  return {obs[3], obs[4]};
}

// The terminal state is not recorded, so the end boundary clamps to the
// last step.
int end_of_stage(const Trajectory& traj, const StageSpan& span) {
  return std::min(span.end, traj.length() - 1);
}

Keypoints resolve_keypoints(const Trajectory& traj, const simenv::Task& task, int span_begin) {
  Keypoints kp;
  kp.object = object_at(traj, span_begin);
  kp.target = task.target_center;
  kp.obstacles = task.obstacles;
  return kp;
}

}  // namespace

StageSegmentation decompose_stages(const Trajectory& traj, const simenv::Task& task) {
  if (traj.steps.empty()) throw UsageError("decompose_stages: empty trajectory");
  int T = traj.length();
  int grasp_at = -1;
  int release_at = -1;
  for (int t = 0; t < T; ++t) {
    if (grasp_at < 0 && traj.steps[t].events.grasp) grasp_at = t;
    if (grasp_at >= 0 && t > grasp_at && release_at < 0 && traj.steps[t].events.release) {
      release_at = t;
    }
  }
  std::vector<StageSpan> spans;
  if (grasp_at < 0) {
    spans.push_back({0, T, StageLabel::kReach});
  } else if (release_at < 0) {
    spans.push_back({0, grasp_at, StageLabel::kReach});
    spans.push_back({grasp_at, T, StageLabel::kTransport});
  } else {
    spans.push_back({0, grasp_at, StageLabel::kReach});
    spans.push_back({grasp_at, release_at, StageLabel::kTransport});
    spans.push_back({release_at, T, StageLabel::kPlace});
  }
  StageSegmentation seg;
  for (const StageSpan& s : spans) {
    if (s.end <= s.begin) continue;  // drop empty spans (e.g. grasp at t=0)
    seg.spans.push_back(s);
    seg.keypoints.push_back(resolve_keypoints(traj, task, s.begin));
  }
  return seg;
}

namespace {

Vec2 select_point(const Keypoints& kp, KeypointRef ref) {
  switch (ref) {
    case KeypointRef::kObject: return kp.object;
    case KeypointRef::kTarget: return kp.target;
    case KeypointRef::kObstacles:
      throw ConfigError("keypoint 'obstacles' is only valid for collision-clearance");
  }
  throw ConfigError("bad keypoint selector");
}

double constraint_value(const Trajectory& traj, const StageSpan& span, const ConstraintDef& c,
                        const Keypoints& kp) {
  switch (c.kind) {
    case ConstraintKind::kTargetDistance: {
      Vec2 end = gripper_at(traj, end_of_stage(traj, span));
      return dist(end, select_point(kp, c.keypoint));
    }
    case ConstraintKind::kCollisionClearance: {
      double total = 0.0;
      for (int t = span.begin; t < std::min(span.end, traj.length()); ++t) {
        Vec2 g = gripper_at(traj, t);
        for (const simenv::Disc& o : kp.obstacles) {
          double clearance = dist(g, o.center) - o.radius;
          total += std::max(0.0, c.threshold - clearance);
        }
      }
      return total;
    }
    case ConstraintKind::kApproachDirection: {
      Vec2 end = gripper_at(traj, end_of_stage(traj, span));
      return end.y > select_point(kp, c.keypoint).y ? 0.0 : 1.0;
    }
    case ConstraintKind::kPathSteps: {
      if (c.step_size <= 0.0) throw ConfigError("path-steps: step_size must be > 0");
      double arc = 0.0;
      int last = std::min(span.end, traj.length() - 1);
      for (int t = span.begin; t < last; ++t) {
        arc += dist(gripper_at(traj, t), gripper_at(traj, t + 1));
      }
      // Tiny epsilon so arcs that are exact multiples of step_size do not
      // floor down through binary representation error.
      return std::floor(arc / c.step_size + 1e-9);
    }
  }
  throw ConfigError("unknown constraint kind");
}

}  // namespace

double stage_cost(const Trajectory& traj, const StageSpan& span,
                  std::span<const ConstraintDef> constraints, const Keypoints& keypoints) {
  if (span.begin < 0 || span.begin >= span.end || span.end > traj.length()) {
    throw UsageError(format_str("stage span [%d, %d) outside trajectory of length %d", span.begin,
                                span.end, traj.length()));
  }
  double total = 0.0;
  for (const ConstraintDef& c : constraints) {
    if (c.weight < 0.0) throw ConfigError("constraint weight must be >= 0");
    total += c.weight * constraint_value(traj, span, c, keypoints);
  }
  return total;
}

double external_reward(std::span<const double> stage_costs) {
  if (stage_costs.empty()) throw UsageError("external_reward: no stage costs");
  double r = 1.0;
  for (double c : stage_costs) {
    if (!std::isfinite(c)) throw UsageError("external_reward: non-finite stage cost");
    r *= std::exp(-c);
  }
  return r;
}

double self_reward(const policy::PolicyParams& sampling_policy, const Trajectory& traj) {
  return policy::trajectory_logprob(sampling_policy, traj);
}

int success_indicator(const Trajectory& traj, const simenv::Task&) {
  return traj.status == simenv::Status::kSuccess ? 1 : 0;
}

double gcpg_reward(double r_self, double r_ext, int i_success, const Lambdas& lambdas) {
  if (lambdas.self < 0.0 || lambdas.ext < 0.0 || lambdas.success < 0.0) {
    throw UsageError("gcpg_reward: lambdas must be >= 0");
  }
  return lambdas.self * r_self + lambdas.ext * r_ext + lambdas.success * i_success;
}

ScoredTrajectory score_trajectory(const Trajectory& traj, const simenv::Task& task,
                                  const CostSpec& spec, const policy::PolicyParams& sampling_policy) {
  StageSegmentation seg = decompose_stages(traj, task);
  ScoredTrajectory out;
  out.task_id = traj.task_id;
  out.seed = traj.seed;
  for (std::size_t i = 0; i < seg.spans.size(); ++i) {
    auto it = spec.stages.find(seg.spans[i].label);
    if (it == spec.stages.end()) {
      throw ConfigError(format_str("cost spec has no entry for stage '%s'",
                                   to_string(seg.spans[i].label).c_str()));
    }
    out.stage_costs.push_back(stage_cost(traj, seg.spans[i], it->second, seg.keypoints[i]));
  }
  out.r_ext = external_reward(out.stage_costs);
  out.r_self = self_reward(sampling_policy, traj);
  out.i_success = success_indicator(traj, task);
  out.r_gcpg = gcpg_reward(out.r_self, out.r_ext, out.i_success, spec.lambdas);
  return out;
}

std::vector<PreferencePair> rank_and_pair(std::span<const ScoredTrajectory> scored, int m) {
  if (m < 1) throw UsageError("rank_and_pair: m must be >= 1");
  if (static_cast<int>(scored.size()) < 2 * m) {
    throw UsageError(format_str("rank_and_pair: need at least %d trajectories, got %zu", 2 * m,
                                scored.size()));
  }
  for (const ScoredTrajectory& s : scored) {
    if (s.task_id != scored[0].task_id) {
      throw UsageError("rank_and_pair: trajectories span multiple tasks");
    }
  }
  std::vector<int> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  auto reward_keys = [&](int i) {
    return std::make_tuple(scored[i].r_gcpg, scored[i].r_ext, scored[i].r_self);
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    auto ka = reward_keys(a), kb = reward_keys(b);
    if (ka != kb) return ka > kb;
    return scored[a].seed < scored[b].seed;
  });
  std::vector<PreferencePair> pairs;
  int n = static_cast<int>(order.size());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      int chosen = order[i];
      int rejected = order[n - m + j];
      if (reward_keys(chosen) == reward_keys(rejected)) continue;  // no real preference
      PreferencePair p;
      p.chosen_index = chosen;
      p.rejected_index = rejected;
      p.chosen_seed = scored[chosen].seed;
      p.rejected_seed = scored[rejected].seed;
      p.gap = scored[chosen].r_gcpg - scored[rejected].r_gcpg;
      pairs.push_back(p);
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

std::string kind_to_string(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::kTargetDistance: return "target-distance";
    case ConstraintKind::kCollisionClearance: return "collision-clearance";
    case ConstraintKind::kApproachDirection: return "approach-direction";
    case ConstraintKind::kPathSteps: return "path-steps";
  }
  return "?";
}

ConstraintKind kind_from_string(const std::string& s) {
  if (s == "target-distance") return ConstraintKind::kTargetDistance;
  if (s == "collision-clearance") return ConstraintKind::kCollisionClearance;
  if (s == "approach-direction") return ConstraintKind::kApproachDirection;
  if (s == "path-steps") return ConstraintKind::kPathSteps;
  throw ConfigError(format_str("unknown constraint kind '%s'", s.c_str()));
}

std::string keypoint_to_string(KeypointRef k) {
  switch (k) {
    case KeypointRef::kObject: return "object";
    case KeypointRef::kTarget: return "target";
    case KeypointRef::kObstacles: return "obstacles";
  }
  return "?";
}

KeypointRef keypoint_from_string(const std::string& s) {
  if (s == "object") return KeypointRef::kObject;
  if (s == "target") return KeypointRef::kTarget;
  if (s == "obstacles") return KeypointRef::kObstacles;
  throw ConfigError(format_str("unknown keypoint selector '%s'", s.c_str()));
}

json constraint_to_json(const ConstraintDef& c) {
  return {{"kind", kind_to_string(c.kind)},
          {"keypoint", keypoint_to_string(c.keypoint)},
          {"threshold", c.threshold},
          {"weight", c.weight},
          {"step_size", c.step_size}};
}

ConstraintDef constraint_from_json(const json& j) {
  ConstraintDef c;
  c.kind = kind_from_string(j.at("kind").get<std::string>());
  c.keypoint = keypoint_from_string(j.at("keypoint").get<std::string>());
  c.threshold = j.value("threshold", 0.1);
  c.weight = j.value("weight", 1.0);
  c.step_size = j.value("step_size", 0.01);
  return c;
}

}  // namespace

void validate_cost_spec(const CostSpec& spec) {
  std::vector<std::string> problems;
  if (spec.lambdas.self < 0.0 || spec.lambdas.ext < 0.0 || spec.lambdas.success < 0.0) {
    problems.push_back("lambdas must be >= 0");
  }
  for (StageLabel label : {StageLabel::kReach, StageLabel::kTransport, StageLabel::kPlace}) {
    auto it = spec.stages.find(label);
    if (it == spec.stages.end()) {
      problems.push_back(format_str("missing stage entry '%s'", to_string(label).c_str()));
      continue;
    }
    for (const ConstraintDef& c : it->second) {
      if (c.weight < 0.0) problems.push_back("constraint weight must be >= 0");
      if (c.kind == ConstraintKind::kCollisionClearance && c.threshold <= 0.0) {
        problems.push_back("collision-clearance threshold must be > 0");
      }
      if (c.kind == ConstraintKind::kPathSteps && c.step_size <= 0.0) {
        problems.push_back("path-steps step_size must be > 0");
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid cost spec:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

std::string cost_spec_to_json(const CostSpec& spec) {
  json stages;
  for (const auto& [label, defs] : spec.stages) {
    json arr = json::array();
    for (const ConstraintDef& c : defs) arr.push_back(constraint_to_json(c));
    stages[to_string(label)] = std::move(arr);
  }
  json j{{"objective", spec.objective},
         {"lambdas", {{"l1", spec.lambdas.self}, {"l2", spec.lambdas.ext}, {"l3", spec.lambdas.success}}},
         {"stages", stages}};
  return j.dump(2);
}

CostSpec cost_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(format_str("cost spec json: %s", e.what()));
  }
  CostSpec spec;
  spec.objective = j.value("objective", "custom");
  if (j.contains("lambdas")) {
    spec.lambdas.self = j["lambdas"].value("l1", 0.01);
    spec.lambdas.ext = j["lambdas"].value("l2", 0.01);
    spec.lambdas.success = j["lambdas"].value("l3", 2.0);
  }
  for (const auto& [key, arr] : j.at("stages").items()) {
    StageLabel label = stage_label_from_string(key);
    std::vector<ConstraintDef> defs;
    for (const json& c : arr) defs.push_back(constraint_from_json(c));
    spec.stages[label] = std::move(defs);
  }
  validate_cost_spec(spec);
  return spec;
}

void save_cost_spec(const std::string& path, const CostSpec& spec) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write cost spec: %s", path.c_str()));
  f << cost_spec_to_json(spec) << "\n";
}

CostSpec load_cost_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot read cost spec: %s", path.c_str()));
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return cost_spec_from_json(text);
}

CostSpec preset_cost_spec(const std::string& objective) {
  CostSpec spec;
  spec.objective = objective;
  auto td = [](KeypointRef ref, double w) {
    ConstraintDef c;
    c.kind = ConstraintKind::kTargetDistance;
    c.keypoint = ref;
    c.weight = w;
    return c;
  };
  auto clearance = [](double tau, double w) {
    ConstraintDef c;
    c.kind = ConstraintKind::kCollisionClearance;
    c.keypoint = KeypointRef::kObstacles;
    c.threshold = tau;
    c.weight = w;
    return c;
  };
  auto path = [](double w) {
    ConstraintDef c;
    c.kind = ConstraintKind::kPathSteps;
    c.keypoint = KeypointRef::kTarget;
    c.weight = w;
    c.step_size = 0.01;
    return c;
  };
  if (objective == "task-completion") {
    spec.lambdas = {0.01, 0.01, 2.0};
    spec.stages[StageLabel::kReach] = {td(KeypointRef::kObject, 1.0)};
    spec.stages[StageLabel::kTransport] = {td(KeypointRef::kTarget, 1.0)};
    spec.stages[StageLabel::kPlace] = {td(KeypointRef::kTarget, 1.0)};
  } else if (objective == "safety") {
    // Clearance dominates; external reward upweighted so clean trajectories
    // outrank near misses in the ranking.
    spec.lambdas = {0.01, 1.0, 2.0};
    spec.stages[StageLabel::kReach] = {td(KeypointRef::kObject, 0.5), clearance(0.12, 1.0)};
    spec.stages[StageLabel::kTransport] = {td(KeypointRef::kTarget, 0.5), clearance(0.12, 1.0)};
    spec.stages[StageLabel::kPlace] = {td(KeypointRef::kTarget, 0.5), clearance(0.12, 1.0)};
  } else if (objective == "efficiency") {
    spec.lambdas = {0.01, 1.0, 2.0};
    spec.stages[StageLabel::kReach] = {td(KeypointRef::kObject, 0.5), path(0.02)};
    spec.stages[StageLabel::kTransport] = {td(KeypointRef::kTarget, 0.5), path(0.02)};
    spec.stages[StageLabel::kPlace] = {td(KeypointRef::kTarget, 0.5), path(0.02)};
  } else {
    throw ConfigError(format_str("unknown cost spec preset '%s'", objective.c_str()));
  }
  validate_cost_spec(spec);
  return spec;
}

std::vector<std::string> preset_names() { return {"task-completion", "safety", "efficiency"}; }

}  // namespace trajalign::gcpg
