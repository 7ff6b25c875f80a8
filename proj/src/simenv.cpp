#include "trajalign/simenv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace trajalign::simenv {

namespace {

constexpr double kSqrtHalf = 0.7071067811865476;

// Clearance the expert keeps to obstacle surfaces while steering.
constexpr double kExpertClearance = 0.03;
// The expert toggles its grip well inside the hard thresholds so that
// policies cloned from it keep succeeding despite fuzzier boundaries.
constexpr double kExpertGraspDist = 0.015;

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

double surface_distance(Vec2 p, const Disc& d) { return dist(p, d.center) - d.radius; }

bool inside_any_obstacle(Vec2 p, const std::vector<Disc>& obstacles, double margin) {
  for (const Disc& d : obstacles) {
    if (dist(p, d.center) < d.radius + margin) return true;
  }
  return false;
}

Vec2 rotate(Vec2 v, double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

}  // namespace

Vec2 move_direction(int move_index) {
  switch (move_index) {
    case 0: return {0.0, 0.0};
    case 1: return {1.0, 0.0};                 // E
    case 2: return {kSqrtHalf, kSqrtHalf};     // NE
    case 3: return {0.0, 1.0};                 // N
    case 4: return {-kSqrtHalf, kSqrtHalf};    // NW
    case 5: return {-1.0, 0.0};                // W
    case 6: return {-kSqrtHalf, -kSqrtHalf};   // SW
    case 7: return {0.0, -1.0};                // S
    case 8: return {kSqrtHalf, -kSqrtHalf};    // SE
    default: throw UsageError(format_str("move index %d out of range", move_index));
  }
}

void validate_task(const Task& task) {
  std::vector<std::string> problems;
  if (task.id.empty()) problems.push_back("empty task id");
  if (task.instruction_slot < 0 || task.instruction_slot >= kInstructionSlots) {
    problems.push_back(format_str("instruction slot %d outside [0, %d)", task.instruction_slot,
                                  kInstructionSlots));
  }
  auto in_unit = [](Vec2 p) { return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0; };
  if (!in_unit(task.start)) problems.push_back("start pose outside workspace");
  if (!in_unit(task.object)) problems.push_back("object position outside workspace");
  if (!in_unit(task.target_center)) problems.push_back("target center outside workspace");
  if (task.object_radius < 0.0) problems.push_back("negative object radius");
  if (task.target_radius <= 0.0) problems.push_back("non-positive target radius");
  for (const Disc& o : task.obstacles) {
    if (dist(task.target_center, o.center) < task.target_radius + o.radius) {
      problems.push_back(format_str("target region overlaps obstacle at (%.3f, %.3f)", o.center.x,
                                    o.center.y));
    }
    if (dist(task.object, o.center) < task.object_radius + o.radius) {
      problems.push_back(format_str("initial object overlaps obstacle at (%.3f, %.3f)", o.center.x,
                                    o.center.y));
    }
  }
  // Object starting inside the target would declare success before any
  // grasp; keep the event structure well-founded.
  if (dist(task.object, task.target_center) <= task.target_radius) {
    problems.push_back("initial object position already inside target region");
  }
  if (!problems.empty()) {
    std::string msg = "invalid task '" + task.id + "':";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

WorkspaceState reset(const Task& task, std::uint64_t seed, double jitter) {
  WorkspaceState s;
  Rng rng(derive_seed(seed, "reset-jitter"));
  double jx = jitter > 0.0 ? rng.uniform(-jitter, jitter) : 0.0;
  double jy = jitter > 0.0 ? rng.uniform(-jitter, jitter) : 0.0;
  s.gripper = {clamp01(task.start.x + jx), clamp01(task.start.y + jy)};
  s.grip_closed = false;
  s.object = task.object;
  s.held = false;
  s.obstacles = task.obstacles;
  s.object_radius = task.object_radius;
  s.t = 0;
  return s;
}

StepEvent step(WorkspaceState& state, const Task& task, int action) {
  if (action < 0 || action >= kNumActions) {
    throw UsageError(format_str("action token %d outside [0, %d)", action, kNumActions));
  }
  StepEvent ev;
  Vec2 dir = move_direction(action_move(action));
  state.gripper.x = clamp01(state.gripper.x + kStepDelta * dir.x);
  state.gripper.y = clamp01(state.gripper.y + kStepDelta * dir.y);
  if (state.held) state.object = state.gripper;

  if (action_grip(action) == 1) {
    bool was_closed = state.grip_closed;
    state.grip_closed = !state.grip_closed;
    if (!was_closed) {
      // Closed the grip: grasp when within reach.
      if (!state.held && dist(state.gripper, state.object) <= kGraspRadius) {
        state.held = true;
        state.object = state.gripper;
        ev.grasp = true;
      }
    } else if (state.held) {
      state.held = false;
      ev.release = true;
    }
  }

  bool gripper_hit = inside_any_obstacle(state.gripper, state.obstacles, 0.0);
  bool object_hit = state.held && inside_any_obstacle(state.object, state.obstacles, state.object_radius);
  ev.collision = gripper_hit || object_hit;

  ev.success = !state.grip_closed && dist(state.object, task.target_center) <= task.target_radius;
  state.t += 1;
  return ev;
}

std::vector<double> observe(const WorkspaceState& state, const Task& task) {
  std::vector<double> obs(kObsDim, 0.0);
  obs[0] = state.gripper.x;
  obs[1] = state.gripper.y;
  obs[2] = state.grip_closed ? 1.0 : 0.0;
  obs[3] = state.object.x;
  obs[4] = state.object.y;
  obs[5] = state.held ? 1.0 : 0.0;
  obs[6] = task.target_center.x;
  obs[7] = task.target_center.y;
  if (state.obstacles.empty()) {
    obs[8] = 0.0;
    obs[9] = 0.0;
    obs[10] = kNoObstacleSentinel;
  } else {
    const Disc* nearest = &state.obstacles[0];
    double best = surface_distance(state.gripper, state.obstacles[0]);
    for (const Disc& d : state.obstacles) {
      double sd = surface_distance(state.gripper, d);
      if (sd < best) {
        best = sd;
        nearest = &d;
      }
    }
    obs[8] = nearest->center.x - state.gripper.x;
    obs[9] = nearest->center.y - state.gripper.y;
    obs[10] = best;
  }
  obs[11 + task.instruction_slot] = 1.0;
  return obs;
}

namespace {

// Steers around the first obstacle whose inflated disc blocks the segment
// from -> to. Returns the adjusted waypoint (a tangent point pushed just
// outside the inflated disc) or `to` when the ray is clear.
Vec2 steer_waypoint(Vec2 from, Vec2 to, const std::vector<Disc>& obstacles, double inflate) {
  const Disc* blocker = nullptr;
  double best_t = 2.0;
  Vec2 d = to - from;
  double len2 = dot(d, d);
  if (len2 <= 0.0) return to;
  for (const Disc& o : obstacles) {
    double radius = o.radius + inflate;
    if (dist(to, o.center) < radius) continue;  // destination hugs the disc; head straight
    double t = std::clamp(dot(o.center - from, d) / len2, 0.0, 1.0);
    Vec2 closest = from + t * d;
    if (dist(closest, o.center) < radius && t > 0.0 && t < best_t) {
      best_t = t;
      blocker = &o;
    }
  }
  if (blocker == nullptr) return to;

  double radius = blocker->radius + inflate;
  Vec2 v = from - blocker->center;
  double dc = norm(v);
  if (dc < radius + 0.01) {
    // Hugging (or inside) the inflated ring: tangent points degenerate onto
    // the current position, so walk around the circumference instead,
    // toward the side the destination lies on.
    Vec2 u = dc > 1e-9 ? (1.0 / dc) * v : Vec2{1.0, 0.0};
    Vec2 w = to - blocker->center;
    double cross = v.x * w.y - v.y * w.x;
    double sign = cross >= 0.0 ? 1.0 : -1.0;
    return blocker->center + (radius + 0.015) * rotate(u, sign * 0.35);
  }
  double alpha = std::acos(std::clamp(radius / dc, -1.0, 1.0));
  Vec2 unit = (1.0 / dc) * v;
  Vec2 t1 = blocker->center + (radius + 0.01) * rotate(unit, alpha);
  Vec2 t2 = blocker->center + (radius + 0.01) * rotate(unit, -alpha);
  double cost1 = dist(from, t1) + dist(t1, to);
  double cost2 = dist(from, t2) + dist(t2, to);
  return cost1 <= cost2 ? t1 : t2;
}

// Compass move minimizing distance to the waypoint among collision-free
// landings. Ties resolve to the lowest move index. If everything collides
// (should not happen from a valid state) take the landing with the most
// clearance.
int best_move_toward(const WorkspaceState& state, Vec2 waypoint) {
  double margin = state.held ? state.object_radius : 0.0;
  int best_move = 0;
  double best_cost = dist(state.gripper, waypoint);
  bool any_free = true;
  int safest_move = 0;
  double safest_clearance = -1e9;
  for (int m = 1; m < kNumMoves; ++m) {
    Vec2 dir = move_direction(m);
    Vec2 pos{clamp01(state.gripper.x + kStepDelta * dir.x),
             clamp01(state.gripper.y + kStepDelta * dir.y)};
    double clearance = 1e9;
    for (const Disc& d : state.obstacles) {
      clearance = std::min(clearance, dist(pos, d.center) - d.radius - margin);
    }
    if (clearance > safest_clearance) {
      safest_clearance = clearance;
      safest_move = m;
    }
    if (clearance <= 1e-9) continue;
    double cost = dist(pos, waypoint);
    if (cost < best_cost) {
      best_cost = cost;
      best_move = m;
    }
  }
  double here = 1e9;
  for (const Disc& d : state.obstacles) {
    here = std::min(here, dist(state.gripper, d.center) - d.radius - margin);
  }
  any_free = here > 0.0;
  if (!any_free && best_move == 0) return safest_move;  // escape an overlap
  return best_move;
}

}  // namespace

ExpertPhase expert_phase(const WorkspaceState& state, const Task& task) {
  if (state.held) return ExpertPhase::kTransport;
  if (!state.grip_closed && dist(state.object, task.target_center) <= task.target_radius) {
    return ExpertPhase::kPlace;
  }
  return ExpertPhase::kReach;
}

int scripted_expert(const WorkspaceState& state, const Task& task) {
  if (!state.held) {
    if (state.grip_closed) {
      // A closed but empty grip blocks grasping; reopen.
      return action_token(0, 1);
    }
    if (dist(state.gripper, state.object) <= kExpertGraspDist) {
      return action_token(0, 1);  // grasp
    }
    Vec2 wp = steer_waypoint(state.gripper, state.object, state.obstacles, kExpertClearance);
    return action_token(best_move_toward(state, wp), 0);
  }
  double release_dist = std::max(task.target_radius - 0.03, 0.4 * task.target_radius);
  if (dist(state.object, task.target_center) <= release_dist) {
    return action_token(0, 1);  // release
  }
  Vec2 wp = steer_waypoint(state.gripper, task.target_center, state.obstacles,
                           kExpertClearance + state.object_radius);
  return action_token(best_move_toward(state, wp), 0);
}

Trajectory rollout_with(const ActionFn& act, const Task& task, std::uint64_t seed, int t_max,
                        double jitter) {
  if (t_max < 1) throw UsageError("rollout: t_max must be >= 1");
  Trajectory traj;
  traj.task_id = task.id;
  traj.seed = seed;
  WorkspaceState state = reset(task, seed, jitter);
  Rng rng(derive_seed(seed, "actions"));
  for (int t = 0; t < t_max; ++t) {
    TrajStep rec;
    rec.obs = observe(state, task);
    rec.action = act(rec.obs, rng);
    rec.events = step(state, task, rec.action);
    bool done = rec.events.success;
    traj.steps.push_back(std::move(rec));
    if (done) {
      traj.status = Status::kSuccess;
      return traj;
    }
  }
  traj.status = Status::kTimeout;
  return traj;
}

Trajectory expert_rollout(const Task& task, std::uint64_t seed, int t_max, double jitter) {
  if (t_max < 1) throw UsageError("expert_rollout: t_max must be >= 1");
  Trajectory traj;
  traj.task_id = task.id;
  traj.seed = seed;
  WorkspaceState state = reset(task, seed, jitter);
  for (int t = 0; t < t_max; ++t) {
    TrajStep rec;
    rec.obs = observe(state, task);
    rec.action = scripted_expert(state, task);
    rec.events = step(state, task, rec.action);
    bool done = rec.events.success;
    traj.steps.push_back(std::move(rec));
    if (done) {
      traj.status = Status::kSuccess;
      return traj;
    }
  }
  traj.status = Status::kTimeout;
  return traj;
}

// ---------------------------------------------------------------------------

namespace {

Task make_task(std::string id, std::string instruction, int slot, Vec2 start, Vec2 object,
               double object_radius, Vec2 target, double target_radius, std::vector<Disc> obstacles) {
  Task t;
  t.id = std::move(id);
  t.instruction = std::move(instruction);
  t.instruction_slot = slot;
  t.start = start;
  t.object = object;
  t.object_radius = object_radius;
  t.target_center = target;
  t.target_radius = target_radius;
  t.obstacles = std::move(obstacles);
  validate_task(t);
  return t;
}

std::vector<Task> base_layouts() {
  std::vector<Task> tasks;
  tasks.push_back(make_task("free", "move the puck to the corner zone", 0, {0.10, 0.10},
                            {0.30, 0.30}, 0.02, {0.85, 0.85}, 0.08, {}));
  tasks.push_back(make_task("blocked_middle", "carry the puck past the pillar", 1, {0.10, 0.50},
                            {0.30, 0.50}, 0.02, {0.85, 0.50}, 0.08, {{{0.55, 0.50}, 0.10}}));
  tasks.push_back(make_task("corridor", "take the puck through the corridor", 2, {0.50, 0.10},
                            {0.50, 0.25}, 0.02, {0.50, 0.85}, 0.07,
                            {{{0.30, 0.55}, 0.08}, {{0.72, 0.52}, 0.08}}));
  tasks.push_back(make_task("corner", "bring the puck to the opposite corner", 3, {0.85, 0.10},
                            {0.70, 0.20}, 0.02, {0.20, 0.80}, 0.08, {{{0.45, 0.50}, 0.09}}));
  return tasks;
}

}  // namespace

TaskSuite default_task_suite() {
  return {"in_domain", base_layouts()};
}

TaskSuite subject_task_suite() {
  TaskSuite s{"subject", base_layouts()};
  // Shifted object / target placements, same obstacles and instructions.
  s.tasks[0].id = "free_s";
  s.tasks[0].object = {0.26, 0.34};
  s.tasks[0].target_center = {0.81, 0.82};
  s.tasks[1].id = "blocked_middle_s";
  s.tasks[1].object = {0.29, 0.46};
  s.tasks[1].target_center = {0.83, 0.54};
  s.tasks[2].id = "corridor_s";
  s.tasks[2].object = {0.47, 0.22};
  s.tasks[2].target_center = {0.53, 0.86};
  s.tasks[3].id = "corner_s";
  s.tasks[3].object = {0.73, 0.25};
  s.tasks[3].target_center = {0.22, 0.76};
  for (Task& t : s.tasks) validate_task(t);
  return s;
}

TaskSuite physical_task_suite() {
  TaskSuite s{"physical", base_layouts()};
  const double radii[4] = {0.01, 0.04, 0.04, 0.01};
  for (int i = 0; i < 4; ++i) {
    s.tasks[i].id += "_p";
    s.tasks[i].object_radius = radii[i];
    validate_task(s.tasks[i]);
  }
  return s;
}

TaskSuite semantic_task_suite() {
  TaskSuite s{"semantic", base_layouts()};
  const char* reworded[4] = {
      "slide the disc over to the corner area",
      "get the disc to the far side of the pillar",
      "thread the disc between the blocks",
      "deliver the disc to the other corner",
  };
  for (int i = 0; i < 4; ++i) {
    s.tasks[i].id += "_m";
    s.tasks[i].instruction = reworded[i];
    s.tasks[i].instruction_slot = 4 + i;  // unseen one-hot slots
    validate_task(s.tasks[i]);
  }
  return s;
}

std::optional<TaskSuite> builtin_task_suite(const std::string& name) {
  if (name == "in_domain" || name == "default") return default_task_suite();
  if (name == "subject") return subject_task_suite();
  if (name == "physical") return physical_task_suite();
  if (name == "semantic") return semantic_task_suite();
  return std::nullopt;
}

std::vector<std::string> builtin_suite_names() {
  return {"in_domain", "subject", "physical", "semantic"};
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json task_to_json(const Task& t) {
  json obstacles = json::array();
  for (const Disc& o : t.obstacles) {
    obstacles.push_back({{"center", {o.center.x, o.center.y}}, {"radius", o.radius}});
  }
  return {{"id", t.id},
          {"instruction", t.instruction},
          {"slot", t.instruction_slot},
          {"start", {t.start.x, t.start.y}},
          {"object", {t.object.x, t.object.y}},
          {"object_radius", t.object_radius},
          {"target", {{"center", {t.target_center.x, t.target_center.y}}, {"radius", t.target_radius}}},
          {"obstacles", obstacles}};
}

Task task_from_json(const json& j) {
  Task t;
  t.id = j.at("id").get<std::string>();
  t.instruction = j.at("instruction").get<std::string>();
  t.instruction_slot = j.at("slot").get<int>();
  t.start = {j.at("start")[0].get<double>(), j.at("start")[1].get<double>()};
  t.object = {j.at("object")[0].get<double>(), j.at("object")[1].get<double>()};
  t.object_radius = j.at("object_radius").get<double>();
  t.target_center = {j.at("target").at("center")[0].get<double>(),
                     j.at("target").at("center")[1].get<double>()};
  t.target_radius = j.at("target").at("radius").get<double>();
  for (const json& o : j.at("obstacles")) {
    t.obstacles.push_back(
        {{o.at("center")[0].get<double>(), o.at("center")[1].get<double>()}, o.at("radius").get<double>()});
  }
  validate_task(t);
  return t;
}

}  // namespace

std::string suite_to_json(const TaskSuite& suite) {
  json tasks = json::array();
  for (const Task& t : suite.tasks) tasks.push_back(task_to_json(t));
  json j{{"name", suite.name}, {"tasks", tasks}};
  return j.dump(2);
}

TaskSuite suite_from_json(const std::string& text, const std::string& name) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(format_str("task suite json: %s", e.what()));
  }
  TaskSuite s;
  s.name = j.value("name", name);
  for (const json& t : j.at("tasks")) s.tasks.push_back(task_from_json(t));
  if (s.tasks.empty()) throw ConfigError("task suite has no tasks");
  return s;
}

void save_suite(const std::string& path, const TaskSuite& suite) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write task suite: %s", path.c_str()));
  f << suite_to_json(suite) << "\n";
}

TaskSuite load_suite(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot read task suite: %s", path.c_str()));
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return suite_from_json(text, path);
}

const Task& find_task(const TaskSuite& suite, const std::string& id) {
  for (const Task& t : suite.tasks) {
    if (t.id == id) return t;
  }
  throw UsageError(format_str("task id '%s' not found in suite '%s'", id.c_str(), suite.name.c_str()));
}

}  // namespace trajalign::simenv
