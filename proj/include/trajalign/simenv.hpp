#pragma once

// Deterministic planar pick-and-place environment. Geometry is discs in the
// unit square; the gripper is a point that moves on an 8-compass grid and
// can toggle its grip to pick up / release the object.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trajalign/common.hpp"

namespace trajalign::simenv {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double c, Vec2 a) { return {c * a.x, c * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }
inline double dist(Vec2 a, Vec2 b) { return norm(a - b); }

struct Disc {
  Vec2 center;
  double radius = 0.0;
};

// Action tokens: token = move + 9 * grip with move 0 = stay and moves 1..8
// the compass directions E, NE, N, NW, W, SW, S, SE (unit vectors, scaled by
// kStepDelta), and grip 0 = keep, 1 = toggle.
inline constexpr int kNumMoves = 9;
inline constexpr int kNumActions = 18;
inline constexpr double kStepDelta = 0.02;
inline constexpr double kGraspRadius = 0.03;
inline constexpr double kStartJitter = 0.02;
inline constexpr int kInstructionSlots = 8;
inline constexpr int kObsDim = 11 + kInstructionSlots;
inline constexpr int kDefaultTMax = 100;
inline constexpr double kNoObstacleSentinel = 2.0;

Vec2 move_direction(int move_index);  // unit vector, {0,0} for stay
inline int action_token(int move, int grip) { return move + kNumMoves * grip; }
inline int action_move(int token) { return token % kNumMoves; }
inline int action_grip(int token) { return token / kNumMoves; }

struct Task {
  std::string id;
  std::string instruction;
  int instruction_slot = 0;  // one-hot slot in [0, kInstructionSlots)
  Vec2 start;                // nominal gripper start pose
  Vec2 object;               // initial object position
  double object_radius = 0.02;
  Vec2 target_center;
  double target_radius = 0.08;
  std::vector<Disc> obstacles;
};

// Throws ConfigError when the layout violates task invariants (target or
// initial object overlapping an obstacle, slot out of range, ...).
void validate_task(const Task& task);

struct WorkspaceState {
  Vec2 gripper;
  bool grip_closed = false;
  Vec2 object;
  bool held = false;
  std::vector<Disc> obstacles;
  double object_radius = 0.02;
  int t = 0;
};

struct StepEvent {
  bool grasp = false;
  bool release = false;
  bool collision = false;
  bool success = false;
  bool operator==(const StepEvent&) const = default;
};

struct TrajStep {
  std::vector<double> obs;
  int action = 0;
  StepEvent events;
  bool operator==(const TrajStep&) const = default;
};

enum class Status { kSuccess, kTimeout };

struct Trajectory {
  std::string task_id;
  std::uint64_t seed = 0;
  Status status = Status::kTimeout;
  std::vector<TrajStep> steps;

  int length() const { return static_cast<int>(steps.size()); }
  bool operator==(const Trajectory&) const = default;
};

// Gripper starts at the task start pose plus uniform +-kStartJitter noise
// per axis (seed-derived; jitter=0 disables).
WorkspaceState reset(const Task& task, std::uint64_t seed, double jitter = kStartJitter);

// One transition. The gripper moves by kStepDelta along the decoded compass
// direction (clamped to the unit square); a toggle-to-closed within
// kGraspRadius of the object grasps it; a toggle-to-open while holding
// releases it in place. Collision means the gripper point is inside an
// obstacle disc, or the held object disc overlaps one. Success means the
// object center is inside the target region with the grip open.
StepEvent step(WorkspaceState& state, const Task& task, int action);

// Observation layout, version 1:
//   [0..1]  gripper x, y
//   [2]     grip closed flag
//   [3..4]  object x, y
//   [5]     held flag
//   [6..7]  target center x, y
//   [8..10] nearest obstacle: center - gripper (dx, dy) and surface
//           distance; (0, 0, kNoObstacleSentinel) when no obstacles
//   [11..]  instruction one-hot over kInstructionSlots
std::vector<double> observe(const WorkspaceState& state, const Task& task);

// Greedy three-phase controller: approach the object, grasp, carry to the
// target, release. Detours around obstacles via tangent points when the
// direct ray is blocked. Pure function of (state, task).
int scripted_expert(const WorkspaceState& state, const Task& task);

enum class ExpertPhase { kReach, kTransport, kPlace };
ExpertPhase expert_phase(const WorkspaceState& state, const Task& task);

// Rolls out an arbitrary action source (policy wrappers live in policy.hpp).
using ActionFn = std::function<int(const std::vector<double>& obs, Rng& rng)>;
Trajectory rollout_with(const ActionFn& act, const Task& task, std::uint64_t seed,
                        int t_max = kDefaultTMax, double jitter = kStartJitter);

// Rollout driven by the scripted expert (demonstration generation).
Trajectory expert_rollout(const Task& task, std::uint64_t seed, int t_max = kDefaultTMax,
                          double jitter = kStartJitter);

// ---------------------------------------------------------------------------
// Bundled task suites.

struct TaskSuite {
  std::string name;
  std::vector<Task> tasks;
};

// In-domain layouts plus the three generalization variants: perturbed
// object/target positions, perturbed object radius, remapped instruction
// slots.
TaskSuite default_task_suite();      // "in_domain"
TaskSuite subject_task_suite();      // shifted layouts
TaskSuite physical_task_suite();     // object radius variants
TaskSuite semantic_task_suite();     // unseen instruction slots
std::optional<TaskSuite> builtin_task_suite(const std::string& name);
std::vector<std::string> builtin_suite_names();

// Task suite file: JSON list of task records.
std::string suite_to_json(const TaskSuite& suite);
TaskSuite suite_from_json(const std::string& text, const std::string& name);
void save_suite(const std::string& path, const TaskSuite& suite);
TaskSuite load_suite(const std::string& path);

const Task& find_task(const TaskSuite& suite, const std::string& id);

}  // namespace trajalign::simenv
