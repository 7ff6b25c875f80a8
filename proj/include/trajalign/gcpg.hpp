#pragma once

// Guided-cost preference generation: stage decomposition of trajectories,
// keypoint cost evaluation, the three reward components and their weighted
// aggregate, and ranking into chosen/rejected pairs.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "trajalign/policy.hpp"
#include "trajalign/simenv.hpp"

namespace trajalign::gcpg {

enum class StageLabel { kReach, kTransport, kPlace };
std::string to_string(StageLabel label);
StageLabel stage_label_from_string(const std::string& s);

struct StageSpan {
  int begin = 0;
  int end = 0;  // [begin, end) over trajectory step indices
  StageLabel label = StageLabel::kReach;
};

// Keypoints resolved from ground-truth state: object center at stage start,
// target center, obstacle discs from the task.
struct Keypoints {
  simenv::Vec2 object;
  simenv::Vec2 target;
  std::vector<simenv::Disc> obstacles;
};

struct StageSegmentation {
  std::vector<StageSpan> spans;
  std::vector<Keypoints> keypoints;  // parallel to spans
};

// Boundaries fall at the first grasp event and the first release after it:
// reach / transport / place. Missing events collapse trailing stages; empty
// spans are dropped.
StageSegmentation decompose_stages(const simenv::Trajectory& traj, const simenv::Task& task);

enum class ConstraintKind { kTargetDistance, kCollisionClearance, kApproachDirection, kPathSteps };
enum class KeypointRef { kObject, kTarget, kObstacles };

struct ConstraintDef {
  ConstraintKind kind = ConstraintKind::kTargetDistance;
  KeypointRef keypoint = KeypointRef::kTarget;
  double threshold = 0.1;  // clearance threshold (workspace distance)
  double weight = 1.0;
  double step_size = 0.01;  // path-steps discretization
};

struct Lambdas {
  double self = 0.01;
  double ext = 0.01;
  double success = 2.0;
};

struct CostSpec {
  std::string objective;  // task-completion | safety | efficiency | custom
  Lambdas lambdas;
  std::map<StageLabel, std::vector<ConstraintDef>> stages;
};

void validate_cost_spec(const CostSpec& spec);

// Weighted sum of constraint values over one stage span. Conventions:
//  - "end of stage" is the observation at the span's end boundary, clamped
//    to the last recorded step (the terminal state is not stored);
//  - target-distance: gripper-to-keypoint distance at end of stage;
//  - collision-clearance: sum over in-span steps and obstacles of
//    max(0, threshold - surface distance);
//  - approach-direction: 0 when the gripper sits above the keypoint
//    (greater y) at end of stage, else 1;
//  - path-steps: floor(traversed gripper arc length / step_size).
double stage_cost(const simenv::Trajectory& traj, const StageSpan& span,
                  std::span<const ConstraintDef> constraints, const Keypoints& keypoints);

// Product over stages of exp(-cost); in (0, 1] for non-negative costs and
// strictly decreasing in every cost.
double external_reward(std::span<const double> stage_costs);

// Trajectory log-likelihood under the policy that sampled it.
double self_reward(const policy::PolicyParams& sampling_policy, const simenv::Trajectory& traj);

int success_indicator(const simenv::Trajectory& traj, const simenv::Task& task);

double gcpg_reward(double r_self, double r_ext, int i_success, const Lambdas& lambdas);

struct ScoredTrajectory {
  std::string task_id;
  std::uint64_t seed = 0;
  std::vector<double> stage_costs;
  double r_ext = 0.0;
  double r_self = 0.0;
  int i_success = 0;
  double r_gcpg = 0.0;
};

ScoredTrajectory score_trajectory(const simenv::Trajectory& traj, const simenv::Task& task,
                                  const CostSpec& spec, const policy::PolicyParams& sampling_policy);

struct PreferencePair {
  int chosen_index = 0;  // positions in the scored list handed to rank_and_pair
  int rejected_index = 0;
  std::uint64_t chosen_seed = 0;
  std::uint64_t rejected_seed = 0;
  double gap = 0.0;  // reward difference, > 0
};

// Sorts descending by (r_gcpg, r_ext, r_self), seed ascending as the final
// tie-break, then crosses the top-m with the bottom-m. Pairs whose reward
// keys are all equal are dropped.
std::vector<PreferencePair> rank_and_pair(std::span<const ScoredTrajectory> scored, int m);

// ---------------------------------------------------------------------------
// Cost spec files and presets.

std::string cost_spec_to_json(const CostSpec& spec);
CostSpec cost_spec_from_json(const std::string& text);
void save_cost_spec(const std::string& path, const CostSpec& spec);
CostSpec load_cost_spec(const std::string& path);

// task-completion: target-distance only, reference lambdas.
// safety: collision clearance emphasized (higher weight and threshold), no
//         path cost, external reward upweighted.
// efficiency: path-steps emphasized, no clearance cost, external reward
//         upweighted.
CostSpec preset_cost_spec(const std::string& objective);
std::vector<std::string> preset_names();

}  // namespace trajalign::gcpg
