#pragma once

// Trajectory-wise preference loss over chosen/rejected pairs, its exact
// gradient, the Bradley-Terry pairwise probability, and the step-wise
// preference baseline.

#include <span>
#include <string>
#include <vector>

#include "trajalign/policy.hpp"

namespace trajalign::tpo {

using policy::PolicyParams;
using simenv::Trajectory;

struct TpoPair {
  const Trajectory* chosen = nullptr;
  const Trajectory* rejected = nullptr;
};

struct TpoBatch {
  std::vector<TpoPair> pairs;
  double beta = 0.1;
  const PolicyParams* ref = nullptr;  // frozen for the batch's lifetime
};

// Summed per-step log(pi_theta / pi_ref) along the trajectory.
double trajectory_log_ratio(const PolicyParams& theta, const PolicyParams& ref,
                            const Trajectory& traj);

// Per-trajectory log-ratios are clamped to +-kRatioClamp before the
// sigmoid; saturated policies can push them past double-exp range.
inline constexpr double kRatioClamp = 500.0;

// Mean over pairs of -ln sigma(beta * (ratio_w - ratio_l)).
double tpo_loss(const PolicyParams& theta, const PolicyParams& ref, std::span<const TpoPair> pairs,
                double beta);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<numgrad::DenseMatrix> grads;  // aligned with PolicyParams::tensors()
};

// Exact reverse-mode gradient of tpo_loss w.r.t. theta; ref receives none.
LossAndGrad tpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                     std::span<const TpoPair> pairs, double beta);

// exp(rw) / (exp(rw) + exp(rl)), evaluated stably as sigma(rw - rl).
double bt_probability(double r_w, double r_l);

// Step-wise baseline: pairs steps by index up to min(T_w, T_l) and averages
// the per-step preference loss.
double stepdpo_loss(const PolicyParams& theta, const PolicyParams& ref,
                    std::span<const TpoPair> pairs, double beta);
LossAndGrad stepdpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                         std::span<const TpoPair> pairs, double beta);

struct MarginRow {
  std::string task_id;
  double ratio_w = 0.0;
  double ratio_l = 0.0;
  double margin = 0.0;
  double loss = 0.0;
};

std::vector<MarginRow> margin_report(const PolicyParams& theta, const PolicyParams& ref,
                                     std::span<const TpoPair> pairs, double beta);
void write_margin_csv(const std::string& path, std::span<const MarginRow> rows);

}  // namespace trajalign::tpo
