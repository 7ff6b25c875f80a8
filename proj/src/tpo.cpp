#include "trajalign/tpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace trajalign::tpo {

using numgrad::DenseMatrix;
using numgrad::MlpNodes;
using numgrad::Tape;

namespace {

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double clamp_ratio(double r) {
  if (std::abs(r) > kRatioClamp) {
    log_warn(format_str("trajectory log-ratio %.3g clamped to +-%g", r, kRatioClamp));
    return std::clamp(r, -kRatioClamp, kRatioClamp);
  }
  return r;
}

void validate_batch(std::span<const TpoPair> pairs, double beta) {
  if (pairs.empty()) throw UsageError("preference batch is empty");
  if (beta <= 0.0) throw UsageError("beta must be > 0");
  for (const TpoPair& p : pairs) {
    if (p.chosen == nullptr || p.rejected == nullptr) throw UsageError("null trajectory in pair");
    if (p.chosen->steps.empty() || p.rejected->steps.empty()) {
      throw UsageError("empty trajectory in pair");
    }
  }
}

// Taped sum of log pi_theta(a_t | o_t) over a trajectory.
int taped_logprob(Tape& tape, const MlpNodes& nodes, const Trajectory& traj) {
  std::vector<int> steps;
  steps.reserve(traj.steps.size());
  for (const simenv::TrajStep& s : traj.steps) {
    int logits = numgrad::forward_logits_node(tape, nodes, s.obs);
    steps.push_back(tape.gather(tape.log_softmax(logits), s.action));
  }
  return tape.sum(steps);
}

}  // namespace

double trajectory_log_ratio(const PolicyParams& theta, const PolicyParams& ref,
                            const Trajectory& traj) {
  return policy::trajectory_logprob(theta, traj) - policy::trajectory_logprob(ref, traj);
}

double tpo_loss(const PolicyParams& theta, const PolicyParams& ref, std::span<const TpoPair> pairs,
                double beta) {
  validate_batch(pairs, beta);
  double total = 0.0;
  for (const TpoPair& p : pairs) {
    double rw = clamp_ratio(trajectory_log_ratio(theta, ref, *p.chosen));
    double rl = clamp_ratio(trajectory_log_ratio(theta, ref, *p.rejected));
    total += stable_softplus(-beta * (rw - rl));
  }
  return total / static_cast<double>(pairs.size());
}

LossAndGrad tpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                     std::span<const TpoPair> pairs, double beta) {
  validate_batch(pairs, beta);
  Tape tape;
  MlpNodes nodes = numgrad::register_params(tape, theta.net);
  std::vector<int> pair_losses;
  pair_losses.reserve(pairs.size());
  for (const TpoPair& p : pairs) {
    double ref_w = policy::trajectory_logprob(ref, *p.chosen);
    double ref_l = policy::trajectory_logprob(ref, *p.rejected);
    int ratio_w = tape.clamp(tape.sub(taped_logprob(tape, nodes, *p.chosen), tape.input_scalar(ref_w)),
                             -kRatioClamp, kRatioClamp);
    int ratio_l = tape.clamp(
        tape.sub(taped_logprob(tape, nodes, *p.rejected), tape.input_scalar(ref_l)), -kRatioClamp,
        kRatioClamp);
    int margin = tape.sub(ratio_w, ratio_l);
    pair_losses.push_back(tape.softplus(tape.scale(margin, -beta)));
  }
  int loss = tape.scale(tape.sum(pair_losses), 1.0 / static_cast<double>(pairs.size()));
  LossAndGrad out;
  out.loss = tape.scalar(loss);
  out.grads = tape.grad_scalar(loss);
  return out;
}

double bt_probability(double r_w, double r_l) {
  if (!std::isfinite(r_w) || !std::isfinite(r_l)) throw UsageError("bt_probability: non-finite input");
  double x = r_w - r_l;
  if (x >= 0.0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

double stepdpo_loss(const PolicyParams& theta, const PolicyParams& ref,
                    std::span<const TpoPair> pairs, double beta) {
  validate_batch(pairs, beta);
  double total = 0.0;
  for (const TpoPair& p : pairs) {
    int aligned = std::min(p.chosen->length(), p.rejected->length());
    double pair_total = 0.0;
    for (int t = 0; t < aligned; ++t) {
      const simenv::TrajStep& sw = p.chosen->steps[t];
      const simenv::TrajStep& sl = p.rejected->steps[t];
      double mw = policy::action_logprobs(theta, sw.obs)[sw.action] -
                  policy::action_logprobs(ref, sw.obs)[sw.action];
      double ml = policy::action_logprobs(theta, sl.obs)[sl.action] -
                  policy::action_logprobs(ref, sl.obs)[sl.action];
      pair_total += stable_softplus(-beta * (mw - ml));
    }
    total += pair_total / static_cast<double>(aligned);
  }
  return total / static_cast<double>(pairs.size());
}

LossAndGrad stepdpo_grad(const PolicyParams& theta, const PolicyParams& ref,
                         std::span<const TpoPair> pairs, double beta) {
  validate_batch(pairs, beta);
  Tape tape;
  MlpNodes nodes = numgrad::register_params(tape, theta.net);
  std::vector<int> pair_losses;
  for (const TpoPair& p : pairs) {
    int aligned = std::min(p.chosen->length(), p.rejected->length());
    std::vector<int> step_losses;
    step_losses.reserve(aligned);
    for (int t = 0; t < aligned; ++t) {
      const simenv::TrajStep& sw = p.chosen->steps[t];
      const simenv::TrajStep& sl = p.rejected->steps[t];
      double ref_w = policy::action_logprobs(ref, sw.obs)[sw.action];
      double ref_l = policy::action_logprobs(ref, sl.obs)[sl.action];
      int lw = tape.gather(tape.log_softmax(numgrad::forward_logits_node(tape, nodes, sw.obs)),
                           sw.action);
      int ll = tape.gather(tape.log_softmax(numgrad::forward_logits_node(tape, nodes, sl.obs)),
                           sl.action);
      int mw = tape.sub(lw, tape.input_scalar(ref_w));
      int ml = tape.sub(ll, tape.input_scalar(ref_l));
      step_losses.push_back(tape.softplus(tape.scale(tape.sub(mw, ml), -beta)));
    }
    pair_losses.push_back(tape.scale(tape.sum(step_losses), 1.0 / static_cast<double>(aligned)));
  }
  int loss = tape.scale(tape.sum(pair_losses), 1.0 / static_cast<double>(pairs.size()));
  LossAndGrad out;
  out.loss = tape.scalar(loss);
  out.grads = tape.grad_scalar(loss);
  return out;
}

std::vector<MarginRow> margin_report(const PolicyParams& theta, const PolicyParams& ref,
                                     std::span<const TpoPair> pairs, double beta) {
  validate_batch(pairs, beta);
  std::vector<MarginRow> rows;
  rows.reserve(pairs.size());
  for (const TpoPair& p : pairs) {
    MarginRow r;
    r.task_id = p.chosen->task_id;
    r.ratio_w = clamp_ratio(trajectory_log_ratio(theta, ref, *p.chosen));
    r.ratio_l = clamp_ratio(trajectory_log_ratio(theta, ref, *p.rejected));
    r.margin = r.ratio_w - r.ratio_l;
    r.loss = stable_softplus(-beta * r.margin);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_margin_csv(const std::string& path, std::span<const MarginRow> rows) {
  std::ofstream f(path);
  if (!f) throw MissingArtifact(format_str("cannot write margin report: %s", path.c_str()));
  f << "task_id,ratio_w,ratio_l,margin,loss\n";
  char buf[256];
  for (const MarginRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g\n", r.task_id.c_str(), r.ratio_w,
                  r.ratio_l, r.margin, r.loss);
    f << buf;
  }
}

}  // namespace trajalign::tpo
