#pragma once

// Categorical policy over action tokens, log-likelihood scoring, and the
// behavior-cloning (SFT) trainer.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajalign/numgrad.hpp"
#include "trajalign/simenv.hpp"

namespace trajalign::policy {

struct PolicyParams {
  numgrad::Mlp net;
  std::string provenance;  // "sft", "tpo-iter-3", ...

  std::vector<numgrad::DenseMatrix*> tensors() { return net.tensors(); }
  std::vector<const numgrad::DenseMatrix*> tensors() const { return net.tensors(); }
};

PolicyParams init_policy(int input_dim, int hidden, int actions, std::uint64_t seed);

// Log-softmax of the logits; exp of the entries sums to 1.
std::vector<double> action_logprobs(const PolicyParams& params, std::span<const double> obs);

// Inverse-CDF draw over the fixed token order.
int sample_action(const PolicyParams& params, std::span<const double> obs, Rng& rng);

// Argmax token, lowest index on ties.
int greedy_action(const PolicyParams& params, std::span<const double> obs);

// Sum over steps of log pi(a_t | o_t). Rejects empty trajectories.
double trajectory_logprob(const PolicyParams& params, const simenv::Trajectory& traj);

struct SftBatch {
  // (observation, expert action token) pairs.
  std::vector<std::pair<std::vector<double>, int>> items;
};

// One AdamW step on the mean negative log-likelihood of the expert tokens.
// Returns the pre-step loss.
double sft_update(PolicyParams& params, numgrad::OptState& state, const SftBatch& batch);

struct SftConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  int epochs = 10;
  int batch_size = 64;
  std::uint64_t shuffle_seed = 0;
};

// Epoch loop over demonstration steps with seeded shuffling. Returns the
// mean loss of each epoch.
std::vector<double> train_sft(PolicyParams& params, const std::vector<simenv::Trajectory>& demos,
                              const SftConfig& cfg);

// Spec rollout surface: samples from the policy (argmax when greedy).
simenv::Trajectory rollout(const PolicyParams& params, const simenv::Task& task, std::uint64_t seed,
                           int t_max = simenv::kDefaultTMax, bool greedy = false,
                           double jitter = simenv::kStartJitter);

void save_policy(const std::string& path, const PolicyParams& params);
PolicyParams load_policy(const std::string& path);

}  // namespace trajalign::policy
