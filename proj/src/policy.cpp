#include "trajalign/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace trajalign::policy {

using numgrad::DenseMatrix;
using numgrad::Mlp;
using numgrad::Tape;

PolicyParams init_policy(int input_dim, int hidden, int actions, std::uint64_t seed) {
  PolicyParams p;
  p.net = numgrad::init_mlp({input_dim, hidden, actions}, seed);
  p.provenance = "init";
  return p;
}

namespace {

std::vector<double> log_softmax(std::vector<double> v) {
  double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  double lz = std::log(z);
  for (double& x : v) x = x - m - lz;
  return v;
}

}  // namespace

std::vector<double> action_logprobs(const PolicyParams& params, std::span<const double> obs) {
  return log_softmax(numgrad::forward_logits_value(params.net, obs));
}

int sample_action(const PolicyParams& params, std::span<const double> obs, Rng& rng) {
  std::vector<double> lp = action_logprobs(params, obs);
  double u = rng.uniform();
  double cdf = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    cdf += std::exp(lp[i]);
    if (u < cdf) return static_cast<int>(i);
  }
  return static_cast<int>(lp.size()) - 1;  // numeric fall-through
}

int greedy_action(const PolicyParams& params, std::span<const double> obs) {
  std::vector<double> logits = numgrad::forward_logits_value(params.net, obs);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double trajectory_logprob(const PolicyParams& params, const simenv::Trajectory& traj) {
  if (traj.steps.empty()) throw UsageError("trajectory_logprob: empty trajectory");
  double total = 0.0;
  for (const simenv::TrajStep& s : traj.steps) {
    if (s.action < 0 || s.action >= params.net.arch.actions) {
      throw UsageError(format_str("trajectory_logprob: action %d out of range", s.action));
    }
    total += action_logprobs(params, s.obs)[s.action];
  }
  return total;
}

double sft_update(PolicyParams& params, numgrad::OptState& state, const SftBatch& batch) {
  if (batch.items.empty()) throw UsageError("sft_update: empty batch");
  Tape tape;
  numgrad::MlpNodes nodes = numgrad::register_params(tape, params.net);
  std::vector<int> nlls;
  nlls.reserve(batch.items.size());
  for (const auto& [obs, action] : batch.items) {
    if (action < 0 || action >= params.net.arch.actions) {
      throw UsageError(format_str("sft_update: action token %d out of range", action));
    }
    int logits = numgrad::forward_logits_node(tape, nodes, obs);
    int lp = tape.gather(tape.log_softmax(logits), action);
    nlls.push_back(tape.scale(lp, -1.0));
  }
  int loss = tape.scale(tape.sum(nlls), 1.0 / static_cast<double>(nlls.size()));
  double loss_value = tape.scalar(loss);
  std::vector<DenseMatrix> grads = tape.grad_scalar(loss);
  numgrad::adamw_step(params.tensors(), grads, state);
  return loss_value;
}

std::vector<double> train_sft(PolicyParams& params, const std::vector<simenv::Trajectory>& demos,
                              const SftConfig& cfg) {
  std::vector<std::pair<std::vector<double>, int>> items;
  for (const simenv::Trajectory& d : demos) {
    for (const simenv::TrajStep& s : d.steps) items.emplace_back(s.obs, s.action);
  }
  if (items.empty()) throw UsageError("train_sft: no demonstration steps");
  numgrad::AdamWConfig hp;
  hp.lr = cfg.lr;
  hp.weight_decay = cfg.weight_decay;
  numgrad::OptState state = numgrad::init_opt(
      {&params.net.w1, &params.net.b1, &params.net.w2, &params.net.b2}, hp);

  std::vector<double> epoch_losses;
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  int batch_size = cfg.batch_size > 0 ? cfg.batch_size : static_cast<int>(items.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.shuffle_seed, "sft-shuffle", static_cast<std::uint64_t>(epoch)));
    // Fisher-Yates with our deterministic rng.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = rng.next_u64() % i;
      std::swap(order[i - 1], order[j]);
    }
    double total = 0.0;
    int batches = 0;
    for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
      SftBatch batch;
      for (std::size_t k = pos; k < std::min(order.size(), pos + batch_size); ++k) {
        batch.items.push_back(items[order[k]]);
      }
      total += sft_update(params, state, batch);
      batches += 1;
    }
    epoch_losses.push_back(total / batches);
  }
  params.provenance = "sft";
  return epoch_losses;
}

simenv::Trajectory rollout(const PolicyParams& params, const simenv::Task& task, std::uint64_t seed,
                           int t_max, bool greedy, double jitter) {
  simenv::ActionFn act;
  if (greedy) {
    act = [&params](const std::vector<double>& obs, Rng&) { return greedy_action(params, obs); };
  } else {
    act = [&params](const std::vector<double>& obs, Rng& rng) {
      return sample_action(params, obs, rng);
    };
  }
  return simenv::rollout_with(act, task, seed, t_max, jitter);
}

void save_policy(const std::string& path, const PolicyParams& params) {
  numgrad::save_model(path, params.net, params.provenance);
}

PolicyParams load_policy(const std::string& path) {
  numgrad::LoadedModel m = numgrad::load_model(path);
  return {std::move(m.net), std::move(m.provenance)};
}

}  // namespace trajalign::policy
