#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "trajalign/policy.hpp"
#include "trajalign/simenv.hpp"

using namespace trajalign;
using policy::PolicyParams;

namespace {

constexpr double kLogUniform18 = -2.890371757896165;  // ln(1/18)

PolicyParams zero_policy() {
  PolicyParams p = policy::init_policy(simenv::kObsDim, 8, simenv::kNumActions, 1);
  for (numgrad::DenseMatrix* t : p.tensors()) {
    for (double& x : t->data) x = 0.0;
  }
  return p;
}

std::vector<double> some_obs(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> obs(simenv::kObsDim);
  for (double& x : obs) x = rng.uniform();
  return obs;
}

simenv::Trajectory synthetic_trajectory(int T, std::uint64_t seed) {
  simenv::Trajectory traj;
  traj.task_id = "synthetic";
  traj.seed = seed;
  Rng rng(seed);
  for (int t = 0; t < T; ++t) {
    simenv::TrajStep s;
    s.obs = some_obs(seed * 1000 + t);
    s.action = rng.uniform_int(simenv::kNumActions);
    traj.steps.push_back(std::move(s));
  }
  return traj;
}

}  // namespace

TEST_CASE("zero network gives the uniform log-probability") {
  PolicyParams p = zero_policy();
  std::vector<double> lp = policy::action_logprobs(p, some_obs(3));
  REQUIRE(static_cast<int>(lp.size()) == simenv::kNumActions);
  for (double x : lp) CHECK(x == doctest::Approx(kLogUniform18).epsilon(1e-12));
}

TEST_CASE("constant logits equal the zero network (shift invariance)") {
  PolicyParams p = zero_policy();
  for (double& x : p.net.b2.data) x = 1.0;
  std::vector<double> lp = policy::action_logprobs(p, some_obs(4));
  for (double x : lp) CHECK(x == doctest::Approx(kLogUniform18).epsilon(1e-12));
}

TEST_CASE("log-probabilities exponentiate to a distribution") {
  PolicyParams p = policy::init_policy(simenv::kObsDim, 16, simenv::kNumActions, 9);
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::vector<double> lp = policy::action_logprobs(p, some_obs(s));
    double total = 0.0;
    for (double x : lp) total += std::exp(x);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("adding a constant to output biases changes no log-probability") {
  PolicyParams p = policy::init_policy(simenv::kObsDim, 16, simenv::kNumActions, 10);
  PolicyParams q = p;
  for (double& x : q.net.b2.data) x += 3.7;
  std::vector<double> obs = some_obs(12);
  std::vector<double> lp = policy::action_logprobs(p, obs);
  std::vector<double> lq = policy::action_logprobs(q, obs);
  for (std::size_t i = 0; i < lp.size(); ++i) CHECK(lp[i] == doctest::Approx(lq[i]).epsilon(1e-12));

  simenv::Trajectory traj = synthetic_trajectory(5, 8);
  CHECK(policy::trajectory_logprob(p, traj) ==
        doctest::Approx(policy::trajectory_logprob(q, traj)).epsilon(1e-12));
}

TEST_CASE("a dominant logit is sampled essentially always") {
  PolicyParams p = zero_policy();
  p.net.b2.data[7] = 50.0;
  std::vector<double> obs = some_obs(5);
  Rng rng(77);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += policy::sample_action(p, obs, rng) == 7 ? 1 : 0;
  CHECK(static_cast<double>(hits) / 10000.0 > 0.999);
}

TEST_CASE("uniform policy sampling frequencies are near 1/18") {
  PolicyParams p = zero_policy();
  std::vector<double> obs = some_obs(6);
  Rng rng(123);
  std::vector<int> counts(simenv::kNumActions, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[policy::sample_action(p, obs, rng)]++;
  for (int a = 0; a < simenv::kNumActions; ++a) {
    double freq = static_cast<double>(counts[a]) / n;
    CHECK(std::abs(freq - 1.0 / 18.0) < 0.02);
  }
}

TEST_CASE("sampling is deterministic given the rng state") {
  PolicyParams p = policy::init_policy(simenv::kObsDim, 16, simenv::kNumActions, 14);
  std::vector<double> obs = some_obs(9);
  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) CHECK(policy::sample_action(p, obs, a) == policy::sample_action(p, obs, b));
}

TEST_CASE("uniform policy trajectory log-probability is T ln(1/18)") {
  PolicyParams p = zero_policy();
  simenv::Trajectory traj = synthetic_trajectory(4, 2);
  CHECK(policy::trajectory_logprob(p, traj) == doctest::Approx(-11.56148703158466).epsilon(1e-12));
}

TEST_CASE("empty trajectories are rejected") {
  PolicyParams p = zero_policy();
  simenv::Trajectory traj;
  CHECK_THROWS_AS(policy::trajectory_logprob(p, traj), UsageError);
}

TEST_CASE("trajectory log-probability decomposes into per-step terms") {
  PolicyParams p = policy::init_policy(simenv::kObsDim, 16, simenv::kNumActions, 33);
  simenv::Trajectory traj = synthetic_trajectory(6, 11);
  double total = policy::trajectory_logprob(p, traj);
  double by_steps = 0.0;
  for (const simenv::TrajStep& s : traj.steps) {
    by_steps += policy::action_logprobs(p, s.obs)[s.action];
  }
  CHECK(std::abs(total - by_steps) <= 1e-12);
}

TEST_CASE("sft loss on a uniform policy is ln 18") {
  PolicyParams p = zero_policy();
  numgrad::OptState st = numgrad::init_opt(
      {&p.net.w1, &p.net.b1, &p.net.w2, &p.net.b2}, numgrad::AdamWConfig{});
  policy::SftBatch batch;
  for (int i = 0; i < 5; ++i) batch.items.emplace_back(some_obs(i), i % simenv::kNumActions);
  double loss = policy::sft_update(p, st, batch);
  CHECK(loss == doctest::Approx(2.8903717578961645).epsilon(1e-12));
}

TEST_CASE("a confident correct policy has near-zero loss and moves little") {
  PolicyParams p = zero_policy();
  p.net.b2.data[3] = 50.0;
  numgrad::OptState st = numgrad::init_opt(
      {&p.net.w1, &p.net.b1, &p.net.w2, &p.net.b2}, numgrad::AdamWConfig{});
  policy::SftBatch batch;
  for (int i = 0; i < 4; ++i) batch.items.emplace_back(some_obs(i + 20), 3);
  PolicyParams before = p;
  double loss = policy::sft_update(p, st, batch);
  CHECK(loss < 1e-8);
  // Adam normalizes even microscopic gradients, but per-coordinate motion
  // stays within lr; just check nothing exploded.
  for (std::size_t i = 0; i < p.net.b2.data.size(); ++i) {
    CHECK(std::abs(p.net.b2.data[i] - before.net.b2.data[i]) <= 2e-3);
  }
}

TEST_CASE("200 sft steps on a fixed batch drive the loss down") {
  PolicyParams p = policy::init_policy(simenv::kObsDim, 32, simenv::kNumActions, 55);
  numgrad::AdamWConfig hp;
  hp.lr = 1e-3;
  numgrad::OptState st = numgrad::init_opt({&p.net.w1, &p.net.b1, &p.net.w2, &p.net.b2}, hp);

  // 50 (obs, action) pairs from expert rollouts: a separable toy set.
  simenv::TaskSuite suite = simenv::default_task_suite();
  policy::SftBatch batch;
  for (std::uint64_t s = 0; batch.items.size() < 50; ++s) {
    simenv::Trajectory demo = simenv::expert_rollout(suite.tasks[s % 4], s);
    for (const simenv::TrajStep& st2 : demo.steps) {
      if (batch.items.size() < 50) batch.items.emplace_back(st2.obs, st2.action);
    }
  }
  double first = policy::sft_update(p, st, batch);
  double last = first;
  for (int i = 0; i < 199; ++i) last = policy::sft_update(p, st, batch);
  CHECK(last < first);
  CHECK(last < std::log(18.0));
  CHECK(last < 0.5);
}

TEST_CASE("policy rollout is deterministic and obeys t_max") {
  simenv::Task task = simenv::default_task_suite().tasks[0];
  PolicyParams p = policy::init_policy(simenv::kObsDim, 16, simenv::kNumActions, 70);
  simenv::Trajectory a = policy::rollout(p, task, 5);
  simenv::Trajectory b = policy::rollout(p, task, 5);
  CHECK(a == b);
  CHECK(a.length() <= simenv::kDefaultTMax);
  simenv::Trajectory g1 = policy::rollout(p, task, 5, 40, true);
  simenv::Trajectory g2 = policy::rollout(p, task, 5, 40, true);
  CHECK(g1 == g2);
}

TEST_CASE("policy save/load round-trip preserves provenance and weights") {
  PolicyParams p = policy::init_policy(simenv::kObsDim, 8, simenv::kNumActions, 90);
  p.provenance = "tpo-iter-1";
  std::string path = (std::filesystem::temp_directory_path() / "trajalign_policy_test.json").string();
  policy::save_policy(path, p);
  PolicyParams q = policy::load_policy(path);
  CHECK(q.provenance == p.provenance);
  CHECK(q.net.w1.data == p.net.w1.data);
  CHECK(q.net.b2.data == p.net.b2.data);
  std::filesystem::remove(path);
}
