#include <gtest/gtest.h>

#include <cmath>

#include "checks.hpp"
#include "poem/rollout.hpp"

using namespace poem;

namespace {

Transition step(double r, double v, bool terminated = false, bool truncated = false, double terminal_value = 0.0) {
  Transition t;
  t.obs = {0.0};
  t.action = {0.0};
  t.reward = r;
  t.value_old = v;
  t.terminated = terminated;
  t.truncated = truncated;
  t.terminal_value = terminal_value;
  return t;
}

// Terminates after a fixed number of steps with reward 1 per step.
class CountdownEnv final : public Env {
 public:
  explicit CountdownEnv(int length) : length_(length) {}
  std::string id() const override { return "countdown"; }
  int observation_dim() const override { return 1; }
  ActionSpace action_space() const override { return {}; }
  int max_episode_steps() const override { return 1000; }

 protected:
  std::vector<double> do_reset(std::uint64_t seed) override {
    left_ = length_;
    return {static_cast<double>(seed % 7)};
  }
  StepResult do_step(const Action&) override {
    --left_;
    StepResult r;
    r.obs = {static_cast<double>(left_)};
    r.reward = 1.0;
    r.terminated = left_ == 0;
    return r;
  }

 private:
  int length_;
  int left_ = 0;
};

}  // namespace

TEST(Gae, SingleTerminatedStep) {
  RolloutBatch b;
  b.transitions = {step(1.0, 0.5, true)};
  const auto out = compute_gae(b, 0.99, 0.95, false);
  EXPECT_DOUBLE_EQ(out.advantages[0], 0.5);
  EXPECT_DOUBLE_EQ(out.returns[0], 1.0);
}

TEST(Gae, ZeroGammaGivesRewardMinusValue) {
  RolloutBatch b;
  b.transitions = {step(1.0, 0.2), step(-2.0, 0.7), step(0.5, -1.0, false, true, 9.0), step(3.0, 1.0)};
  b.bootstrap_value = 4.0;
  const auto out = compute_gae(b, 0.0, 0.8, false);
  for (std::size_t t = 0; t < 4; ++t)
    EXPECT_DOUBLE_EQ(out.advantages[t], b.transitions[t].reward - b.transitions[t].value_old);
}

TEST(Gae, ZeroLambdaGivesOneStepTdError) {
  RolloutBatch b;
  b.transitions = {step(1.0, 0.2), step(-2.0, 0.7), step(0.5, -1.0, true), step(3.0, 1.0)};
  b.bootstrap_value = 4.0;
  const double g = 0.9;
  const auto out = compute_gae(b, g, 0.0, false);
  EXPECT_DOUBLE_EQ(out.advantages[0], 1.0 + g * 0.7 - 0.2);
  EXPECT_DOUBLE_EQ(out.advantages[1], -2.0 + g * -1.0 - 0.7);
  EXPECT_DOUBLE_EQ(out.advantages[2], 0.5 - -1.0);
  EXPECT_DOUBLE_EQ(out.advantages[3], 3.0 + g * 4.0 - 1.0);
}

TEST(Gae, LambdaOneEqualsDiscountedReturnMinusValue) {
  RolloutBatch b;
  const std::vector<double> r = {0.5, -1.0, 2.0, 0.0, 3.0}, v = {0.1, 0.4, -0.3, 0.8, 1.5};
  for (int t = 0; t < 5; ++t) b.transitions.push_back(step(r[t], v[t], t == 4));
  const auto out = compute_gae(b, 0.99, 1.0, false);
  for (int t = 0; t < 5; ++t) {
    double ret = 0.0, disc = 1.0;
    for (int k = t; k < 5; ++k, disc *= 0.99) ret += disc * r[k];
    EXPECT_NEAR(out.advantages[t], ret - v[t], 1e-12);
  }
}

TEST(Gae, TruncationBootstrapsWithFinalStateValue) {
  RolloutBatch b;
  b.transitions = {step(1.0, 0.0, false, true, 10.0), step(1.0, 0.0, true)};
  const auto out = compute_gae(b, 0.5, 1.0, false);
  EXPECT_DOUBLE_EQ(out.advantages[0], 1.0 + 0.5 * 10.0);  // no carry across the episode boundary
  EXPECT_DOUBLE_EQ(out.advantages[1], 1.0);
}

TEST(Gae, MatchesExplicitDoubleSum) { EXPECT_LE(poem_checks::gae_double_sum_max_error(300, 41), 1e-12); }

TEST(Gae, ReturnsMinusAdvantagesEqualValues) {
  Rng rng(3);
  RolloutBatch b;
  for (int t = 0; t < 50; ++t) b.transitions.push_back(step(rng.normal(), rng.normal() * 10, rng.uniform() < 0.1));
  b.bootstrap_value = 1.3;
  const auto raw = compute_gae(b, 0.99, 0.95, false);
  const auto norm = compute_gae(b, 0.99, 0.95, true);
  for (std::size_t t = 0; t < 50; ++t) {
    EXPECT_DOUBLE_EQ(raw.returns[t] - raw.advantages[t], b.transitions[t].value_old);
    EXPECT_EQ(norm.returns[t], raw.returns[t]);  // returns are taken before normalization
  }
  const double m = mean(norm.advantages);
  EXPECT_LE(std::abs(m), 1e-10);
  EXPECT_NEAR(std::sqrt(variance(norm.advantages, 0)), 1.0, 1e-6);
}

TEST(Gae, RejectsOutOfRangeCoefficients) {
  RolloutBatch b;
  b.transitions = {step(1, 0)};
  EXPECT_THROW(compute_gae(b, 1.5, 0.9), std::invalid_argument);
  EXPECT_THROW(compute_gae(b, 0.9, -0.1), std::invalid_argument);
}

TEST(Gae, SingleSampleIsNotNormalized) {
  RolloutBatch b;
  b.transitions = {step(1.0, 0.5, true)};
  EXPECT_DOUBLE_EQ(compute_gae(b, 0.99, 0.95, true).advantages[0], 0.5);
}

TEST(Collect, OneStepStoresValueAtCollection) {
  MountainCarContinuous env;
  const auto ac = ActorCritic::create(2, HeadKind::DiagGaussian, 1, {8}, 4);
  Rng rng(9);
  const auto batch = collect(env, ac, 1, rng);
  ASSERT_EQ(batch.size(), 1u);
  const auto& tr = batch.transitions[0];
  EXPECT_EQ(tr.value_old, value(ac, tr.obs));
  EXPECT_EQ(tr.log_prob_old, log_prob(distribution(ac, tr.obs), tr.action));
  EXPECT_TRUE(std::isfinite(tr.log_prob_old));
}

TEST(Collect, ReplayIsIdentical) {
  const auto ac = ActorCritic::create(5, HeadKind::Categorical, 4, {8}, 4);
  SparseLander e1, e2;
  Rng r1(5), r2(5);
  const auto a = collect(e1, ac, 300, r1);
  const auto b = collect(e2, ac, 300, r2);
  for (std::size_t t = 0; t < 300; ++t) {
    EXPECT_EQ(a.transitions[t].obs, b.transitions[t].obs);
    EXPECT_EQ(a.transitions[t].action, b.transitions[t].action);
    EXPECT_EQ(a.transitions[t].reward, b.transitions[t].reward);
  }
  EXPECT_EQ(a.bootstrap_value, b.bootstrap_value);
}

TEST(Collect, TerminatingEveryStepAutoResets) {
  CountdownEnv env(1);
  const auto ac = ActorCritic::create(1, HeadKind::DiagGaussian, 1, {4}, 4);
  RolloutCollector collector(env, 17);
  Rng rng(1);
  const auto batch = collector.collect(ac, 25, rng);
  ASSERT_EQ(batch.size(), 25u);
  for (const auto& tr : batch.transitions) {
    EXPECT_TRUE(tr.terminated);
    EXPECT_FALSE(tr.truncated);
  }
  EXPECT_EQ(batch.bootstrap_value, 0.0);
  EXPECT_EQ(collector.take_finished_episodes().size(), 25u);
  EXPECT_TRUE(collector.take_finished_episodes().empty());
}

TEST(Collect, EpisodesCarryAcrossCalls) {
  CountdownEnv env(7);
  const auto ac = ActorCritic::create(1, HeadKind::DiagGaussian, 1, {4}, 4);
  RolloutCollector collector(env, 2);
  Rng rng(1);
  const auto first = collector.collect(ac, 5, rng);
  EXPECT_EQ(first.bootstrap_value, value(ac, std::vector<double>{2.0}));
  const auto second = collector.collect(ac, 5, rng);
  EXPECT_TRUE(second.transitions[1].terminated);
  const auto episodes = collector.take_finished_episodes();
  ASSERT_EQ(episodes.size(), 1u);
  EXPECT_EQ(episodes[0].length, 7);
  EXPECT_DOUBLE_EQ(episodes[0].total_reward, 7.0);
}

TEST(Collect, TruncationRecordsTerminalValue) {
  MountainCarContinuous env;
  auto ac = ActorCritic::create(2, HeadKind::DiagGaussian, 1, {4}, 4, kLogStdMin);
  for (std::size_t i = 0; i < ac.actor_range().size; ++i) ac.params[i] = 0.0;  // action 0: never reaches the goal
  RolloutCollector collector(env, 3);
  Rng rng(1);
  const auto batch = collector.collect(ac, 1000, rng);
  const auto& last = batch.transitions[998];
  EXPECT_TRUE(last.truncated);
  EXPECT_FALSE(last.terminated);
  EXPECT_NE(last.terminal_value, 0.0);
  EXPECT_FALSE(batch.transitions[999].truncated);
}

TEST(Collect, RejectsNonPositiveSteps) {
  MountainCarContinuous env;
  const auto ac = ActorCritic::create(2, HeadKind::DiagGaussian, 1, {4}, 4);
  Rng rng(1);
  EXPECT_THROW(collect(env, ac, 0, rng), std::invalid_argument);
}

TEST(Gather, ColumnsFollowIndices) {
  RolloutBatch b;
  for (int t = 0; t < 4; ++t) {
    auto tr = step(t, 10 + t);
    tr.obs = {static_cast<double>(t), -t * 1.0};
    tr.action = {t * 0.5};
    b.transitions.push_back(tr);
  }
  b = compute_gae(b, 0.9, 0.9, false);
  const std::vector<std::size_t> idx = {3, 1};
  const auto mb = gather(b, idx);
  EXPECT_EQ(mb.size(), 2);
  EXPECT_EQ(mb.obs(0, 0), 3.0);
  EXPECT_EQ(mb.obs(1, 1), -1.0);
  EXPECT_EQ(mb.actions(0, 0), 1.5);
  EXPECT_EQ(mb.value_old[1], 11.0);
  EXPECT_EQ(mb.advantages[0], b.advantages[3]);
  RolloutBatch raw;
  raw.transitions = b.transitions;
  EXPECT_THROW(gather(raw, idx), std::invalid_argument);
}
