#pragma once

// Seeded policy evaluation and the per-episode / per-step CSV exports.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "poem/envs.hpp"
#include "poem/policy.hpp"
#include "poem/random.hpp"
#include "poem/stats.hpp"

namespace poem {

struct EvalReport {
  std::vector<double> per_episode_rewards;
  std::vector<int> per_episode_steps;
  std::vector<std::uint64_t> seeds;
  std::vector<bool> terminated;  // false means the episode hit the time limit
  std::vector<std::map<std::string, double>> final_info;
  std::vector<std::vector<double>> cumulative_rewards;  // per episode, per step
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

// Episode i is reset with seed_base + i. With `deterministic` the policy
// mode is used; otherwise actions are sampled from a stream seeded by seed_base.
inline EvalReport evaluate_policy(Env& env, const ActorCritic& ac, int n_episodes, std::uint64_t seed_base,
                                  bool deterministic = true) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate_policy: n_episodes must be >= 1");
  if (env.observation_dim() != ac.observation_dim())
    throw std::invalid_argument("evaluate_policy: observation dimension mismatch between policy and env");
  Rng action_rng(seed_base ^ 0xA5A5A5A5ULL);
  EvalReport report;
  for (int i = 0; i < n_episodes; ++i) {
    const std::uint64_t seed = seed_base + static_cast<std::uint64_t>(i);
    std::vector<double> obs = env.reset(seed);
    double total = 0.0;
    std::vector<double> cumulative;
    StepResult r;
    do {
      r = env.step(sample(distribution(ac, obs), action_rng, deterministic));
      total += r.reward;
      cumulative.push_back(total);
      obs = r.obs;
    } while (!r.terminated && !r.truncated);
    report.per_episode_rewards.push_back(total);
    report.per_episode_steps.push_back(static_cast<int>(cumulative.size()));
    report.seeds.push_back(seed);
    report.terminated.push_back(r.terminated);
    report.final_info.push_back(r.info);
    report.cumulative_rewards.push_back(std::move(cumulative));
  }
  report.mean = mean(report.per_episode_rewards);
  report.std = std::sqrt(variance(report.per_episode_rewards, 0));
  return report;
}

inline EvalReport evaluate_policy(std::string_view env_id, const ActorCritic& ac, int n_episodes,
                                  std::uint64_t seed_base, bool deterministic = true) {
  auto env = make_env(env_id);
  return evaluate_policy(*env, ac, n_episodes, seed_base, deterministic);
}

inline constexpr std::string_view kEpisodeCsvHeader = "algo,env,run_id,episode,seed,total_reward,steps";
inline constexpr std::string_view kStepCsvHeader = "algo,env,episode,step,cumulative_reward";

// Shortest decimal form that round-trips.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_episode_csv(std::ostream& out, std::string_view algo, std::string_view env_id,
                              std::string_view run_id, const EvalReport& report) {
  out << kEpisodeCsvHeader << '\n';
  for (std::size_t i = 0; i < report.per_episode_rewards.size(); ++i)
    out << algo << ',' << env_id << ',' << run_id << ',' << i << ',' << report.seeds[i] << ','
        << format_double(report.per_episode_rewards[i]) << ',' << report.per_episode_steps[i] << '\n';
}

inline void write_step_csv(std::ostream& out, std::string_view algo, std::string_view env_id,
                           const EvalReport& report) {
  out << kStepCsvHeader << '\n';
  for (std::size_t i = 0; i < report.cumulative_rewards.size(); ++i)
    for (std::size_t s = 0; s < report.cumulative_rewards[i].size(); ++s)
      out << algo << ',' << env_id << ',' << i << ',' << s + 1 << ','
          << format_double(report.cumulative_rewards[i][s]) << '\n';
}

}  // namespace poem
