#pragma once

// Trajectory collection and generalized advantage estimation.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "poem/envs.hpp"
#include "poem/policy.hpp"
#include "poem/random.hpp"

namespace poem {

struct Transition {
  std::vector<double> obs;
  Action action;  // as sampled (unclipped)
  double log_prob_old = 0.0;
  double reward = 0.0;
  double value_old = 0.0;
  bool terminated = false;
  bool truncated = false;
  // V(s_{t+1}) of the final observation when truncated; the next stored
  // transition then belongs to a fresh episode.
  double terminal_value = 0.0;
};

struct RolloutBatch {
  std::vector<Transition> transitions;
  std::vector<double> advantages;
  std::vector<double> returns;
  double bootstrap_value = 0.0;  // V of the observation following the last transition

  std::size_t size() const { return transitions.size(); }
};

struct EpisodeRecord {
  double total_reward = 0.0;
  int length = 0;
  bool terminated = false;
};

// Steps one environment across successive collect() calls, carrying the
// unfinished episode over. Episode reset seeds come from a dedicated stream.
class RolloutCollector {
 public:
  RolloutCollector(Env& env, std::uint64_t episode_seed) : env_(env), episode_seeds_(episode_seed) {}

  RolloutBatch collect(const ActorCritic& ac, int n_steps, Rng& action_rng) {
    if (n_steps < 1) throw std::invalid_argument("collect: n_steps must be >= 1");
    RolloutBatch batch;
    batch.transitions.reserve(static_cast<std::size_t>(n_steps));
    for (int t = 0; t < n_steps; ++t) {
      if (needs_reset_) {
        obs_ = env_.reset(episode_seeds_.next());
        needs_reset_ = false;
        current_ = {};
      }
      const auto dist = distribution(ac, obs_);
      Transition tr;
      tr.action = sample(dist, action_rng);
      tr.log_prob_old = log_prob(dist, tr.action);
      tr.value_old = value(ac, obs_);
      tr.obs = obs_;
      const StepResult r = env_.step(tr.action);
      tr.reward = r.reward;
      tr.terminated = r.terminated;
      tr.truncated = r.truncated && !r.terminated;
      if (tr.truncated) tr.terminal_value = value(ac, r.obs);
      current_.total_reward += r.reward;
      ++current_.length;
      if (r.terminated || r.truncated) {
        current_.terminated = r.terminated;
        finished_.push_back(current_);
        needs_reset_ = true;
      }
      obs_ = r.obs;
      batch.transitions.push_back(std::move(tr));
    }
    batch.bootstrap_value = needs_reset_ ? 0.0 : value(ac, obs_);
    return batch;
  }

  // Episodes completed since the last call.
  std::vector<EpisodeRecord> take_finished_episodes() { return std::exchange(finished_, {}); }

 private:
  Env& env_;
  Rng episode_seeds_;
  std::vector<double> obs_;
  bool needs_reset_ = true;
  EpisodeRecord current_;
  std::vector<EpisodeRecord> finished_;
};

// One-shot collection starting from a fresh episode.
inline RolloutBatch collect(Env& env, const ActorCritic& ac, int n_steps, Rng& rng) {
  RolloutCollector collector(env, rng.next());
  return collector.collect(ac, n_steps, rng);
}

// GAE(lambda). Fills advantages and returns (returns = advantages + value_old,
// taken before normalization); advantages are then normalized over the batch
// unless `normalize` is false.
inline RolloutBatch compute_gae(RolloutBatch batch, double gamma, double lam, bool normalize = true) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("compute_gae: gamma must lie in [0, 1]");
  if (!(lam >= 0.0 && lam <= 1.0)) throw std::invalid_argument("compute_gae: lambda must lie in [0, 1]");
  const std::size_t n = batch.size();
  batch.advantages.assign(n, 0.0);
  batch.returns.assign(n, 0.0);
  double next_advantage = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const Transition& tr = batch.transitions[t];
    double next_value = 0.0;
    if (tr.truncated)
      next_value = tr.terminal_value;
    else if (t + 1 == n)
      next_value = batch.bootstrap_value;
    else
      next_value = batch.transitions[t + 1].value_old;
    const double not_terminated = tr.terminated ? 0.0 : 1.0;
    const double not_done = (tr.terminated || tr.truncated) ? 0.0 : 1.0;
    const double delta = tr.reward + gamma * next_value * not_terminated - tr.value_old;
    batch.advantages[t] = delta + gamma * lam * not_done * next_advantage;
    batch.returns[t] = batch.advantages[t] + tr.value_old;
    next_advantage = batch.advantages[t];
  }
  if (normalize && n > 1) {
    const double mean = std::accumulate(batch.advantages.begin(), batch.advantages.end(), 0.0) / n;
    double var = 0.0;
    for (double a : batch.advantages) var += (a - mean) * (a - mean);
    const double sd = std::max(std::sqrt(var / n), 1e-8);
    for (double& a : batch.advantages) a = (a - mean) / sd;
  }
  return batch;
}

// Column-major view of a subset of a prepared batch.
struct Minibatch {
  Eigen::MatrixXd obs;      // obs_dim x N
  Eigen::MatrixXd actions;  // action_dim x N (1 x N indices for categorical)
  Eigen::VectorXd log_prob_old;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  Eigen::VectorXd value_old;

  Eigen::Index size() const { return obs.cols(); }
};

inline Minibatch gather(const RolloutBatch& batch, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("gather: empty index set");
  if (batch.advantages.size() != batch.size() || batch.returns.size() != batch.size())
    throw std::invalid_argument("gather: batch has no advantages/returns; run compute_gae first");
  const auto n = static_cast<Eigen::Index>(indices.size());
  const auto& first = batch.transitions.at(indices[0]);
  Minibatch mb;
  mb.obs.resize(static_cast<Eigen::Index>(first.obs.size()), n);
  mb.actions.resize(static_cast<Eigen::Index>(first.action.size()), n);
  mb.log_prob_old.resize(n);
  mb.advantages.resize(n);
  mb.returns.resize(n);
  mb.value_old.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const std::size_t i = indices[static_cast<std::size_t>(j)];
    const Transition& tr = batch.transitions.at(i);
    mb.obs.col(j) = Eigen::Map<const Eigen::VectorXd>(tr.obs.data(), mb.obs.rows());
    mb.actions.col(j) = Eigen::Map<const Eigen::VectorXd>(tr.action.data(), mb.actions.rows());
    mb.log_prob_old[j] = tr.log_prob_old;
    mb.advantages[j] = batch.advantages[i];
    mb.returns[j] = batch.returns[i];
    mb.value_old[j] = tr.value_old;
  }
  return mb;
}

inline Minibatch gather_all(const RolloutBatch& batch) {
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return gather(batch, idx);
}

}  // namespace poem
