#pragma once

// PPO with evolutionary mutations: an exponential moving average of the
// policy parameters serves as a reference policy; when the sampled KL
// divergence between the freshly updated policy and that reference drops
// below a threshold, the policy parameters receive Gaussian noise whose
// scale grows with the depth of the stagnation, and the perturbed candidate
// is kept only if it strictly lowers the composite loss.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "poem/nn.hpp"
#include "poem/policy.hpp"
#include "poem/ppo.hpp"
#include "poem/random.hpp"
#include "poem/rollout.hpp"

namespace poem {

enum class MutateScope { ActorOnly, ActorAndCritic };

struct PoemConfig {
  double beta = 0.99;        // EMA smoothing
  double delta = 0.01;       // KL threshold
  double sigma_min = 0.005;
  double sigma_max = 0.05;
  double lambda_div = 0.01;  // weight of the diversity bonus in L_total
  int n_candidates = 1;
  MutateScope mutate_scope = MutateScope::ActorOnly;

  // A threshold this low never fires, even for negative KL estimates.
  static constexpr double kTriggerDisabled = -1e9;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("poem: beta must lie in [0, 1]");
    if (!(sigma_min >= 0.0 && sigma_min <= sigma_max)) throw std::invalid_argument("poem: need 0 <= sigma_min <= sigma_max");
    if (lambda_div < 0.0) throw std::invalid_argument("poem: lambda_div must be >= 0");
    if (n_candidates < 1) throw std::invalid_argument("poem: n_candidates must be >= 1");
    if (delta == 0.0 || std::isnan(delta)) throw std::invalid_argument("poem: delta must be nonzero");
  }
};

struct EmaTracker {
  ParamVector theta_hat;  // actor|log_std slice
  double beta = 0.99;

  static EmaTracker start(const ActorCritic& ac, double beta) { return {ac.policy_params(), beta}; }
};

inline void ema_update_inplace(EmaTracker& tracker, std::span<const double> theta) {
  if (theta.size() != tracker.theta_hat.size()) throw std::invalid_argument("ema_update: layout mismatch");
  auto hat = tracker.theta_hat.values();
  for (std::size_t i = 0; i < hat.size(); ++i) hat[i] = tracker.beta * hat[i] + (1.0 - tracker.beta) * theta[i];
}

// theta_hat <- beta * theta_hat + (1 - beta) * theta
inline EmaTracker ema_update(EmaTracker tracker, const ParamVector& theta) {
  if (!tracker.theta_hat.same_layout(theta)) throw std::invalid_argument("ema_update: layout mismatch");
  ema_update_inplace(tracker, theta.values());
  return tracker;
}

// log pi(a|s) for each column under an actor|log_std parameter slice.
inline Eigen::VectorXd policy_log_probs(const ActorCritic& ac, std::span<const double> policy_params,
                                        const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions) {
  return evaluate_batch(ac, policy_params, {}, obs, actions).log_prob;
}

inline void require_policy_layout(const ActorCritic& ac, const ParamVector& ema_params) {
  if (ema_params.size() != ac.policy_range().size)
    throw std::invalid_argument("kl_divergence_mc: EMA parameters do not match the actor|log_std slice");
}

// (1/N) sum_i [log pi_theta(a_i|s_i) - log pi_ema(a_i|s_i)] over stored pairs.
// A sampled estimate: it can be negative.
inline double kl_divergence_mc(const ActorCritic& ac, const ParamVector& ema_params, const Minibatch& mb) {
  require_policy_layout(ac, ema_params);
  const auto current = policy_log_probs(ac, ac.params.slice(ac.policy_range()), mb.obs, mb.actions);
  const auto reference = policy_log_probs(ac, ema_params.values(), mb.obs, mb.actions);
  const double kl = (current - reference).mean();
  if (!std::isfinite(kl)) throw numerical_error("kl_divergence_mc: non-finite log-probability");
  return kl;
}

inline double kl_divergence_mc(const ActorCritic& ac, const ParamVector& ema_params, const RolloutBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("kl_divergence_mc: empty batch");
  const auto& first = batch.transitions.front();
  const auto n = static_cast<Eigen::Index>(batch.size());
  Minibatch pairs;
  pairs.obs.resize(static_cast<Eigen::Index>(first.obs.size()), n);
  pairs.actions.resize(static_cast<Eigen::Index>(first.action.size()), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& tr = batch.transitions[static_cast<std::size_t>(j)];
    pairs.obs.col(j) = Eigen::Map<const Eigen::VectorXd>(tr.obs.data(), pairs.obs.rows());
    pairs.actions.col(j) = Eigen::Map<const Eigen::VectorXd>(tr.action.data(), pairs.actions.rows());
  }
  return kl_divergence_mc(ac, ema_params, pairs);
}

inline LossBreakdown total_loss(const ActorCritic& ac, const ParamVector& ema_params, const Minibatch& mb,
                                const PpoConfig& ppo, const PoemConfig& poem) {
  require_policy_layout(ac, ema_params);
  const Eigen::VectorXd ema_lp = policy_log_probs(ac, ema_params.values(), mb.obs, mb.actions);
  return composite_loss(ac, ac.params.values(), mb, LossWeights::from(ppo, poem.lambda_div), &ema_lp);
}

// Linear map of stagnation depth (delta - d_post) / delta onto
// [sigma_min, sigma_max], clamped.
inline double mutation_sigma(double d_post, const PoemConfig& config) {
  const double t = (config.delta - d_post) / config.delta;
  const double sigma = config.sigma_min + (config.sigma_max - config.sigma_min) * t;
  return std::clamp(sigma, config.sigma_min, config.sigma_max);
}

struct DiversityMetrics {
  double d_post = 0.0;
  std::optional<double> sigma_used;
  bool mutation_triggered = false;
  bool mutation_accepted = false;
  double l_total_before = 0.0;
  std::optional<double> l_total_after;  // best finite candidate, when one was evaluated
};

inline ParamRange mutation_range(const ActorCritic& ac, MutateScope scope) {
  return scope == MutateScope::ActorOnly ? ac.policy_range() : ParamRange{0, ac.params.size()};
}

// Candidate search given the incumbent's L_total and the EMA log-probs of the
// minibatch. Replaces ac.params only on strict improvement.
inline DiversityMetrics mutate_and_select(ActorCritic& ac, const Eigen::VectorXd& ema_log_prob, const Minibatch& mb,
                                          double sigma, double incumbent_loss, const LossWeights& weights,
                                          const PoemConfig& config, Rng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("mutate_and_select: sigma must be >= 0");
  DiversityMetrics m;
  m.mutation_triggered = true;
  m.sigma_used = sigma;
  m.l_total_before = incumbent_loss;
  const ParamRange range = mutation_range(ac, config.mutate_scope);
  std::vector<double> best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> candidate;
  for (int j = 0; j < config.n_candidates; ++j) {
    candidate.assign(ac.params.values().begin(), ac.params.values().end());
    for (std::size_t i = range.offset; i < range.end(); ++i) candidate[i] += sigma * rng.normal();
    double loss = std::numeric_limits<double>::infinity();
    try {
      loss = composite_loss(ac, candidate, mb, weights, &ema_log_prob).l_total;
    } catch (const numerical_error&) {
      continue;  // disqualified
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = candidate;
    }
  }
  if (!best.empty()) m.l_total_after = best_loss;
  if (!best.empty() && best_loss < incumbent_loss) {
    std::copy(best.begin(), best.end(), ac.params.values().begin());
    m.mutation_accepted = true;
  }
  return m;
}

inline DiversityMetrics mutate_and_select(ActorCritic& ac, const ParamVector& ema_params, const Minibatch& mb,
                                          double sigma, const PpoConfig& ppo, const PoemConfig& poem, Rng& rng) {
  require_policy_layout(ac, ema_params);
  const LossWeights weights = LossWeights::from(ppo, poem.lambda_div);
  const Eigen::VectorXd ema_lp = policy_log_probs(ac, ema_params.values(), mb.obs, mb.actions);
  const LossBreakdown incumbent = composite_loss(ac, ac.params.values(), mb, weights, &ema_lp);
  DiversityMetrics m = mutate_and_select(ac, ema_lp, mb, sigma, incumbent.l_total, weights, poem, rng);
  m.d_post = incumbent.kl_div;
  return m;
}

struct PoemMinibatchReport {
  int epoch = 0;
  int index = 0;
  LossBreakdown loss;  // pre-step, as optimized
  DiversityMetrics diversity;
};

struct PoemDiagnostics {
  std::vector<PoemMinibatchReport> minibatches;
};

// Per minibatch: gradient step on L_total, EMA update, post-step KL check,
// and mutate-and-select when the KL falls below delta.
inline PoemDiagnostics poem_update(ActorCritic& ac, EmaTracker& ema, const RolloutBatch& batch,
                                   const PpoConfig& ppo, const PoemConfig& poem, AdamState& adam,
                                   Rng& shuffle_rng, Rng& mutation_rng) {
  ppo.validate(batch.size());
  poem.validate();
  require_policy_layout(ac, ema.theta_hat);
  adam.lr = ppo.learning_rate;
  const LossWeights weights = LossWeights::from(ppo, poem.lambda_div);
  PoemDiagnostics diag;
  std::vector<double> grad;
  int counter = 0;
  for (int epoch = 0; epoch < ppo.epochs; ++epoch) {
    for (const auto& part : epoch_partitions(batch.size(), ppo.minibatch_size, shuffle_rng)) {
      const Minibatch mb = gather(batch, part);
      try {
        PoemMinibatchReport report{epoch, counter, {}, {}};
        const Eigen::VectorXd ema_lp = policy_log_probs(ac, ema.theta_hat.values(), mb.obs, mb.actions);
        report.loss = gradient_step(ac, mb, weights, &ema_lp, ppo.max_grad_norm, adam, grad);

        ema_update_inplace(ema, ac.params.slice(ac.policy_range()));
        const Eigen::VectorXd ema_lp_post = policy_log_probs(ac, ema.theta_hat.values(), mb.obs, mb.actions);
        const LossBreakdown post = composite_loss(ac, ac.params.values(), mb, weights, &ema_lp_post);
        const double d_post = post.kl_div;
        if (d_post < poem.delta) {
          report.diversity = mutate_and_select(ac, ema_lp_post, mb, mutation_sigma(d_post, poem), post.l_total,
                                               weights, poem, mutation_rng);
        } else {
          report.diversity.l_total_before = post.l_total;
        }
        report.diversity.d_post = d_post;
        diag.minibatches.push_back(std::move(report));
      } catch (const numerical_error& e) {
        throw numerical_error("poem_update: minibatch " + std::to_string(counter) + " (epoch " +
                              std::to_string(epoch) + "): " + e.what());
      }
      ++counter;
    }
  }
  return diag;
}

}  // namespace poem
