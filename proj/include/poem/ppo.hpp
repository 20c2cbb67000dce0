#pragma once

// Clipped-surrogate PPO: loss terms, the composite objective and the
// epoch/minibatch update loop.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "poem/nn.hpp"
#include "poem/policy.hpp"
#include "poem/random.hpp"
#include "poem/rollout.hpp"

namespace poem {

struct PpoConfig {
  double clip_epsilon = 0.2;
  double alpha_vf = 0.5;
  double alpha_ent = 0.0;
  int epochs = 10;
  int minibatch_size = 64;
  double learning_rate = 3e-4;
  std::optional<double> max_grad_norm = 0.5;
  double gamma = 0.99;
  double lam = 0.95;

  void validate(std::size_t rollout_size = 0) const {
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw std::invalid_argument("ppo: clip_epsilon must lie in (0, 1)");
    if (alpha_vf < 0.0 || alpha_ent < 0.0) throw std::invalid_argument("ppo: loss coefficients must be >= 0");
    if (epochs < 0) throw std::invalid_argument("ppo: epochs must be >= 0");
    if (minibatch_size < 1) throw std::invalid_argument("ppo: minibatch_size must be >= 1");
    if (rollout_size && static_cast<std::size_t>(minibatch_size) > rollout_size)
      throw std::invalid_argument("ppo: minibatch_size exceeds rollout size");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("ppo: learning_rate must be > 0");
    if (max_grad_norm && !(*max_grad_norm > 0.0)) throw std::invalid_argument("ppo: max_grad_norm must be > 0");
    if (!(gamma >= 0.0 && gamma <= 1.0) || !(lam >= 0.0 && lam <= 1.0))
      throw std::invalid_argument("ppo: gamma and lam must lie in [0, 1]");
  }
};

struct LossBreakdown {
  double l_ppo = 0.0;
  double l_vf = 0.0;
  double entropy = 0.0;
  double kl_div = 0.0;
  double l_total = 0.0;
};

// -mean(min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)), rho = exp(logp_new - logp_old).
inline double clipped_surrogate(std::span<const double> logp_new, std::span<const double> logp_old,
                                std::span<const double> adv, double clip_epsilon) {
  if (logp_new.empty() || logp_new.size() != logp_old.size() || logp_new.size() != adv.size())
    throw std::invalid_argument("clipped_surrogate: inputs must have equal nonzero length");
  double sum = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double ratio = std::exp(logp_new[i] - logp_old[i]);
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    sum += std::min(ratio * adv[i], clipped * adv[i]);
  }
  return -sum / static_cast<double>(adv.size());
}

inline double value_loss(std::span<const double> values, std::span<const double> returns) {
  if (values.size() != returns.size()) throw std::invalid_argument("value_loss: length mismatch");
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) sum += (values[i] - returns[i]) * (values[i] - returns[i]);
  return sum / static_cast<double>(values.size());
}

// Coefficients of L_total = L_PPO - lambda_div * D_KL + alpha_vf * L_VF - alpha_ent * H.
struct LossWeights {
  double clip_epsilon = 0.2;
  double alpha_vf = 0.5;
  double alpha_ent = 0.0;
  double lambda_div = 0.0;

  static LossWeights from(const PpoConfig& c, double lambda_div = 0.0) {
    return {c.clip_epsilon, c.alpha_vf, c.alpha_ent, lambda_div};
  }
};

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

// Evaluates L_total on a minibatch at `params` (full actor|log_std|critic
// vector). `ema_log_prob` holds log pi_ema(a_i|s_i), treated as constant;
// without it the KL term is zero. When `grad` is non-empty it receives
// dL_total/dparams (overwritten).
inline LossBreakdown composite_loss(const ActorCritic& ac, std::span<const double> params, const Minibatch& mb,
                                    const LossWeights& w, const Eigen::VectorXd* ema_log_prob,
                                    std::span<double> grad = {}) {
  const auto n = mb.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto policy = params.subspan(0, ac.policy_range().size);
  const auto critic = params.subspan(ac.critic_range().offset, ac.critic_range().size);
  PolicyTape tape;
  const BatchOutputs out = evaluate_batch(ac, policy, critic, mb.obs, mb.actions, grad.empty() ? nullptr : &tape);

  LossBreakdown loss;
  loss.l_ppo = clipped_surrogate(as_span(out.log_prob), as_span(mb.log_prob_old), as_span(mb.advantages),
                                 w.clip_epsilon);
  loss.l_vf = value_loss(as_span(out.value), as_span(mb.returns));
  loss.entropy = out.entropy.mean();
  if (ema_log_prob) {
    if (ema_log_prob->size() != n) throw std::invalid_argument("composite_loss: EMA log-prob count mismatch");
    loss.kl_div = (out.log_prob - *ema_log_prob).mean();
  }
  loss.l_total = loss.l_ppo - w.lambda_div * loss.kl_div + w.alpha_vf * loss.l_vf - w.alpha_ent * loss.entropy;
  if (!std::isfinite(loss.l_total)) throw numerical_error("composite_loss: non-finite loss");
  if (grad.empty()) return loss;

  Eigen::VectorXd d_log_prob(n), d_entropy(n), d_value(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ratio = std::exp(out.log_prob[i] - mb.log_prob_old[i]);
    const double clipped = std::clamp(ratio, 1.0 - w.clip_epsilon, 1.0 + w.clip_epsilon);
    const double a = mb.advantages[i];
    // The min picks the unclipped branch (d/dlogp = rho * A) or a constant.
    d_log_prob[i] = ratio * a <= clipped * a ? -inv_n * ratio * a : 0.0;
    if (ema_log_prob && w.lambda_div != 0.0) d_log_prob[i] -= w.lambda_div * inv_n;
    d_entropy[i] = -w.alpha_ent * inv_n;
    d_value[i] = w.alpha_vf * 2.0 * inv_n * (out.value[i] - mb.returns[i]);
  }
  std::fill(grad.begin(), grad.end(), 0.0);
  backprop_batch(ac, params, tape, mb.actions, d_log_prob, d_entropy, d_value, grad);
  if (!all_finite(grad)) throw numerical_error("composite_loss: non-finite gradient");
  return loss;
}

inline double global_norm(std::span<const double> g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

// One optimizer step on L_total for a minibatch; returns the pre-step loss.
inline LossBreakdown gradient_step(ActorCritic& ac, const Minibatch& mb, const LossWeights& w,
                                   const Eigen::VectorXd* ema_log_prob, std::optional<double> max_grad_norm,
                                   AdamState& adam, std::vector<double>& grad_buffer) {
  grad_buffer.assign(ac.params.size(), 0.0);
  const LossBreakdown loss = composite_loss(ac, ac.params.values(), mb, w, ema_log_prob, grad_buffer);
  if (max_grad_norm) {
    const double norm = global_norm(grad_buffer);
    if (norm > *max_grad_norm) {
      const double scale = *max_grad_norm / (norm + 1e-6);
      for (double& g : grad_buffer) g *= scale;
    }
  }
  apply_adam(adam, ac.params.values(), grad_buffer);
  return loss;
}

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

// Shuffled minibatch partitions for every epoch; the last chunk may be short.
inline std::vector<std::vector<std::size_t>> epoch_partitions(std::size_t n, int minibatch_size, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  shuffle_indices(idx, rng);
  std::vector<std::vector<std::size_t>> parts;
  const auto m = static_cast<std::size_t>(minibatch_size);
  for (std::size_t start = 0; start < n; start += m)
    parts.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                       idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + m)));
  return parts;
}

struct MinibatchReport {
  int epoch = 0;
  int index = 0;  // running minibatch counter within the update
  LossBreakdown loss;
};

struct UpdateDiagnostics {
  std::vector<MinibatchReport> minibatches;
};

// Standard PPO update (no diversity term). `shuffle_rng` only orders minibatches.
inline UpdateDiagnostics ppo_update(ActorCritic& ac, const RolloutBatch& batch, const PpoConfig& config,
                                    AdamState& adam, Rng& shuffle_rng) {
  config.validate(batch.size());
  adam.lr = config.learning_rate;
  const LossWeights weights = LossWeights::from(config);
  UpdateDiagnostics diag;
  std::vector<double> grad;
  int counter = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& part : epoch_partitions(batch.size(), config.minibatch_size, shuffle_rng)) {
      const Minibatch mb = gather(batch, part);
      try {
        diag.minibatches.push_back(
            {epoch, counter, gradient_step(ac, mb, weights, nullptr, config.max_grad_norm, adam, grad)});
      } catch (const numerical_error& e) {
        throw numerical_error("ppo_update: minibatch " + std::to_string(counter) + " (epoch " +
                              std::to_string(epoch) + "): " + e.what());
      }
      ++counter;
    }
  }
  return diag;
}

}  // namespace poem
