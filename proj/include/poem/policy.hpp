#pragma once

// Actor-critic over two separate MLPs with either a diagonal-Gaussian head
// (state-independent log std) or a categorical head.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "poem/nn.hpp"
#include "poem/random.hpp"

namespace poem {

enum class HeadKind { DiagGaussian, Categorical };

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// Continuous actions hold one value per dimension; categorical actions hold
// the chosen index as a single element.
using Action = std::vector<double>;

struct ActorCritic {
  MlpSpec actor_spec;
  MlpSpec critic_spec;
  HeadKind head = HeadKind::DiagGaussian;
  int action_dim = 1;  // Gaussian dimensions, or number of categories
  ParamVector params;  // actor | log_std | critic

  static ActorCritic create(int obs_dim, HeadKind head, int action_dim, const std::vector<int>& hidden,
                            std::uint64_t seed, double initial_log_std = 0.0) {
    if (obs_dim < 1 || action_dim < 1) throw std::invalid_argument("ActorCritic: dimensions must be >= 1");
    ActorCritic ac;
    ac.head = head;
    ac.action_dim = action_dim;
    ac.actor_spec.layer_sizes = {obs_dim};
    ac.critic_spec.layer_sizes = {obs_dim};
    for (int h : hidden) {
      ac.actor_spec.layer_sizes.push_back(h);
      ac.critic_spec.layer_sizes.push_back(h);
    }
    ac.actor_spec.layer_sizes.push_back(action_dim);
    ac.critic_spec.layer_sizes.push_back(1);

    Rng seeder(seed);
    const ParamVector actor = init_params(ac.actor_spec, seeder.next(), 0.01);
    const ParamVector critic = init_params(ac.critic_spec, seeder.next(), 1.0);
    const std::size_t n_log_std = ac.log_std_size();
    std::vector<double> values(actor.values().begin(), actor.values().end());
    values.insert(values.end(), n_log_std, initial_log_std);
    values.insert(values.end(), critic.values().begin(), critic.values().end());
    ac.params = ParamVector(std::move(values), expected_layout(ac.actor_spec, n_log_std, ac.critic_spec));
    return ac;
  }

  int observation_dim() const { return actor_spec.input_size(); }
  std::size_t log_std_size() const {
    return head == HeadKind::DiagGaussian ? static_cast<std::size_t>(action_dim) : 0;
  }

  ParamRange actor_range() const { return {0, actor_spec.num_params()}; }
  ParamRange log_std_range() const { return {actor_spec.num_params(), log_std_size()}; }
  ParamRange critic_range() const { return {actor_spec.num_params() + log_std_size(), critic_spec.num_params()}; }
  // The slice that defines pi(a|s): actor weights followed by log_std.
  ParamRange policy_range() const { return {0, actor_spec.num_params() + log_std_size()}; }

  ParamVector policy_params() const {
    const auto slice = params.slice(policy_range());
    ParamLayout layout(params.layout().begin(), params.layout().begin() + policy_block_count());
    return ParamVector({slice.begin(), slice.end()}, std::move(layout));
  }

  std::size_t policy_block_count() const { return 2 * actor_spec.num_layers() + (log_std_size() ? 1 : 0); }

  // Blocks: "actor.layer<l>.*", optional "log_std", "critic.layer<l>.*".
  static ParamLayout expected_layout(const MlpSpec& actor, std::size_t n_log_std, const MlpSpec& critic) {
    ParamLayout layout = mlp_layout(actor, "actor.");
    std::size_t offset = actor.num_params();
    if (n_log_std) layout.push_back({"log_std", {offset, n_log_std}});
    offset += n_log_std;
    for (auto& b : mlp_layout(critic, "critic.", offset)) layout.push_back(std::move(b));
    return layout;
  }
};

struct GaussianDist {
  std::vector<double> mean;
  std::vector<double> log_std;  // already clamped to [kLogStdMin, kLogStdMax]

  double std_dev(std::size_t d) const { return std::exp(log_std[d]); }
};

struct CategoricalDist {
  std::vector<double> log_probs;
  std::vector<double> probs;

  static CategoricalDist from_logits(std::span<const double> logits) {
    double max_logit = logits[0];
    for (double l : logits) max_logit = std::max(max_logit, l);
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - max_logit);
    const double lse = max_logit + std::log(sum);
    CategoricalDist dist;
    for (double l : logits) {
      dist.log_probs.push_back(l - lse);
      dist.probs.push_back(std::exp(l - lse));
    }
    return dist;
  }
};

using ActionDistribution = std::variant<GaussianDist, CategoricalDist>;

inline double clamp_log_std(double ls) { return std::clamp(ls, kLogStdMin, kLogStdMax); }

inline ActionDistribution distribution(const ActorCritic& ac, std::span<const double> obs) {
  const auto actor = ac.params.slice(ac.actor_range());
  const auto out = forward(ac.actor_spec, actor, obs);
  if (!all_finite(out)) throw numerical_error("distribution: non-finite actor output");
  if (ac.head == HeadKind::Categorical) return CategoricalDist::from_logits(out);
  GaussianDist dist{out, {}};
  for (double ls : ac.params.slice(ac.log_std_range())) dist.log_std.push_back(clamp_log_std(ls));
  return dist;
}

// Mode of the distribution: Gaussian mean or categorical argmax.
inline Action mode(const ActionDistribution& dist) {
  if (const auto* g = std::get_if<GaussianDist>(&dist)) return g->mean;
  const auto& c = std::get<CategoricalDist>(dist);
  const auto best = std::max_element(c.probs.begin(), c.probs.end()) - c.probs.begin();
  return {static_cast<double>(best)};
}

inline Action sample(const ActionDistribution& dist, Rng& rng, bool deterministic = false) {
  if (deterministic) return mode(dist);
  if (const auto* g = std::get_if<GaussianDist>(&dist)) {
    Action a(g->mean.size());
    for (std::size_t d = 0; d < a.size(); ++d) a[d] = g->mean[d] + g->std_dev(d) * rng.normal();
    return a;
  }
  const auto& c = std::get<CategoricalDist>(dist);
  const double u = rng.uniform();
  double cdf = 0.0;
  for (std::size_t k = 0; k < c.probs.size(); ++k) {
    cdf += c.probs[k];
    if (u < cdf) return {static_cast<double>(k)};
  }
  // u landed in the rounding gap above the final partial sum.
  for (std::size_t k = c.probs.size(); k-- > 0;)
    if (c.probs[k] > 0.0) return {static_cast<double>(k)};
  return {0.0};
}

inline int category_index(const Action& action, std::size_t n) {
  if (action.size() != 1) throw std::invalid_argument("categorical action must hold exactly one index");
  const double a = action[0];
  if (!(a >= 0.0) || a >= static_cast<double>(n) || a != std::floor(a))
    throw std::out_of_range("categorical action index out of range");
  return static_cast<int>(a);
}

inline double log_prob(const ActionDistribution& dist, const Action& action) {
  if (const auto* g = std::get_if<GaussianDist>(&dist)) {
    if (action.size() != g->mean.size()) throw std::invalid_argument("log_prob: action dimension mismatch");
    double lp = 0.0;
    for (std::size_t d = 0; d < action.size(); ++d) {
      const double z = (action[d] - g->mean[d]) / g->std_dev(d);
      lp += -kHalfLog2Pi - g->log_std[d] - 0.5 * z * z;
    }
    return lp;
  }
  const auto& c = std::get<CategoricalDist>(dist);
  return c.log_probs[category_index(action, c.probs.size())];
}

inline double entropy(const ActionDistribution& dist) {
  if (const auto* g = std::get_if<GaussianDist>(&dist)) {
    double h = 0.0;
    for (double ls : g->log_std) h += 0.5 + kHalfLog2Pi + ls;
    return h;
  }
  const auto& c = std::get<CategoricalDist>(dist);
  double h = 0.0;
  for (std::size_t k = 0; k < c.probs.size(); ++k)
    if (c.probs[k] > 0.0) h -= c.probs[k] * c.log_probs[k];
  return h;
}

inline double value(const ActorCritic& ac, std::span<const double> obs) {
  return forward(ac.critic_spec, ac.params.slice(ac.critic_range()), obs)[0];
}

// ---------------------------------------------------------------------------
// Batched evaluation with reverse-mode gradients. Observations are
// (obs_dim x N); actions are (action_dim x N) for Gaussian heads and
// (1 x N) category indices for categorical heads.

struct BatchOutputs {
  Eigen::VectorXd log_prob;
  Eigen::VectorXd entropy;
  Eigen::VectorXd value;  // empty unless the critic was evaluated
};

struct PolicyTape {
  MlpTape actor;
  MlpTape critic;
  Eigen::MatrixXd log_softmax;  // categorical only
  Eigen::VectorXd log_std;      // clamped, Gaussian only
};

// `policy_params` is the actor|log_std slice; `critic_params` may be empty
// when only the action distribution is needed.
inline BatchOutputs evaluate_batch(const ActorCritic& ac, std::span<const double> policy_params,
                                   std::span<const double> critic_params, const Eigen::MatrixXd& obs,
                                   const Eigen::MatrixXd& actions, PolicyTape* tape = nullptr) {
  const auto n = obs.cols();
  if (actions.cols() != n) throw std::invalid_argument("evaluate_batch: observation/action count mismatch");
  if (policy_params.size() != ac.policy_range().size)
    throw std::invalid_argument("evaluate_batch: policy parameter count mismatch");
  PolicyTape local;
  PolicyTape& t = tape ? *tape : local;
  t.actor = forward_batch(ac.actor_spec, policy_params.first(ac.actor_spec.num_params()), obs);
  const Eigen::MatrixXd& out = t.actor.output();
  BatchOutputs result;
  result.log_prob.resize(n);
  result.entropy.resize(n);

  if (ac.head == HeadKind::DiagGaussian) {
    if (actions.rows() != ac.action_dim) throw std::invalid_argument("evaluate_batch: action dimension mismatch");
    t.log_std.resize(ac.action_dim);
    for (int d = 0; d < ac.action_dim; ++d)
      t.log_std[d] = clamp_log_std(policy_params[ac.actor_spec.num_params() + d]);
    const Eigen::ArrayXd inv_std = (-t.log_std.array()).exp();
    const double h = (0.5 + kHalfLog2Pi) * ac.action_dim + t.log_std.sum();
    const Eigen::ArrayXXd z = (actions - out).array().colwise() * inv_std;
    result.log_prob = (-0.5 * z.square().colwise().sum()).matrix().transpose();
    result.log_prob.array() -= kHalfLog2Pi * ac.action_dim + t.log_std.sum();
    result.entropy.setConstant(h);
  } else {
    if (actions.rows() != 1) throw std::invalid_argument("evaluate_batch: categorical actions must be 1 x N");
    const Eigen::RowVectorXd max_logit = out.colwise().maxCoeff();
    t.log_softmax = out.rowwise() - max_logit;
    const Eigen::RowVectorXd lse = t.log_softmax.array().exp().colwise().sum().log();
    t.log_softmax.rowwise() -= lse;
    for (Eigen::Index j = 0; j < n; ++j) {
      const int a = category_index({actions(0, j)}, static_cast<std::size_t>(ac.action_dim));
      result.log_prob[j] = t.log_softmax(a, j);
      double h = 0.0;
      for (int k = 0; k < ac.action_dim; ++k) {
        const double p = std::exp(t.log_softmax(k, j));
        if (p > 0.0) h -= p * t.log_softmax(k, j);
      }
      result.entropy[j] = h;
    }
  }

  if (!critic_params.empty()) {
    t.critic = forward_batch(ac.critic_spec, critic_params, obs);
    result.value = t.critic.output().row(0).transpose();
  }
  if (!all_finite({result.log_prob.data(), static_cast<std::size_t>(n)}))
    throw numerical_error("evaluate_batch: non-finite log-probability");
  return result;
}

// Accumulates into `grad` (full actor|log_std|critic layout) the gradient of
// sum_j [d_log_prob_j * log_prob_j + d_entropy_j * entropy_j + d_value_j * value_j].
inline void backprop_batch(const ActorCritic& ac, std::span<const double> params, const PolicyTape& tape,
                           const Eigen::MatrixXd& actions, const Eigen::VectorXd& d_log_prob,
                           const Eigen::VectorXd& d_entropy, const Eigen::VectorXd& d_value,
                           std::span<double> grad) {
  const Eigen::MatrixXd& out = tape.actor.output();
  const auto n = out.cols();
  Eigen::MatrixXd d_out(out.rows(), n);
  if (ac.head == HeadKind::DiagGaussian) {
    const Eigen::ArrayXd inv_std = (-tape.log_std.array()).exp();
    const Eigen::ArrayXXd z = (actions - out).array().colwise() * inv_std;
    // dlogp/dmean = z / std; dlogp/dlog_std = z^2 - 1; dH/dlog_std = 1.
    d_out = ((z.colwise() * inv_std).rowwise() * d_log_prob.array().transpose()).matrix();
    const Eigen::VectorXd d_ls = ((z.square() - 1.0).matrix() * d_log_prob).array() + d_entropy.sum();
    const auto ls_range = ac.log_std_range();
    for (int d = 0; d < ac.action_dim; ++d) {
      const double raw = params[ls_range.offset + d];
      if (raw >= kLogStdMin && raw <= kLogStdMax) grad[ls_range.offset + d] += d_ls[d];
    }
  } else {
    const Eigen::ArrayXXd p = tape.log_softmax.array().exp();
    for (Eigen::Index j = 0; j < n; ++j) {
      const int a = static_cast<int>(actions(0, j));
      double h = 0.0;
      for (int k = 0; k < ac.action_dim; ++k)
        if (p(k, j) > 0.0) h -= p(k, j) * tape.log_softmax(k, j);
      for (int k = 0; k < ac.action_dim; ++k) {
        const double dlogp = (k == a ? 1.0 : 0.0) - p(k, j);
        const double dent = p(k, j) > 0.0 ? -p(k, j) * (tape.log_softmax(k, j) + h) : 0.0;
        d_out(k, j) = d_log_prob[j] * dlogp + d_entropy[j] * dent;
      }
    }
  }
  const auto actor_range = ac.actor_range();
  backward(ac.actor_spec, params.subspan(actor_range.offset, actor_range.size), tape.actor, std::move(d_out),
           grad.subspan(actor_range.offset, actor_range.size));
  if (d_value.size() > 0) {
    const auto critic_range = ac.critic_range();
    backward(ac.critic_spec, params.subspan(critic_range.offset, critic_range.size), tape.critic,
             d_value.transpose(), grad.subspan(critic_range.offset, critic_range.size));
  }
}

}  // namespace poem
