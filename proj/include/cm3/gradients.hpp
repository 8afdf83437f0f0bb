#pragma once

// Policy-gradient estimators: the credit-function multi-goal gradient, its
// single-agent Stage-1 form, and the COMA / IAC / QV baselines. All are
// pure functions over policy/critic snapshots and a minibatch of
// transitions, and all expose a per-sample accumulation path so the exact
// oracle can evaluate their expectations by enumeration.

#include "cm3/model.hpp"

namespace cm3 {

enum class Estimator { CM3, Stage1, COMA, IAC, QV };

inline const char* to_string(Estimator e) {
  switch (e) {
    case Estimator::CM3: return "cm3";
    case Estimator::Stage1: return "stage1";
    case Estimator::COMA: return "coma";
    case Estimator::IAC: return "iac";
    case Estimator::QV: return "qv";
  }
  return "?";
}

/// Optional (n, m) goal/agent pair mask for environments with known sparse
/// interactions. Null mask means the full double sum.
struct PairMask {
  std::vector<std::vector<uint8_t>> allow;  // [n][m]
  bool allows(int n, int m) const { return allow[n][m] != 0; }
  static PairMask single(int n, int m, int count) {
    PairMask p;
    p.allow.assign(count, std::vector<uint8_t>(count, 0));
    p.allow[n][m] = 1;
    return p;
  }
};

/// Per-(n,m) advantage of agent m's chosen action for goal n: the global
/// action value minus the policy-weighted credit baseline over agent m's
/// alternatives.
inline double cm3_advantage(const PolicyModel& policy, const CriticSet& critics,
                            const DecomposedState& s, std::span<const DecomposedObservation> obs,
                            std::span<const Vec> goals, std::span<const int> actions,
                            int goal_index, int agent_index) {
  double qg = critics.global_q(s, obs, goals, goal_index, actions);
  Vec p = policy.action_probabilities(obs[agent_index], goals[agent_index]);
  double baseline = 0.0;
  for (size_t a = 0; a < p.size(); ++a)
    baseline +=
        p[a] * critics.credit_q(s, obs, goals, goal_index, agent_index, static_cast<int>(a));
  return qg - baseline;
}

inline void accumulate_cm3_sample(const PolicyModel& policy, const CriticSet& critics,
                                  const Transition& t, double weight, std::span<double> grad,
                                  const PairMask* mask = nullptr) {
  const int n_agents = static_cast<int>(t.actions.size());
  std::vector<double> qg(n_agents);
  for (int n = 0; n < n_agents; ++n)
    qg[n] = critics.global_q(t.state, t.observations, t.goals, n, t.actions);
  for (int m = 0; m < n_agents; ++m) {
    Vec p = policy.action_probabilities(t.observations[m], t.goals[m]);
    double w = 0.0;
    for (int n = 0; n < n_agents; ++n) {
      if (mask && !mask->allows(n, m)) continue;
      double baseline = 0.0;
      for (size_t a = 0; a < p.size(); ++a)
        baseline += p[a] * critics.credit_q(t.state, t.observations, t.goals, n, m,
                                             static_cast<int>(a));
      w += qg[n] - baseline;
    }
    if (w != 0.0)
      policy.accumulate_score_gradient(t.observations[m], t.goals[m], t.actions[m],
                                       weight * w, grad);
  }
}

/// Single-agent actor-critic gradient with the counterfactual-average
/// baseline; the N = 1 collapse of the multi-goal gradient.
inline void accumulate_stage1_sample(const PolicyModel& policy, const CriticSet& critic,
                                     const Transition& t, double weight,
                                     std::span<double> grad) {
  Vec p = policy.action_probabilities(t.observations[0], t.goals[0]);
  const int n_a = static_cast<int>(p.size());
  double baseline = 0.0;
  Vec q(n_a);
  for (int a = 0; a < n_a; ++a) {
    int joint[1] = {a};
    q[a] = critic.global_q(t.state, t.observations, t.goals, 0, joint);
    baseline += p[a] * q[a];
  }
  double adv = q[t.actions[0]] - baseline;
  if (adv != 0.0)
    policy.accumulate_score_gradient(t.observations[0], t.goals[0], t.actions[0],
                                     weight * adv, grad);
}

inline void accumulate_coma_sample(const PolicyModel& policy, const ComaCriticModel& critic,
                                   const Transition& t, double weight,
                                   std::span<double> grad) {
  const int n_agents = static_cast<int>(t.actions.size());
  for (int n = 0; n < n_agents; ++n) {
    Vec q = critic.own_action_values(t.state, t.observations[n], t.goals, n, t.actions);
    Vec p = policy.action_probabilities(t.observations[n], t.goals[n]);
    double baseline = 0.0;
    for (size_t a = 0; a < p.size(); ++a) baseline += p[a] * q[a];
    double adv = q[t.actions[n]] - baseline;
    if (adv != 0.0)
      policy.accumulate_score_gradient(t.observations[n], t.goals[n], t.actions[n],
                                       weight * adv, grad);
  }
}

inline void accumulate_iac_sample(const PolicyModel& policy, const StateValueModel& value,
                                  const StateValueModel& value_target, double gamma,
                                  const Transition& t, double weight,
                                  std::span<double> grad) {
  const int n_agents = static_cast<int>(t.actions.size());
  for (int n = 0; n < n_agents; ++n) {
    double bootstrap =
        t.terminal ? 0.0 : value_target.value(t.next_observations[n], t.goals[n]);
    double td = t.rewards[n] + gamma * bootstrap - value.value(t.observations[n], t.goals[n]);
    if (td != 0.0)
      policy.accumulate_score_gradient(t.observations[n], t.goals[n], t.actions[n],
                                       weight * td, grad);
  }
}

/// QV ablation: the per-(n,m) credit baseline collapses to the
/// agent-independent V_n(s), obtained from the credit function through the
/// marginalization relation (averaged over agents for symmetry).
inline void accumulate_qv_sample(const PolicyModel& policy, const CriticSet& critics,
                                 const Transition& t, double weight, std::span<double> grad,
                                 const PairMask* mask = nullptr) {
  const int n_agents = static_cast<int>(t.actions.size());
  std::vector<Vec> probs(n_agents);
  for (int m = 0; m < n_agents; ++m)
    probs[m] = policy.action_probabilities(t.observations[m], t.goals[m]);
  Vec adv(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    double v = 0.0;
    for (int m = 0; m < n_agents; ++m) {
      double vm = 0.0;
      for (size_t a = 0; a < probs[m].size(); ++a)
        vm += probs[m][a] * critics.credit_q(t.state, t.observations, t.goals, n, m,
                                             static_cast<int>(a));
      v += vm;
    }
    v /= n_agents;
    adv[n] = critics.global_q(t.state, t.observations, t.goals, n, t.actions) - v;
  }
  for (int m = 0; m < n_agents; ++m) {
    double w = 0.0;
    for (int n = 0; n < n_agents; ++n) {
      if (mask && !mask->allows(n, m)) continue;
      w += adv[n];
    }
    if (w != 0.0)
      policy.accumulate_score_gradient(t.observations[m], t.goals[m], t.actions[m],
                                       weight * w, grad);
  }
}

// --- Minibatch forms (mean over samples, ascent direction) ----------------

inline Vec cm3_policy_gradient(const PolicyModel& policy, const CriticSet& critics,
                               std::span<const Transition> batch,
                               const PairMask* mask = nullptr) {
  Vec grad(policy.num_params(), 0.0);
  if (batch.empty()) return grad;
  double w = 1.0 / static_cast<double>(batch.size());
  for (const Transition& t : batch) accumulate_cm3_sample(policy, critics, t, w, grad, mask);
  return grad;
}

inline Vec stage1_policy_gradient(const PolicyModel& policy, const CriticSet& critic,
                                  std::span<const Transition> batch) {
  Vec grad(policy.num_params(), 0.0);
  if (batch.empty()) return grad;
  double w = 1.0 / static_cast<double>(batch.size());
  for (const Transition& t : batch) accumulate_stage1_sample(policy, critic, t, w, grad);
  return grad;
}

inline Vec coma_policy_gradient(const PolicyModel& policy, const ComaCriticModel& critic,
                                std::span<const Transition> batch) {
  Vec grad(policy.num_params(), 0.0);
  if (batch.empty()) return grad;
  double w = 1.0 / static_cast<double>(batch.size());
  for (const Transition& t : batch) accumulate_coma_sample(policy, critic, t, w, grad);
  return grad;
}

inline Vec iac_policy_gradient(const PolicyModel& policy, const StateValueModel& value,
                               const StateValueModel& value_target, double gamma,
                               std::span<const Transition> batch) {
  Vec grad(policy.num_params(), 0.0);
  if (batch.empty()) return grad;
  double w = 1.0 / static_cast<double>(batch.size());
  for (const Transition& t : batch)
    accumulate_iac_sample(policy, value, value_target, gamma, t, w, grad);
  return grad;
}

inline Vec qv_policy_gradient(const PolicyModel& policy, const CriticSet& critics,
                              std::span<const Transition> batch,
                              const PairMask* mask = nullptr) {
  Vec grad(policy.num_params(), 0.0);
  if (batch.empty()) return grad;
  double w = 1.0 / static_cast<double>(batch.size());
  for (const Transition& t : batch) accumulate_qv_sample(policy, critics, t, w, grad, mask);
  return grad;
}

/// Everything an estimator may need, in one bundle (unused members may stay
/// null for a given estimator).
struct EstimatorInputs {
  const CriticSet* critics = nullptr;
  const ComaCriticModel* coma = nullptr;
  const StateValueModel* value = nullptr;
  const StateValueModel* value_target = nullptr;
  double gamma = 0.0;
};

inline void accumulate_estimator_sample(Estimator e, const PolicyModel& policy,
                                        const EstimatorInputs& in, const Transition& t,
                                        double weight, std::span<double> grad,
                                        const PairMask* mask = nullptr) {
  switch (e) {
    case Estimator::CM3: accumulate_cm3_sample(policy, *in.critics, t, weight, grad, mask); break;
    case Estimator::Stage1: accumulate_stage1_sample(policy, *in.critics, t, weight, grad); break;
    case Estimator::COMA: accumulate_coma_sample(policy, *in.coma, t, weight, grad); break;
    case Estimator::IAC:
      accumulate_iac_sample(policy, *in.value, *in.value_target, in.gamma, t, weight, grad);
      break;
    case Estimator::QV: accumulate_qv_sample(policy, *in.critics, t, weight, grad, mask); break;
  }
}

/// Isolates the n-th agent term of a per-agent estimator (COMA, IAC,
/// Stage1) by accumulating only that agent's contribution.
inline void accumulate_single_agent_term(Estimator e, const PolicyModel& policy,
                                         const EstimatorInputs& in, const Transition& t,
                                         int agent, std::span<double> grad) {
  switch (e) {
    case Estimator::COMA: {
      Vec q = in.coma->own_action_values(t.state, t.observations[agent], t.goals, agent,
                                         t.actions);
      Vec p = policy.action_probabilities(t.observations[agent], t.goals[agent]);
      double baseline = 0.0;
      for (size_t a = 0; a < p.size(); ++a) baseline += p[a] * q[a];
      double adv = q[t.actions[agent]] - baseline;
      if (adv != 0.0)
        policy.accumulate_score_gradient(t.observations[agent], t.goals[agent],
                                         t.actions[agent], adv, grad);
      break;
    }
    case Estimator::IAC: {
      double bootstrap =
          t.terminal ? 0.0 : in.value_target->value(t.next_observations[agent], t.goals[agent]);
      double td = t.rewards[agent] + in.gamma * bootstrap -
                  in.value->value(t.observations[agent], t.goals[agent]);
      if (td != 0.0)
        policy.accumulate_score_gradient(t.observations[agent], t.goals[agent],
                                         t.actions[agent], td, grad);
      break;
    }
    case Estimator::Stage1:
      accumulate_stage1_sample(policy, *in.critics, t, 1.0, grad);
      break;
    default:
      throw std::logic_error("accumulate_single_agent_term: not a per-agent estimator");
  }
}

struct VarianceProbeResult {
  Vec mean;                // empirical E[X]
  double variance = 0.0;   // empirical trace-covariance of X
  double variance_se = 0.0;  // standard error of the variance estimate
  size_t samples = 0;
  // Per-(n,m) term statistics (COMA terms live on the diagonal).
  std::vector<std::vector<double>> term_variance;
  std::vector<std::vector<Vec>> term_mean;
};

/// Monte-Carlo mean/variance of a per-sample gradient estimate. `sampler`
/// must yield i.i.d. transitions from the target on-policy distribution;
/// it is invoked twice (two passes over the same stream), so it must be
/// deterministic for a given construction.
template <typename SamplerFactory>
VarianceProbeResult variance_probe(Estimator e, const PolicyModel& policy,
                                   const EstimatorInputs& in, SamplerFactory make_sampler,
                                   size_t num_samples, int n_agents) {
  if (num_samples == 0) throw std::invalid_argument("variance_probe: zero samples");
  const size_t dim = policy.num_params();
  VarianceProbeResult r;
  r.samples = num_samples;
  r.mean.assign(dim, 0.0);
  r.term_mean.assign(n_agents, std::vector<Vec>(n_agents, Vec(dim, 0.0)));
  r.term_variance.assign(n_agents, std::vector<double>(n_agents, 0.0));
  std::vector<std::vector<double>> term_sumsq(n_agents, std::vector<double>(n_agents, 0.0));

  const bool has_pairs = (e == Estimator::CM3 || e == Estimator::QV);
  Vec x(dim), h(dim);
  double sumsq = 0.0;
  {
    auto sampler = make_sampler();
    for (size_t i = 0; i < num_samples; ++i) {
      Transition t = sampler();
      std::fill(x.begin(), x.end(), 0.0);
      for (int n = 0; n < n_agents; ++n)
        for (int m = 0; m < n_agents; ++m) {
          if (!has_pairs && n != m) continue;
          std::fill(h.begin(), h.end(), 0.0);
          PairMask mask = PairMask::single(n, m, n_agents);
          if (has_pairs) {
            accumulate_estimator_sample(e, policy, in, t, 1.0, h, &mask);
          } else {
            accumulate_single_agent_term(e, policy, in, t, n, h);
          }
          double nh = 0.0;
          for (size_t k = 0; k < dim; ++k) {
            x[k] += h[k];
            r.term_mean[n][m][k] += h[k];
            nh += h[k] * h[k];
          }
          term_sumsq[n][m] += nh;
        }
      double nx = 0.0;
      for (size_t k = 0; k < dim; ++k) {
        r.mean[k] += x[k];
        nx += x[k] * x[k];
      }
      sumsq += nx;
    }
  }
  double inv = 1.0 / static_cast<double>(num_samples);
  double mean_norm2 = 0.0;
  for (size_t k = 0; k < dim; ++k) {
    r.mean[k] *= inv;
    mean_norm2 += r.mean[k] * r.mean[k];
  }
  r.variance = sumsq * inv - mean_norm2;
  for (int n = 0; n < n_agents; ++n)
    for (int m = 0; m < n_agents; ++m) {
      double mn2 = 0.0;
      for (size_t k = 0; k < dim; ++k) {
        r.term_mean[n][m][k] *= inv;
        mn2 += r.term_mean[n][m][k] * r.term_mean[n][m][k];
      }
      r.term_variance[n][m] = term_sumsq[n][m] * inv - mn2;
    }

  // Second pass: standard error of the variance estimate.
  {
    auto sampler = make_sampler();
    double sy = 0.0, syy = 0.0;
    for (size_t i = 0; i < num_samples; ++i) {
      Transition t = sampler();
      std::fill(x.begin(), x.end(), 0.0);
      accumulate_estimator_sample(e, policy, in, t, 1.0, x);
      double y = 0.0;
      for (size_t k = 0; k < dim; ++k) {
        double d = x[k] - r.mean[k];
        y += d * d;
      }
      sy += y;
      syy += y * y;
    }
    double my = sy * inv;
    double var_y = std::max(0.0, syy * inv - my * my);
    r.variance_se = std::sqrt(var_y / static_cast<double>(num_samples));
  }
  return r;
}

}  // namespace cm3
