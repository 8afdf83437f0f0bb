#pragma once

// Ground-truth machinery for enumerable games: exact dynamic programming
// (value, joint action-value, and credit tables), the marginalization and
// Bellman identity checks, exhaustive objective/gradient evaluation,
// closed-form estimator variance, and the greedy-initialization
// cooperation probability.

#include <Eigen/Dense>

#include "cm3/gradients.hpp"
#include "cm3/toy_game.hpp"

namespace cm3 {

inline DecomposedObservation toy_observation(int s) {
  return DecomposedObservation{{static_cast<double>(s)}, {static_cast<double>(s)}};
}
inline DecomposedState toy_state(int s, int n_agents) {
  DecomposedState d;
  d.agent_parts.assign(n_agents, Vec{static_cast<double>(s)});
  return d;
}

/// Per-agent action-probability tables pi^m(a | s).
struct PolicyTables {
  std::vector<std::vector<Vec>> pi;  // [agent][state][action]

  double joint(const ToyMatrixGame& g, int s, std::span<const int> actions) const {
    double p = 1.0;
    for (int m = 0; m < g.num_agents(); ++m) p *= pi[m][s][actions[m]];
    return p;
  }
  /// Product over all agents except `skip`.
  double others(const ToyMatrixGame& g, int s, std::span<const int> actions, int skip) const {
    double p = 1.0;
    for (int m = 0; m < g.num_agents(); ++m)
      if (m != skip) p *= pi[m][s][actions[m]];
    return p;
  }
};

inline PolicyTables tabulate_policy(const ToyMatrixGame& game, const PolicyModel& policy) {
  PolicyTables t;
  int N = game.num_agents();
  t.pi.assign(N, std::vector<Vec>(game.n_states));
  for (int m = 0; m < N; ++m)
    for (int s = 0; s < game.n_states; ++s)
      t.pi[m][s] = policy.action_probabilities(toy_observation(s), game.goal(m));
  return t;
}

/// Exact tables from dynamic programming on an enumerable game.
struct TabularSolution {
  double gamma = 0.0;
  std::vector<Vec> v;                                  // [goal n][s]
  std::vector<std::vector<Vec>> q;                     // [goal n][s][joint action]
  std::vector<std::vector<std::vector<Vec>>> credit;   // [goal n][agent m][s][a^m]
  PolicyTables policy;
};

/// Solves for V, joint Q, and the credit tables under a fixed stochastic
/// policy. V comes from the linear system (I - gamma P^pi) V = r^pi; Q from
/// the one-step backup; the credit function from its own Bellman fixed
/// point, independently of the joint-Q route, so the credit/global
/// marginalization identity is a genuine cross-check.
inline TabularSolution solve_tabular(const ToyMatrixGame& game, const PolicyTables& tables) {
  game.validate();
  const int S = game.n_states;
  const int N = game.num_agents();
  const int JA = game.num_joint_actions();
  const double gamma = game.gamma;

  TabularSolution sol;
  sol.gamma = gamma;
  sol.policy = tables;

  // Joint policy per state.
  std::vector<Vec> joint(S, Vec(JA));
  for (int s = 0; s < S; ++s)
    for (int ja = 0; ja < JA; ++ja) {
      auto acts = game.unpack_joint(ja);
      joint[s][ja] = tables.joint(game, s, acts);
    }

  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s)
    for (int ja = 0; ja < JA; ++ja)
      if (joint[s][ja] > 0.0)
        for (int sp = 0; sp < S; ++sp)
          p_pi(s, sp) += joint[s][ja] * game.transition[s][ja][sp];

  Eigen::MatrixXd sys = Eigen::MatrixXd::Identity(S, S) - gamma * p_pi;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);

  sol.v.assign(N, Vec(S, 0.0));
  sol.q.assign(N, std::vector<Vec>(S, Vec(JA, 0.0)));
  for (int n = 0; n < N; ++n) {
    Eigen::VectorXd r_pi = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s)
      for (int ja = 0; ja < JA; ++ja) r_pi(s) += joint[s][ja] * game.reward[n][s][ja];
    Eigen::VectorXd v = lu.solve(r_pi);
    for (int s = 0; s < S; ++s) sol.v[n][s] = v(s);
    for (int s = 0; s < S; ++s)
      for (int ja = 0; ja < JA; ++ja) {
        double tail = 0.0;
        for (int sp = 0; sp < S; ++sp) tail += game.transition[s][ja][sp] * v(sp);
        sol.q[n][s][ja] = game.reward[n][s][ja] + gamma * tail;
      }
  }

  // Credit tables, one linear system per (goal, agent) pair over (s, a^m).
  sol.credit.assign(N, std::vector<std::vector<Vec>>(N));
  for (int m = 0; m < N; ++m) {
    const int A = game.actions_per_agent[m];
    const int D = S * A;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(D, D);
    std::vector<Eigen::VectorXd> b(N, Eigen::VectorXd::Zero(D));
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        int row = s * A + a;
        for (int ja = 0; ja < JA; ++ja) {
          auto acts = game.unpack_joint(ja);
          if (acts[m] != a) continue;
          double w = tables.others(game, s, acts, m);
          if (w == 0.0) continue;
          for (int n = 0; n < N; ++n) b[n](row) += w * game.reward[n][s][ja];
          for (int sp = 0; sp < S; ++sp) {
            double pw = w * game.transition[s][ja][sp];
            if (pw == 0.0) continue;
            for (int ap = 0; ap < A; ++ap)
              M(row, sp * A + ap) += pw * tables.pi[m][sp][ap];
          }
        }
      }
    Eigen::PartialPivLU<Eigen::MatrixXd> clu(Eigen::MatrixXd::Identity(D, D) - gamma * M);
    for (int n = 0; n < N; ++n) {
      Eigen::VectorXd x = clu.solve(b[n]);
      sol.credit[n][m].assign(S, Vec(A, 0.0));
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) sol.credit[n][m][s][a] = x(s * A + a);
    }
  }
  return sol;
}

struct IdentityCheck {
  std::string name;
  double max_residual = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct IdentityReport {
  std::vector<IdentityCheck> checks;
  bool all_pass() const {
    for (auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
  double max_residual() const {
    double m = 0.0;
    for (auto& c : checks) m = std::max(m, c.max_residual);
    return m;
  }
};

/// Residuals of the credit-function Bellman equation, both value
/// decompositions, the joint-Q backup, and the credit/global
/// marginalization relation.
inline IdentityReport check_identities(const ToyMatrixGame& game, const TabularSolution& sol,
                                       double tol = 1e-10) {
  const int S = game.n_states;
  const int N = game.num_agents();
  const int JA = game.num_joint_actions();
  const PolicyTables& pt = sol.policy;

  IdentityReport rep;
  auto add = [&](const std::string& name, double res) {
    rep.checks.push_back({name, res, tol, res <= tol});
  };

  // Credit Bellman expectation equation.
  double r_bellman = 0.0;
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < N; ++m) {
      const int A = game.actions_per_agent[m];
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
          double rhs = 0.0;
          for (int ja = 0; ja < JA; ++ja) {
            auto acts = game.unpack_joint(ja);
            if (acts[m] != a) continue;
            double w = pt.others(game, s, acts, m);
            if (w == 0.0) continue;
            double term = game.reward[n][s][ja];
            for (int sp = 0; sp < S; ++sp) {
              double p = game.transition[s][ja][sp];
              if (p == 0.0) continue;
              double next = 0.0;
              for (int ap = 0; ap < A; ++ap)
                next += pt.pi[m][sp][ap] * sol.credit[n][m][sp][ap];
              term += game.gamma * p * next;
            }
            rhs += w * term;
          }
          r_bellman = std::max(r_bellman, std::abs(rhs - sol.credit[n][m][s][a]));
        }
    }
  add("credit_bellman", r_bellman);

  // V as the policy-weighted marginal of the credit function, every agent.
  double r_v_credit = 0.0;
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < N; ++m)
      for (int s = 0; s < S; ++s) {
        double acc = 0.0;
        for (int a = 0; a < game.actions_per_agent[m]; ++a)
          acc += pt.pi[m][s][a] * sol.credit[n][m][s][a];
        r_v_credit = std::max(r_v_credit, std::abs(acc - sol.v[n][s]));
      }
  add("v_from_credit", r_v_credit);

  // V as the joint-policy marginal of the joint action value.
  double r_v_q = 0.0;
  for (int n = 0; n < N; ++n)
    for (int s = 0; s < S; ++s) {
      double acc = 0.0;
      for (int ja = 0; ja < JA; ++ja) {
        auto acts = game.unpack_joint(ja);
        acc += pt.joint(game, s, acts) * sol.q[n][s][ja];
      }
      r_v_q = std::max(r_v_q, std::abs(acc - sol.v[n][s]));
    }
  add("v_from_joint_q", r_v_q);

  // Joint Q backup through V.
  double r_q = 0.0;
  for (int n = 0; n < N; ++n)
    for (int s = 0; s < S; ++s)
      for (int ja = 0; ja < JA; ++ja) {
        double tail = 0.0;
        for (int sp = 0; sp < S; ++sp) tail += game.transition[s][ja][sp] * sol.v[n][sp];
        double rhs = game.reward[n][s][ja] + game.gamma * tail;
        r_q = std::max(r_q, std::abs(rhs - sol.q[n][s][ja]));
      }
  add("q_bellman", r_q);

  // Credit as the other-agent marginal of the joint action value.
  double r_marg = 0.0;
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < N; ++m) {
      const int A = game.actions_per_agent[m];
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
          double acc = 0.0;
          for (int ja = 0; ja < JA; ++ja) {
            auto acts = game.unpack_joint(ja);
            if (acts[m] != a) continue;
            acc += pt.others(game, s, acts, m) * sol.q[n][s][ja];
          }
          r_marg = std::max(r_marg, std::abs(acc - sol.credit[n][m][s][a]));
        }
    }
  add("credit_from_joint_q", r_marg);

  return rep;
}

/// Tabular softmax policy over (goal slot, state): one shared model whose
/// goal input selects the logit table, mirroring goal-conditioned
/// parameter sharing. Uses the same exploration-floored distribution as
/// the learned policies.
class TabularSoftmaxPolicy final : public PolicyModel {
 public:
  int n_states = 0;
  std::vector<int> actions_per_goal;
  double epsilon = 0.0;
  std::vector<double> logits;  // [goal][state][action], goal-major

  static TabularSoftmaxPolicy random(const ToyMatrixGame& game, Rng& rng, double scale = 1.0,
                                     double eps = 0.0) {
    TabularSoftmaxPolicy p;
    p.n_states = game.n_states;
    p.epsilon = eps;
    for (int m = 0; m < game.num_agents(); ++m)
      p.actions_per_goal.push_back(game.actions_per_agent[m]);
    p.build_offsets();
    p.logits.resize(p.total_);
    for (double& v : p.logits) v = uniform(rng, -scale, scale);
    return p;
  }

  void build_offsets() {
    offsets_.clear();
    size_t off = 0;
    for (int a : actions_per_goal) {
      offsets_.push_back(off);
      off += static_cast<size_t>(n_states) * a;
    }
    total_ = off;
  }

  Vec action_probabilities(const DecomposedObservation& obs, const Vec& goal) const override {
    int g = argmax(goal);
    int s = static_cast<int>(obs.self_part.at(0));
    int A = actions_per_goal[g];
    const double* z = logits.data() + offsets_[g] + static_cast<size_t>(s) * A;
    Vec sm = softmax(std::span<const double>(z, A));
    for (int a = 0; a < A; ++a) sm[a] = (1.0 - epsilon) * sm[a] + epsilon / A;
    return sm;
  }

  size_t num_params() const override { return total_; }

  void accumulate_score_gradient(const DecomposedObservation& obs, const Vec& goal, int action,
                                 double weight, std::span<double> grad) const override {
    int g = argmax(goal);
    int s = static_cast<int>(obs.self_part.at(0));
    int A = actions_per_goal[g];
    size_t base = offsets_[g] + static_cast<size_t>(s) * A;
    Vec sm = softmax(std::span<const double>(logits.data() + base, A));
    double p = (1.0 - epsilon) * sm[action] + epsilon / A;
    for (int j = 0; j < A; ++j) {
      double dsm = sm[action] * ((j == action ? 1.0 : 0.0) - sm[j]);
      grad[base + j] += weight * (1.0 - epsilon) * dsm / p;
    }
  }

 private:
  std::vector<size_t> offsets_;
  size_t total_ = 0;
};

// --- Exact critics backed by the DP solution -------------------------------

class TabularCriticSet final : public CriticSet {
 public:
  TabularCriticSet(const ToyMatrixGame& game, const TabularSolution& sol)
      : game_(&game), sol_(&sol) {}
  double global_q(const DecomposedState& state, std::span<const DecomposedObservation>,
                  std::span<const Vec>, int goal_index,
                  std::span<const int> joint_action) const override {
    int s = static_cast<int>(state.agent_parts.at(0).at(0));
    return sol_->q[goal_index][s][game_->joint_index(joint_action)];
  }
  double credit_q(const DecomposedState& state, std::span<const DecomposedObservation>,
                  std::span<const Vec>, int goal_index, int actor_index,
                  int action) const override {
    int s = static_cast<int>(state.agent_parts.at(0).at(0));
    return sol_->credit[goal_index][actor_index][s][action];
  }

 private:
  const ToyMatrixGame* game_;
  const TabularSolution* sol_;
};

/// Total-reward joint critic for COMA, assembled from the per-goal tables.
class TabularComaCritic final : public ComaCriticModel {
 public:
  TabularComaCritic(const ToyMatrixGame& game, const TabularSolution& sol)
      : game_(&game), sol_(&sol) {}
  Vec own_action_values(const DecomposedState& state, const DecomposedObservation&,
                        std::span<const Vec>, int agent,
                        std::span<const int> joint_action) const override {
    int s = static_cast<int>(state.agent_parts.at(0).at(0));
    std::vector<int> acts(joint_action.begin(), joint_action.end());
    Vec out(game_->actions_per_agent[agent], 0.0);
    for (int a = 0; a < game_->actions_per_agent[agent]; ++a) {
      acts[agent] = a;
      int ja = game_->joint_index(acts);
      double total = 0.0;
      for (int n = 0; n < game_->num_agents(); ++n) total += sol_->q[n][s][ja];
      out[a] = total;
    }
    return out;
  }

 private:
  const ToyMatrixGame* game_;
  const TabularSolution* sol_;
};

class TabularValueModel final : public StateValueModel {
 public:
  explicit TabularValueModel(const TabularSolution& sol) : sol_(&sol) {}
  double value(const DecomposedObservation& obs, const Vec& goal) const override {
    return sol_->v[argmax(goal)][static_cast<int>(obs.self_part.at(0))];
  }

 private:
  const TabularSolution* sol_;
};

// --- Discounted occupancy and exact objective/gradient ---------------------

/// Unnormalized discounted state occupancy rho(s) = sum_t gamma^t P(s_t=s),
/// from the transpose linear system.
inline Vec discounted_occupancy(const ToyMatrixGame& game, const PolicyTables& tables) {
  const int S = game.n_states;
  Eigen::MatrixXd p_pi = Eigen::MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s)
    for (int ja = 0; ja < game.num_joint_actions(); ++ja) {
      auto acts = game.unpack_joint(ja);
      double w = tables.joint(game, s, acts);
      if (w == 0.0) continue;
      for (int sp = 0; sp < S; ++sp) p_pi(s, sp) += w * game.transition[s][ja][sp];
    }
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(S);
  e0(game.initial_state) = 1.0;
  Eigen::MatrixXd sys = Eigen::MatrixXd::Identity(S, S) - game.gamma * p_pi.transpose();
  Eigen::VectorXd rho = Eigen::PartialPivLU<Eigen::MatrixXd>(sys).solve(e0);
  Vec out(S);
  for (int s = 0; s < S; ++s) out[s] = rho(s);
  return out;
}

struct ExactGrad {
  double objective = 0.0;
  Vec grad;
  size_t trajectories = 0;
};

/// Brute-force route: enumerate every trajectory up to the horizon,
/// differentiating the trajectory probability analytically. Exact for
/// games whose trajectories all reach an absorbing state by the horizon.
inline ExactGrad exact_objective_and_gradient(const ToyMatrixGame& game,
                                              const PolicyModel& policy,
                                              size_t bound = 1000000) {
  const int N = game.num_agents();
  ExactGrad out;
  out.grad.assign(policy.num_params(), 0.0);

  std::vector<Vec> goals(N);
  for (int n = 0; n < N; ++n) goals[n] = game.goal(n);

  struct Visit {
    int state;
    std::vector<int> actions;
  };
  std::vector<Visit> path;

  auto leaf = [&](double prob, double ret) {
    if (++out.trajectories > bound)
      throw std::runtime_error("exact_objective_and_gradient: trajectory bound exceeded");
    out.objective += prob * ret;
    double w = prob * ret;
    if (w == 0.0 && ret == 0.0) return;
    for (const Visit& v : path) {
      DecomposedObservation obs = toy_observation(v.state);
      for (int m = 0; m < N; ++m)
        policy.accumulate_score_gradient(obs, goals[m], v.actions[m], w, out.grad);
    }
  };

  // Depth-first over (state, joint action, successor) with running
  // probability and discounted total-reward sum over all goals.
  auto dfs = [&](auto&& self, int s, int t, double prob, double ret) -> void {
    if (game.terminal_states[s] || t >= game.max_steps) {
      leaf(prob, ret);
      return;
    }
    DecomposedObservation obs = toy_observation(s);
    for (int ja = 0; ja < game.num_joint_actions(); ++ja) {
      auto acts = game.unpack_joint(ja);
      double pa = 1.0;
      for (int m = 0; m < N; ++m)
        pa *= policy.action_probabilities(obs, goals[m]).at(acts[m]);
      if (pa == 0.0) continue;
      double r = 0.0;
      for (int n = 0; n < N; ++n) r += game.reward[n][s][ja];
      path.push_back({s, acts});
      for (int sp = 0; sp < game.n_states; ++sp) {
        double pt = game.transition[s][ja][sp];
        if (pt == 0.0) continue;
        self(self, sp, t + 1, prob * pa * pt, ret + std::pow(game.gamma, t) * r);
      }
      path.pop_back();
    }
  };
  dfs(dfs, game.initial_state, 0, 1.0, 0.0);
  return out;
}

/// Closed-form route via the policy gradient theorem: J = sum_n V_n(s0)
/// and grad J from the discounted occupancy and the exact joint Q tables.
/// Valid for any enumerable game, absorbing or not.
inline ExactGrad exact_objective_gradient_closed(const ToyMatrixGame& game,
                                                 const PolicyModel& policy) {
  const int N = game.num_agents();
  PolicyTables tables = tabulate_policy(game, policy);
  TabularSolution sol = solve_tabular(game, tables);
  Vec rho = discounted_occupancy(game, tables);

  ExactGrad out;
  out.grad.assign(policy.num_params(), 0.0);
  for (int n = 0; n < N; ++n) out.objective += sol.v[n][game.initial_state];

  std::vector<Vec> goals(N);
  for (int n = 0; n < N; ++n) goals[n] = game.goal(n);
  for (int s = 0; s < game.n_states; ++s) {
    if (rho[s] == 0.0) continue;
    DecomposedObservation obs = toy_observation(s);
    for (int ja = 0; ja < game.num_joint_actions(); ++ja) {
      auto acts = game.unpack_joint(ja);
      double pa = tables.joint(game, s, acts);
      if (pa == 0.0) continue;
      double qsum = 0.0;
      for (int n = 0; n < N; ++n) qsum += sol.q[n][s][ja];
      double w = rho[s] * pa * qsum;
      if (w == 0.0) continue;
      for (int m = 0; m < N; ++m)
        policy.accumulate_score_gradient(obs, goals[m], acts[m], w, out.grad);
    }
  }
  return out;
}

/// J(theta) alone, for finite-differencing: the exact discounted objective
/// under the current policy parameters.
inline double exact_objective(const ToyMatrixGame& game, const PolicyModel& policy) {
  PolicyTables tables = tabulate_policy(game, policy);
  TabularSolution sol = solve_tabular(game, tables);
  double j = 0.0;
  for (int n = 0; n < game.num_agents(); ++n) j += sol.v[n][game.initial_state];
  return j;
}

/// Central finite differences of the exact objective w.r.t. the tabular
/// policy logits.
inline Vec finite_difference_gradient(const ToyMatrixGame& game, TabularSoftmaxPolicy policy,
                                      double step = 1e-5) {
  Vec grad(policy.num_params());
  for (size_t i = 0; i < policy.logits.size(); ++i) {
    double saved = policy.logits[i];
    policy.logits[i] = saved + step;
    double jp = exact_objective(game, policy);
    policy.logits[i] = saved - step;
    double jm = exact_objective(game, policy);
    policy.logits[i] = saved;
    grad[i] = (jp - jm) / (2.0 * step);
  }
  return grad;
}

/// Builds one synthetic transition for every (s, a, s') triple reachable
/// under the policy, weighted by gamma-discounted occupancy; used to
/// evaluate estimator expectations exactly.
inline Vec estimator_exact_expectation(Estimator e, const ToyMatrixGame& game,
                                       const PolicyModel& policy, const EstimatorInputs& in,
                                       const PairMask* mask = nullptr) {
  const int N = game.num_agents();
  PolicyTables tables = tabulate_policy(game, policy);
  Vec rho = discounted_occupancy(game, tables);
  Vec grad(policy.num_params(), 0.0);

  Transition t;
  t.goals.resize(N);
  for (int n = 0; n < N; ++n) t.goals[n] = game.goal(n);
  t.observations.resize(N);
  t.next_observations.resize(N);
  t.rewards.resize(N);

  for (int s = 0; s < game.n_states; ++s) {
    if (rho[s] == 0.0) continue;
    t.state = toy_state(s, N);
    for (int n = 0; n < N; ++n) t.observations[n] = toy_observation(s);
    for (int ja = 0; ja < game.num_joint_actions(); ++ja) {
      t.actions = game.unpack_joint(ja);
      double pa = tables.joint(game, s, t.actions);
      if (pa == 0.0) continue;
      for (int n = 0; n < N; ++n) t.rewards[n] = game.reward[n][s][ja];
      for (int sp = 0; sp < game.n_states; ++sp) {
        double pt = game.transition[s][ja][sp];
        if (pt == 0.0) continue;
        t.next_state = toy_state(sp, N);
        for (int n = 0; n < N; ++n) t.next_observations[n] = toy_observation(sp);
        t.terminal = game.terminal_states[sp] != 0;
        accumulate_estimator_sample(e, policy, in, t, rho[s] * pa * pt, grad, mask);
      }
    }
  }
  return grad;
}

// --- Closed-form variance (App C decompositions) ---------------------------

struct VarianceReport {
  double variance = 0.0;         // decomposition total
  double variance_direct = 0.0;  // E||X||^2 - ||E[X]||^2, direct route
  Vec mean;
  double m_term = 0.0;        // ||E[sum_n f_n]||^2 (COMA)
  double zb_max = 0.0;        // max_n ||E[z_n b_n]||, derivation says 0
  std::vector<std::vector<double>> pair_variance;    // Var(h_nm) / diag f_n
  std::vector<std::vector<double>> pair_covariance;  // Cov(h_n, h_m), n != m
};

namespace detail {

/// Enumerates the normalized on-policy distribution (s ~ rho/|rho|,
/// a ~ pi(.|s)), yielding (weight, state, joint action) triples.
template <typename F>
void for_each_weighted_sample(const ToyMatrixGame& game, const PolicyTables& tables,
                              F&& fn) {
  Vec rho = discounted_occupancy(game, tables);
  double z = std::accumulate(rho.begin(), rho.end(), 0.0);
  for (int s = 0; s < game.n_states; ++s) {
    if (rho[s] == 0.0) continue;
    for (int ja = 0; ja < game.num_joint_actions(); ++ja) {
      auto acts = game.unpack_joint(ja);
      double pa = tables.joint(game, s, acts);
      if (pa == 0.0) continue;
      fn(rho[s] / z * pa, s, acts);
    }
  }
}

}  // namespace detail

/// Closed-form variance of the COMA estimator sample under the normalized
/// discounted on-policy distribution, per the counterfactual-baseline
/// decomposition (score-weighted total-reward critic).
inline VarianceReport exact_variance_coma(const ToyMatrixGame& game,
                                          const TabularSoftmaxPolicy& policy,
                                          const TabularSolution& sol) {
  const int N = game.num_agents();
  const size_t D = policy.num_params();
  PolicyTables tables = tabulate_policy(game, policy);

  VarianceReport rep;
  rep.mean.assign(D, 0.0);
  rep.pair_variance.assign(N, std::vector<double>(N, 0.0));
  rep.pair_covariance.assign(N, std::vector<double>(N, 0.0));

  // Accumulators: E[f_n] per n, E[z_n b_n], plus the scalar terms.
  std::vector<Vec> mean_f(N, Vec(D, 0.0));
  std::vector<Vec> mean_zb(N, Vec(D, 0.0));
  double term1 = 0.0, term2 = 0.0, e_xx = 0.0;
  std::vector<std::vector<double>> e_ff(N, std::vector<double>(N, 0.0));

  std::vector<Vec> z(N, Vec(D, 0.0));
  detail::for_each_weighted_sample(game, tables, [&](double w, int s, const std::vector<int>& acts) {
    int ja = game.joint_index(acts);
    double q_tot = 0.0;
    for (int n = 0; n < N; ++n) q_tot += sol.q[n][s][ja];
    DecomposedObservation obs = toy_observation(s);

    // Counterfactual baselines b_n(s, a^{-n}) over the total-reward critic.
    Vec b(N, 0.0);
    std::vector<int> cf = acts;
    for (int n = 0; n < N; ++n) {
      double acc = 0.0;
      for (int a = 0; a < game.actions_per_agent[n]; ++a) {
        cf[n] = a;
        double qa = 0.0;
        int cja = game.joint_index(cf);
        for (int k = 0; k < N; ++k) qa += sol.q[k][s][cja];
        acc += tables.pi[n][s][a] * qa;
      }
      cf[n] = acts[n];
      b[n] = acc;
    }

    for (int n = 0; n < N; ++n) {
      std::fill(z[n].begin(), z[n].end(), 0.0);
      policy.accumulate_score_gradient(obs, game.goal(n), acts[n], 1.0, z[n]);
    }
    Vec znorm2(N, 0.0), zdot(N * N, 0.0);
    for (int n = 0; n < N; ++n)
      for (int m = n; m < N; ++m) {
        double d = 0.0;
        for (size_t k = 0; k < D; ++k) d += z[n][k] * z[m][k];
        zdot[n * N + m] = zdot[m * N + n] = d;
      }
    for (int n = 0; n < N; ++n) znorm2[n] = zdot[n * N + n];

    double x_dot = 0.0;
    for (int n = 0; n < N; ++n) {
      double fn = q_tot - b[n];
      term1 += w * znorm2[n] * (q_tot * q_tot - 2.0 * b[n] * q_tot + b[n] * b[n]);
      for (int m = 0; m < N; ++m) {
        double fm = q_tot - b[m];
        double cross = zdot[n * N + m] * fn * fm;
        if (m != n) term2 += w * cross;
        e_ff[n][m] += w * cross;
        x_dot += cross;
      }
      for (size_t k = 0; k < D; ++k) {
        mean_f[n][k] += w * z[n][k] * fn;
        mean_zb[n][k] += w * z[n][k] * b[n];
        rep.mean[k] += w * z[n][k] * fn;
      }
    }
    e_xx += w * x_dot;
  });

  double mean_norm2 = 0.0;
  for (size_t k = 0; k < D; ++k) mean_norm2 += rep.mean[k] * rep.mean[k];
  rep.m_term = mean_norm2;  // M = sum_{n,m} E[f_n]^T E[f_m]
  rep.variance = term1 + term2 - rep.m_term;
  rep.variance_direct = e_xx - mean_norm2;
  for (int n = 0; n < N; ++n) {
    double nb = 0.0;
    for (size_t k = 0; k < D; ++k) nb += mean_zb[n][k] * mean_zb[n][k];
    rep.zb_max = std::max(rep.zb_max, std::sqrt(nb));
  }
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < N; ++m) {
      double dot = 0.0;
      for (size_t k = 0; k < D; ++k) dot += mean_f[n][k] * mean_f[m][k];
      if (n == m)
        rep.pair_variance[n][n] = e_ff[n][n] - dot;
      else
        rep.pair_covariance[n][m] = e_ff[n][m] - dot;
    }
  return rep;
}

/// Closed-form variance of the credit-function estimator sample: total
/// variance assembled from per-(goal, agent) term variances and their
/// covariances.
inline VarianceReport exact_variance_cm3(const ToyMatrixGame& game,
                                         const TabularSoftmaxPolicy& policy,
                                         const TabularSolution& sol) {
  const int N = game.num_agents();
  const size_t D = policy.num_params();
  PolicyTables tables = tabulate_policy(game, policy);

  VarianceReport rep;
  rep.mean.assign(D, 0.0);
  rep.pair_variance.assign(N, std::vector<double>(N, 0.0));
  rep.pair_covariance.assign(N, std::vector<double>(N, 0.0));

  // h_{nm} = z_m (Q_n - b_nm); h_n = sum_m h_nm.
  std::vector<std::vector<Vec>> mean_h(N, std::vector<Vec>(N, Vec(D, 0.0)));
  std::vector<std::vector<double>> e_hh_nm(N, std::vector<double>(N, 0.0));  // E[h_nm.h_nm]
  // E[h_n . h_m] for the goal-level covariance terms.
  std::vector<std::vector<double>> e_hn_hm(N, std::vector<double>(N, 0.0));
  // E[h_nm . h_nk] within one goal.
  std::vector<std::vector<std::vector<double>>> e_nm_nk(
      N, std::vector<std::vector<double>>(N, std::vector<double>(N, 0.0)));
  double e_xx = 0.0;

  std::vector<Vec> z(N, Vec(D, 0.0));
  detail::for_each_weighted_sample(game, tables, [&](double w, int s, const std::vector<int>& acts) {
    int ja = game.joint_index(acts);
    DecomposedObservation obs = toy_observation(s);
    for (int m = 0; m < N; ++m) {
      std::fill(z[m].begin(), z[m].end(), 0.0);
      policy.accumulate_score_gradient(obs, game.goal(m), acts[m], 1.0, z[m]);
    }
    std::vector<std::vector<double>> zdot(N, std::vector<double>(N, 0.0));
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < N; ++m) {
        double d = 0.0;
        for (size_t k = 0; k < D; ++k) d += z[n][k] * z[m][k];
        zdot[n][m] = d;
      }
    // Scalar weights c_nm with h_nm = c_nm z_m.
    std::vector<std::vector<double>> c(N, std::vector<double>(N, 0.0));
    for (int n = 0; n < N; ++n) {
      double qn = sol.q[n][s][ja];
      for (int m = 0; m < N; ++m) {
        double b = 0.0;
        for (int a = 0; a < game.actions_per_agent[m]; ++a)
          b += tables.pi[m][s][a] * sol.credit[n][m][s][a];
        c[n][m] = qn - b;
      }
    }
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < N; ++m)
        for (size_t k = 0; k < D; ++k) {
          double h = c[n][m] * z[m][k];
          mean_h[n][m][k] += w * h;
          rep.mean[k] += w * h;
        }
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < N; ++m) {
        e_hh_nm[n][m] += w * c[n][m] * c[n][m] * zdot[m][m];
        for (int k = 0; k < N; ++k)
          e_nm_nk[n][m][k] += w * c[n][m] * c[n][k] * zdot[m][k];
      }
    // E[h_n . h_n2] and E[||X||^2] from the scalar form h_nm = c_nm z_m.
    for (int n = 0; n < N; ++n)
      for (int n2 = 0; n2 < N; ++n2) {
        double acc = 0.0;
        for (int m = 0; m < N; ++m)
          for (int m2 = 0; m2 < N; ++m2) acc += c[n][m] * c[n2][m2] * zdot[m][m2];
        e_hn_hm[n][n2] += w * acc;
        e_xx += w * acc;
      }
  });

  double mean_norm2 = 0.0;
  for (size_t k = 0; k < D; ++k) mean_norm2 += rep.mean[k] * rep.mean[k];
  rep.variance_direct = e_xx - mean_norm2;

  // Assemble the decomposition: Var(sum_n h_n) =
  //   sum_n [ sum_m Var(h_nm) + sum_{m != k} Cov(h_nm, h_nk) ]
  //   + sum_{n != m} Cov(h_n, h_m)
  std::vector<Vec> mean_hn(N, Vec(D, 0.0));
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < N; ++m)
      for (size_t k = 0; k < D; ++k) mean_hn[n][k] += mean_h[n][m][k];

  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    for (int m = 0; m < N; ++m) {
      double mn = 0.0;
      for (size_t k = 0; k < D; ++k) mn += mean_h[n][m][k] * mean_h[n][m][k];
      double var_nm = e_hh_nm[n][m] - mn;
      rep.pair_variance[n][m] = var_nm;
      total += var_nm;
      for (int k2 = 0; k2 < N; ++k2) {
        if (k2 == m) continue;
        double dot = 0.0;
        for (size_t k = 0; k < D; ++k) dot += mean_h[n][m][k] * mean_h[n][k2][k];
        total += e_nm_nk[n][m][k2] - dot;
      }
    }
  }
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < N; ++m) {
      if (m == n) continue;
      double dot = 0.0;
      for (size_t k = 0; k < D; ++k) dot += mean_hn[n][k] * mean_hn[m][k];
      double cov = e_hn_hm[n][m] - dot;
      rep.pair_covariance[n][m] = cov;
      total += cov;
    }
  rep.variance = total;
  return rep;
}

/// Deterministic sampler over the normalized discounted on-policy
/// distribution of an enumerable game, for the Monte-Carlo variance probe.
class ToySampler {
 public:
  ToySampler(const ToyMatrixGame& game, const PolicyTables& tables, uint64_t seed)
      : game_(&game), tables_(tables), rng_(substream(seed, 0x5A)) {
    rho_ = discounted_occupancy(game, tables_);
  }
  Transition operator()() {
    const int N = game_->num_agents();
    int s = sample_categorical(rng_, rho_);
    Transition t;
    t.state = toy_state(s, N);
    t.observations.resize(N);
    t.next_observations.resize(N);
    t.goals.resize(N);
    t.actions.resize(N);
    t.rewards.resize(N);
    for (int n = 0; n < N; ++n) {
      t.observations[n] = toy_observation(s);
      t.goals[n] = game_->goal(n);
      t.actions[n] = sample_categorical(rng_, tables_.pi[n][s]);
    }
    int ja = game_->joint_index(t.actions);
    for (int n = 0; n < N; ++n) t.rewards[n] = game_->reward[n][s][ja];
    int sp = sample_categorical(rng_, game_->transition[s][ja]);
    t.next_state = toy_state(sp, N);
    for (int n = 0; n < N; ++n) t.next_observations[n] = toy_observation(sp);
    t.terminal = game_->terminal_states[sp] != 0;
    return t;
  }

 private:
  const ToyMatrixGame* game_;
  PolicyTables tables_;
  Rng rng_;
  Vec rho_;
};

/// Spec-shaped probe entry point: Monte-Carlo moments of an estimator on an
/// enumerable game.
inline VarianceProbeResult variance_probe(Estimator e, const ToyMatrixGame& game,
                                          const TabularSoftmaxPolicy& policy,
                                          const EstimatorInputs& in, size_t num_samples,
                                          uint64_t seed) {
  PolicyTables tables = tabulate_policy(game, policy);
  auto factory = [&]() { return ToySampler(game, tables, seed); };
  return variance_probe(e, policy, in, factory, num_samples, game.num_agents());
}

// --- Greedy-initialization cooperation probability --------------------------

struct CooperationProbability {
  double greedy_mix = 0.0;  // epsilon-greedy agents
  double uniform = 0.0;     // uniform-random agents (epsilon = 1 case)
};

/// Probability of the symmetric optimal trajectory in the 4x3 two-agent
/// corridor thought experiment: 2 eps^2 ((1-eps) + eps/4)^8, with the
/// uniform-exploration case given by eps = 1.
inline CooperationProbability cooperation_probability(double eps) {
  if (eps < 0.0 || eps > 1.0)
    throw std::invalid_argument("cooperation_probability: eps outside [0,1]");
  auto f = [](double e) { return 2.0 * e * e * std::pow((1.0 - e) + e / 4.0, 8); };
  return CooperationProbability{f(eps), f(1.0)};
}

}  // namespace cm3
