#pragma once

// Multi-goal Markov game contract: decomposed states and observations,
// replay transitions, the induced single-agent reduction, and the
// factorized joint policy probability.

#include <memory>
#include <optional>

#include "cm3/common.hpp"

namespace cm3 {

/// Global state split into environment features and per-agent features.
/// Concatenating env_part and agent_parts in agent order reconstructs the
/// full state vector.
struct DecomposedState {
  Vec env_part;
  std::vector<Vec> agent_parts;

  Vec flat() const {
    Vec out = env_part;
    for (const auto& a : agent_parts) append(out, a);
    return out;
  }
  /// Concatenation of all agent parts except agent `n`, in agent order.
  Vec others_flat(int n) const {
    Vec out;
    for (int i = 0; i < static_cast<int>(agent_parts.size()); ++i)
      if (i != n) append(out, agent_parts[i]);
    return out;
  }
};

/// Per-agent observation: self-only features plus an egocentric view of
/// the other agents (vector or flattened tensor, environment-defined).
struct DecomposedObservation {
  Vec self_part;
  Vec others_part;
};

struct StepResult {
  Vec rewards;     // one entry per agent (reward for that agent's goal)
  bool terminal = false;
  bool timeout = false;  // terminal due to horizon exhaustion
};

/// One replay record as stored by Algorithm-style trainers.
struct Transition {
  DecomposedState state;
  std::vector<DecomposedObservation> observations;
  std::vector<Vec> goals;
  std::vector<int> actions;
  Vec rewards;
  DecomposedState next_state;
  std::vector<DecomposedObservation> next_observations;
  bool terminal = false;
  bool timeout = false;
};

/// Tensor/vector layout of one input segment, used to wire conv branches.
struct SegmentDef {
  int h = 0, w = 0, c = 0;  // tensor dims (channel-last), all zero if flat
  int flat = 0;             // flat width if not a tensor
  bool is_tensor() const { return h > 0; }
  int dim() const { return is_tensor() ? h * w * c : flat; }
};

/// Feature dimensions a game exposes so function approximators can be wired
/// without per-environment special cases.
struct FeatureSpec {
  std::vector<SegmentDef> state_env_segments;
  int agent_state_dim = 0;
  std::vector<SegmentDef> o_self_segments;
  std::vector<SegmentDef> o_others_segments;
  int goal_dim = 0;

  int state_env_dim() const {
    int d = 0;
    for (auto& s : state_env_segments) d += s.dim();
    return d;
  }
  int o_self_dim() const {
    int d = 0;
    for (auto& s : o_self_segments) d += s.dim();
    return d;
  }
  int o_others_dim() const {
    int d = 0;
    for (auto& s : o_others_segments) d += s.dim();
    return d;
  }
};

/// Episodic multi-goal Markov game. Instances are single-owner: they hold
/// their own RNG streams (seeded once per run) and are not shared across
/// threads.
class MultiGoalGame {
 public:
  virtual ~MultiGoalGame() = default;

  virtual std::string name() const = 0;
  virtual int num_agents() const = 0;
  virtual int num_actions(int agent) const = 0;
  virtual double discount() const = 0;
  virtual int horizon() const = 0;

  virtual FeatureSpec features() const = 0;

  /// Seeds the game's internal dynamics and goal-sampling streams.
  virtual void seed(uint64_t s) = 0;
  /// Starts a new episode: draws the initial state and fixes per-agent
  /// goals for the whole episode.
  virtual void reset() = 0;
  /// Applies one joint action (exactly N entries) and returns N per-goal
  /// rewards. The termination predicate is evaluated after the action;
  /// horizon exhaustion reports terminal-with-timeout.
  virtual StepResult step(std::span<const int> actions) = 0;

  virtual DecomposedState state() const = 0;
  virtual DecomposedObservation observe(int agent) const = 0;
  virtual Vec goal(int agent) const = 0;
  /// Whether the agent's individual goal was met, evaluated at episode end.
  virtual bool agent_succeeded(int agent) const { return false; }

  /// True if the game supports removal of all agent-interaction terms.
  virtual bool reducible() const { return false; }
  /// N=1 reduction used by Stage 1. Only valid when reducible().
  virtual std::unique_ptr<MultiGoalGame> induced_mdp() const {
    throw std::logic_error("unsupported-reduction: game declares itself irreducible");
  }

  virtual std::unique_ptr<MultiGoalGame> clone() const = 0;
};

/// Induces the single-agent MDP of §-style Stage 1: one agent, no
/// cross-agent reward or transition terms, per-agent marginal goals.
inline std::unique_ptr<MultiGoalGame> induce_single_agent_mdp(const MultiGoalGame& game) {
  if (!game.reducible())
    throw std::logic_error("unsupported-reduction: game declares itself irreducible");
  auto mdp = game.induced_mdp();
  if (mdp->num_agents() != 1)
    throw std::logic_error("induced_mdp returned a game with N != 1");
  return mdp;
}

/// Decentralized policy interface: action distribution from local
/// observation and goal only. Implementations also expose their parameter
/// space so score-function gradients can be accumulated.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;
  virtual Vec action_probabilities(const DecomposedObservation& obs, const Vec& goal) const = 0;
  virtual size_t num_params() const = 0;
  /// Adds weight * d(log pi(action | obs, goal))/d(theta) into grad.
  virtual void accumulate_score_gradient(const DecomposedObservation& obs, const Vec& goal,
                                         int action, double weight,
                                         std::span<double> grad) const = 0;
};

/// pi(a|s,g) = prod_n pi^n(a^n | o^n, g^n).
inline double joint_policy_probability(std::span<const PolicyModel* const> policies,
                                       const DecomposedState& state,
                                       std::span<const DecomposedObservation> observations,
                                       std::span<const Vec> goals,
                                       std::span<const int> joint_action) {
  const size_t n = policies.size();
  if (observations.size() != n || goals.size() != n || joint_action.size() != n ||
      state.agent_parts.size() != n)
    throw std::invalid_argument("joint_policy_probability: dimension mismatch");
  double p = 1.0;
  for (size_t i = 0; i < n; ++i) {
    Vec probs = policies[i]->action_probabilities(observations[i], goals[i]);
    p *= probs.at(joint_action[i]);
  }
  return p;
}

}  // namespace cm3
