#pragma once

// Critic-side interfaces consumed by the policy-gradient estimators. Both
// the learned neural critics and the exact tabular critics implement these.

#include "cm3/game.hpp"

namespace cm3 {

/// Per-goal global action-value Q_n(s, a) and credit function Q_n(s, a^m).
/// Observations ride along because some critic bodies consume the
/// goal-owner's observation tensors in addition to the state.
class CriticSet {
 public:
  virtual ~CriticSet() = default;
  virtual double global_q(const DecomposedState& state,
                          std::span<const DecomposedObservation> observations,
                          std::span<const Vec> goals, int goal_index,
                          std::span<const int> joint_action) const = 0;
  virtual double credit_q(const DecomposedState& state,
                          std::span<const DecomposedObservation> observations,
                          std::span<const Vec> goals, int goal_index, int actor_index,
                          int action) const = 0;
};

/// COMA-style critic: joint goal, total reward, one output per own action.
class ComaCriticModel {
 public:
  virtual ~ComaCriticModel() = default;
  /// Q(s, a^{-n}, a^n = i, g) for every own action i of agent n.
  virtual Vec own_action_values(const DecomposedState& state,
                                const DecomposedObservation& obs_n,
                                std::span<const Vec> goals, int agent,
                                std::span<const int> joint_action) const = 0;
};

/// Per-agent state value over local observation and goal (IAC critic).
class StateValueModel {
 public:
  virtual ~StateValueModel() = default;
  virtual double value(const DecomposedObservation& obs, const Vec& goal) const = 0;
};

}  // namespace cm3
