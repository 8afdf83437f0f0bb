#pragma once

// Explicitly tabular multi-goal Markov games, small enough for exhaustive
// enumeration. Verification substrate for the dynamic-programming oracle
// and the gradient-estimator checks.

#include "cm3/game.hpp"

namespace cm3 {

/// Fully tabular game: explicit S, per-agent A, P, per-goal R. Terminal
/// states are absorbing with zero reward, so finite-horizon episodes match
/// the discounted infinite-horizon values exactly.
class ToyMatrixGame final : public MultiGoalGame {
 public:
  int n_states = 0;
  std::vector<int> actions_per_agent;         // |A^m| per agent
  double gamma = 0.95;
  int max_steps = 5;
  int initial_state = 0;
  std::vector<uint8_t> terminal_states;       // absorbing flags, size n_states
  // transition[s][ja] is a distribution over successor states.
  std::vector<std::vector<Vec>> transition;
  // reward[n][s][ja] = R(s, a, g^n); goal n is held by agent n.
  std::vector<std::vector<Vec>> reward;

  int n_agents() const { return static_cast<int>(actions_per_agent.size()); }
  int num_joint_actions() const {
    int k = 1;
    for (int a : actions_per_agent) k *= a;
    return k;
  }
  /// Mixed-radix joint-action index; agent 0 is the fastest-varying digit.
  int joint_index(std::span<const int> actions) const {
    int idx = 0, stride = 1;
    for (int m = 0; m < n_agents(); ++m) {
      idx += actions[m] * stride;
      stride *= actions_per_agent[m];
    }
    return idx;
  }
  std::vector<int> unpack_joint(int ja) const {
    std::vector<int> a(n_agents());
    for (int m = 0; m < n_agents(); ++m) {
      a[m] = ja % actions_per_agent[m];
      ja /= actions_per_agent[m];
    }
    return a;
  }

  /// Throws unless every transition row is a probability distribution.
  void validate() const {
    for (int s = 0; s < n_states; ++s)
      for (int ja = 0; ja < num_joint_actions(); ++ja) {
        const Vec& row = transition.at(s).at(ja);
        if (static_cast<int>(row.size()) != n_states)
          throw std::invalid_argument("transition row has wrong length");
        double sum = 0.0;
        for (double p : row) {
          if (p < -1e-12) throw std::invalid_argument("negative transition probability");
          sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
          throw std::invalid_argument("non-stochastic transition row");
      }
  }

  // --- MultiGoalGame interface -------------------------------------------

  std::string name() const override { return "toy"; }
  int num_agents() const override { return n_agents(); }
  int num_actions(int agent) const override { return actions_per_agent.at(agent); }
  double discount() const override { return gamma; }
  int horizon() const override { return max_steps; }

  FeatureSpec features() const override {
    FeatureSpec f;
    f.state_env_segments = {};
    f.agent_state_dim = 1;  // state index replicated per agent slot
    f.o_self_segments = {SegmentDef{.flat = 1}};
    f.o_others_segments = {SegmentDef{.flat = 1}};
    f.goal_dim = n_agents();
    return f;
  }

  void seed(uint64_t s) override { rng_ = substream(s, 0x70F); }
  void reset() override {
    state_ = initial_state;
    steps_ = 0;
    done_ = false;
  }
  StepResult step(std::span<const int> actions) override {
    if (static_cast<int>(actions.size()) != n_agents())
      throw std::invalid_argument("step: wrong joint action size");
    if (done_) throw std::logic_error("step after terminal");
    int ja = joint_index(actions);
    StepResult r;
    r.rewards.resize(n_agents());
    for (int n = 0; n < n_agents(); ++n) r.rewards[n] = reward[n][state_][ja];
    state_ = sample_categorical(rng_, transition[state_][ja]);
    ++steps_;
    if (terminal_states[state_]) {
      r.terminal = true;
    } else if (steps_ >= max_steps) {
      r.terminal = true;
      r.timeout = true;
    }
    done_ = r.terminal;
    return r;
  }

  DecomposedState state() const override {
    DecomposedState s;
    s.agent_parts.assign(n_agents(), Vec{static_cast<double>(state_)});
    return s;
  }
  DecomposedObservation observe(int agent) const override {
    (void)agent;
    // Fully observed: every agent sees the state index.
    return DecomposedObservation{{static_cast<double>(state_)},
                                 {static_cast<double>(state_)}};
  }
  Vec goal(int agent) const override { return one_hot(agent, n_agents()); }

  bool reducible() const override { return reducible_; }
  std::unique_ptr<MultiGoalGame> induced_mdp() const override {
    if (!reducible_)
      throw std::logic_error("unsupported-reduction: game declares itself irreducible");
    return std::make_unique<ToyMatrixGame>(*induced_);
  }
  std::unique_ptr<MultiGoalGame> clone() const override {
    return std::make_unique<ToyMatrixGame>(*this);
  }

  /// Declares this game reducible with the given single-agent reduction.
  void set_induced(ToyMatrixGame mdp) {
    induced_ = std::make_shared<ToyMatrixGame>(std::move(mdp));
    reducible_ = true;
  }

  int current_state() const { return state_; }

 private:
  Rng rng_{0};
  int state_ = 0;
  int steps_ = 0;
  bool done_ = false;
  bool reducible_ = false;
  std::shared_ptr<ToyMatrixGame> induced_;
};

/// Uniformly random enumerable game: Dirichlet-ish transition rows (uniform
/// spacings) and rewards in [-1, 1]. Layered so that every trajectory
/// terminates by the horizon, which keeps trajectory enumeration exact.
inline ToyMatrixGame random_toy_game(Rng& rng, int n_agents, int states_per_layer,
                                     int layers, int actions, double gamma) {
  ToyMatrixGame g;
  g.actions_per_agent.assign(n_agents, actions);
  // Layer t holds states [1 + t*states_per_layer, ...); state 0 is terminal.
  g.n_states = 1 + layers * states_per_layer;
  g.gamma = gamma;
  g.max_steps = layers;  // from the first layer every path reaches terminal
  g.initial_state = 1;
  g.terminal_states.assign(g.n_states, 0);
  g.terminal_states[0] = 1;
  int ja_count = g.num_joint_actions();
  g.transition.assign(g.n_states, std::vector<Vec>(ja_count, Vec(g.n_states, 0.0)));
  g.reward.assign(n_agents, std::vector<Vec>(g.n_states, Vec(ja_count, 0.0)));

  auto layer_of = [&](int s) { return (s - 1) / states_per_layer; };
  for (int s = 0; s < g.n_states; ++s) {
    for (int ja = 0; ja < ja_count; ++ja) {
      Vec& row = g.transition[s][ja];
      if (s == 0 || layer_of(s) == layers - 1) {
        row[0] = 1.0;  // absorb
      } else {
        // Random distribution over the next layer's states.
        int base = 1 + (layer_of(s) + 1) * states_per_layer;
        Vec cuts(states_per_layer - 1);
        for (double& c : cuts) c = uniform(rng, 0.0, 1.0);
        std::sort(cuts.begin(), cuts.end());
        double prev = 0.0;
        for (int k = 0; k < states_per_layer; ++k) {
          double next = (k == states_per_layer - 1) ? 1.0 : cuts[k];
          row[base + k] = next - prev;
          prev = next;
        }
      }
      if (s != 0)
        for (int n = 0; n < n_agents; ++n) g.reward[n][s][ja] = uniform(rng, -1.0, 1.0);
    }
  }
  g.validate();
  return g;
}

/// Two independent single-agent chains glued into one game: agent m's
/// action only moves its own chain and only affects goal m's reward.
/// Used to check that cross-agent credit is constant and that the induced
/// MDP preserves the lone agent's trajectory distribution.
inline ToyMatrixGame decoupled_two_agent_game(Rng& rng, int chain_states, int actions,
                                              double gamma, int steps) {
  // Component chain: states 0..chain_states-1, no terminal (episode ends by
  // horizon); per-action random row over the chain, per-action reward.
  auto make_chain = [&](std::vector<std::vector<Vec>>& P, std::vector<Vec>& R) {
    P.assign(chain_states, std::vector<Vec>(actions, Vec(chain_states, 0.0)));
    R.assign(chain_states, Vec(actions, 0.0));
    for (int s = 0; s < chain_states; ++s)
      for (int a = 0; a < actions; ++a) {
        double left = 1.0;
        for (int k = 0; k < chain_states; ++k) {
          double p = (k == chain_states - 1) ? left : uniform(rng, 0.0, left);
          P[s][a][k] = p;
          left -= p;
        }
        R[s][a] = uniform(rng, -1.0, 1.0);
      }
  };
  std::vector<std::vector<Vec>> P0, P1;
  std::vector<Vec> R0, R1;
  make_chain(P0, R0);
  make_chain(P1, R1);

  ToyMatrixGame g;
  g.actions_per_agent = {actions, actions};
  g.n_states = chain_states * chain_states;  // (s0, s1) pairs
  g.gamma = gamma;
  g.max_steps = steps;
  g.initial_state = 0;
  g.terminal_states.assign(g.n_states, 0);
  int ja_count = g.num_joint_actions();
  g.transition.assign(g.n_states, std::vector<Vec>(ja_count, Vec(g.n_states, 0.0)));
  g.reward.assign(2, std::vector<Vec>(g.n_states, Vec(ja_count, 0.0)));
  for (int s0 = 0; s0 < chain_states; ++s0)
    for (int s1 = 0; s1 < chain_states; ++s1) {
      int s = s0 * chain_states + s1;
      for (int a0 = 0; a0 < actions; ++a0)
        for (int a1 = 0; a1 < actions; ++a1) {
          int ja = g.joint_index(std::array{a0, a1});
          for (int t0 = 0; t0 < chain_states; ++t0)
            for (int t1 = 0; t1 < chain_states; ++t1)
              g.transition[s][ja][t0 * chain_states + t1] = P0[s0][a0][t0] * P1[s1][a1][t1];
          g.reward[0][s][ja] = R0[s0][a0];
          g.reward[1][s][ja] = R1[s1][a1];
        }
    }

  // The induced MDP is agent 0's chain alone.
  ToyMatrixGame m;
  m.actions_per_agent = {actions};
  m.n_states = chain_states;
  m.gamma = gamma;
  m.max_steps = steps;
  m.initial_state = 0;
  m.terminal_states.assign(chain_states, 0);
  m.transition.assign(chain_states, std::vector<Vec>(actions, Vec(chain_states, 0.0)));
  m.reward.assign(1, std::vector<Vec>(chain_states, Vec(actions, 0.0)));
  for (int s = 0; s < chain_states; ++s)
    for (int a = 0; a < actions; ++a) {
      m.transition[s][a] = P0[s][a];
      m.reward[0][s][a] = R0[s][a];
    }
  m.validate();
  g.set_induced(std::move(m));
  g.validate();
  return g;
}

}  // namespace cm3
