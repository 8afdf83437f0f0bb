#include <catch_amalgamated.hpp>

#include "cm3/oracle.hpp"

#include "test_support.hpp"

using namespace cm3;

namespace {

/// Fixed two-action policy assigning probability p to action 0.
class FixedPolicy final : public PolicyModel {
 public:
  explicit FixedPolicy(Vec probs) : probs_(std::move(probs)) {}
  Vec action_probabilities(const DecomposedObservation&, const Vec&) const override {
    return probs_;
  }
  size_t num_params() const override { return 0; }
  void accumulate_score_gradient(const DecomposedObservation&, const Vec&, int, double,
                                 std::span<double>) const override {}

 private:
  Vec probs_;
};

}  // namespace

TEST_CASE("joint policy probability is the product of per-agent probabilities") {
  FixedPolicy half({0.5, 0.5});
  FixedPolicy zero({0.0, 1.0});
  DecomposedState s;
  s.agent_parts = {{0.0}, {0.0}};
  std::vector<DecomposedObservation> obs(2);
  std::vector<Vec> goals = {{1.0, 0.0}, {0.0, 1.0}};
  std::vector<int> action = {0, 0};

  const PolicyModel* both_half[] = {&half, &half};
  REQUIRE(joint_policy_probability(both_half, s, obs, goals, action) ==
          Catch::Approx(0.25));

  const PolicyModel* with_zero[] = {&half, &zero};
  REQUIRE(joint_policy_probability(with_zero, s, obs, goals, action) == 0.0);

  const PolicyModel* one_policy[] = {&half};
  REQUIRE_THROWS_AS(joint_policy_probability(one_policy, s, obs, goals, action),
                    std::invalid_argument);
}

TEST_CASE("joint policy probability sums to one over the joint action space") {
  Rng rng(31);
  ToyMatrixGame g = random_toy_game(rng, 3, 2, 2, 3, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 1.0, 0.05);
  g.seed(4);
  g.reset();
  DecomposedState s = g.state();
  std::vector<DecomposedObservation> obs;
  std::vector<Vec> goals;
  std::vector<const PolicyModel*> policies;
  for (int n = 0; n < g.num_agents(); ++n) {
    obs.push_back(g.observe(n));
    goals.push_back(g.goal(n));
    policies.push_back(&pol);
  }
  double total = 0.0;
  for (int ja = 0; ja < g.num_joint_actions(); ++ja) {
    auto acts = g.unpack_joint(ja);
    total += joint_policy_probability(policies, s, obs, goals, acts);
  }
  REQUIRE(total == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("toy rollouts return one reward per agent and stop at terminal") {
  Rng rng(13);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 3, 2, 0.9);
  g.seed(17);
  for (int ep = 0; ep < 20; ++ep) {
    g.reset();
    bool done = false;
    int steps = 0;
    while (!done) {
      std::vector<int> a = {uniform_int(rng, 0, 1), uniform_int(rng, 0, 1)};
      StepResult r = g.step(a);
      REQUIRE(r.rewards.size() == 2);
      done = r.terminal;
      ++steps;
      REQUIRE(steps <= g.horizon());
    }
  }
}

TEST_CASE("rollouts are deterministic given seed and action sequence") {
  Rng rng(14);
  ToyMatrixGame g = random_toy_game(rng, 2, 4, 3, 2, 0.9);
  auto run = [&](uint64_t seed) {
    std::vector<int> states;
    g.seed(seed);
    for (int ep = 0; ep < 5; ++ep) {
      g.reset();
      bool done = false;
      int k = 0;
      while (!done) {
        StepResult r = g.step(std::array{k % 2, (k + 1) % 2});
        states.push_back(g.current_state());
        done = r.terminal;
        ++k;
      }
    }
    return states;
  };
  REQUIRE(run(5) == run(5));
  REQUIRE(run(5) != run(6));
}

TEST_CASE("induced MDP errors on irreducible games") {
  Rng rng(15);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 2, 2, 0.9);
  REQUIRE_FALSE(g.reducible());
  REQUIRE_THROWS_AS(induce_single_agent_mdp(g), std::logic_error);
}

TEST_CASE("induced MDP preserves the lone agent's trajectory distribution") {
  Rng rng(16);
  ToyMatrixGame g = decoupled_two_agent_game(rng, 3, 2, 0.9, 4);
  auto mdp_ptr = induce_single_agent_mdp(g);
  auto& m = dynamic_cast<ToyMatrixGame&>(*mdp_ptr);
  REQUIRE(m.num_agents() == 1);

  // Agent 0 acts on its own chain only; its marginal occupancy in the full
  // game must equal its occupancy in the induced MDP.
  TabularSoftmaxPolicy pol_m;
  pol_m.n_states = m.n_states;
  pol_m.actions_per_goal = {2};
  pol_m.build_offsets();
  pol_m.logits.resize(pol_m.num_params());
  for (double& v : pol_m.logits) v = uniform(rng, -0.8, 0.8);
  TabularSoftmaxPolicy pol_full =
      decoupled_chain_policy(g, m.n_states, rng, pol_m.logits);

  Vec rho_full = discounted_occupancy(g, tabulate_policy(g, pol_full));
  Vec rho_m = discounted_occupancy(m, tabulate_policy(m, pol_m));
  const int n_chain = m.n_states;
  for (int s0 = 0; s0 < n_chain; ++s0) {
    double marg = 0.0;
    for (int s1 = 0; s1 < n_chain; ++s1) marg += rho_full[s0 * n_chain + s1];
    REQUIRE(marg == Catch::Approx(rho_m[s0]).margin(1e-10));
  }
}
