#include <catch_amalgamated.hpp>

#include "cm3/oracle.hpp"

#include "test_support.hpp"

using namespace cm3;

namespace {

PolicyTables uniform_tables(const ToyMatrixGame& g) {
  PolicyTables t;
  t.pi.assign(g.num_agents(), std::vector<Vec>(g.n_states));
  for (int m = 0; m < g.num_agents(); ++m)
    for (int s = 0; s < g.n_states; ++s)
      t.pi[m][s].assign(g.actions_per_agent[m], 1.0 / g.actions_per_agent[m]);
  return t;
}

/// Deterministic single-agent chain terminal <- s1 <- s2 <- s3, reward 1
/// on every step, two interchangeable actions.
ToyMatrixGame chain_game(double gamma) {
  ToyMatrixGame g;
  g.actions_per_agent = {2};
  g.n_states = 4;
  g.gamma = gamma;
  g.max_steps = 10;
  g.initial_state = 3;
  g.terminal_states = {1, 0, 0, 0};
  g.transition.assign(4, std::vector<Vec>(2, Vec(4, 0.0)));
  g.reward.assign(1, std::vector<Vec>(4, Vec(2, 0.0)));
  for (int a = 0; a < 2; ++a) {
    g.transition[0][a][0] = 1.0;
    g.transition[1][a][0] = 1.0;
    g.transition[2][a][1] = 1.0;
    g.transition[3][a][2] = 1.0;
    g.reward[0][1][a] = 1.0;
    g.reward[0][2][a] = 1.0;
    g.reward[0][3][a] = 1.0;
  }
  g.validate();
  return g;
}

}  // namespace

TEST_CASE("gamma = 0 collapses Q to the immediate reward") {
  Rng rng(7);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 3, 2, 0.0);
  TabularSolution sol = solve_tabular(g, uniform_tables(g));
  for (int n = 0; n < 2; ++n)
    for (int s = 0; s < g.n_states; ++s)
      for (int ja = 0; ja < g.num_joint_actions(); ++ja)
        REQUIRE(sol.q[n][s][ja] == Catch::Approx(g.reward[n][s][ja]).margin(1e-14));
}

TEST_CASE("chain MDP value is the geometric sum") {
  double gamma = 0.9;
  ToyMatrixGame g = chain_game(gamma);
  TabularSolution sol = solve_tabular(g, uniform_tables(g));
  REQUIRE(sol.v[0][1] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(sol.v[0][2] == Catch::Approx(1.0 + gamma).margin(1e-12));
  REQUIRE(sol.v[0][3] == Catch::Approx(1.0 + gamma + gamma * gamma).margin(1e-12));
  REQUIRE(sol.v[0][0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("decoupled game: cross-agent credit is constant in the action") {
  Rng rng(11);
  ToyMatrixGame g = decoupled_two_agent_game(rng, 3, 2, 0.9, 4);
  // Policies must be decoupled as well, or agent 1's action would steer
  // agent 0's future action choices through the joint state.
  TabularSoftmaxPolicy pol = decoupled_chain_policy(g, 3, rng);
  TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
  // Goal 0 depends only on agent 0's chain, so agent 1's credit for goal 0
  // cannot vary with agent 1's action...
  for (int s = 0; s < g.n_states; ++s)
    REQUIRE(std::abs(sol.credit[0][1][s][0] - sol.credit[0][1][s][1]) < 1e-10);
  // ...while agent 0's own credit does vary somewhere.
  double spread = 0.0;
  for (int s = 0; s < g.n_states; ++s)
    spread = std::max(spread, std::abs(sol.credit[0][0][s][0] - sol.credit[0][0][s][1]));
  REQUIRE(spread > 1e-6);
}

TEST_CASE("identity suite holds on randomized games") {
  Rng rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    ToyMatrixGame g = random_toy_game(rng, 2, 4, 3, uniform_int(rng, 2, 3),
                                      uniform(rng, 0.5, 0.99));
    TabularSoftmaxPolicy pol =
        TabularSoftmaxPolicy::random(g, rng, 1.0, trial % 2 == 0 ? 0.0 : 0.1);
    TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
    IdentityReport rep = check_identities(g, sol);
    INFO("trial " << trial << " max residual " << rep.max_residual());
    REQUIRE(rep.all_pass());
  }
}

TEST_CASE("perturbing a credit entry is flagged by the credit identities only") {
  Rng rng(5);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 3, 2, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.5);
  TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
  sol.credit[0][1][1][0] += 1e-3;
  IdentityReport rep = check_identities(g, sol);
  for (const auto& c : rep.checks) {
    if (c.name == "credit_bellman" || c.name == "credit_from_joint_q")
      REQUIRE_FALSE(c.pass);
    if (c.name == "v_from_joint_q" || c.name == "q_bellman") REQUIRE(c.pass);
  }
}

TEST_CASE("non-stochastic transition rows are rejected") {
  Rng rng(3);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 2, 2, 0.9);
  g.transition[1][0][0] += 0.25;
  REQUIRE_THROWS_AS(solve_tabular(g, uniform_tables(g)), std::invalid_argument);
}

TEST_CASE("deterministic single-trajectory game: J equals the trajectory return") {
  double gamma = 0.8;
  ToyMatrixGame g = chain_game(gamma);
  g.actions_per_agent = {1};  // one action: a single possible trajectory
  g.transition.assign(4, std::vector<Vec>(1, Vec(4, 0.0)));
  g.reward.assign(1, std::vector<Vec>(4, Vec(1, 0.0)));
  g.transition[0][0][0] = 1.0;
  g.transition[1][0][0] = 1.0;
  g.transition[2][0][1] = 1.0;
  g.transition[3][0][2] = 1.0;
  g.reward[0][1][0] = 0.5;
  g.reward[0][2][0] = -1.0;
  g.reward[0][3][0] = 2.0;
  g.validate();
  Rng rng(1);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.0);
  ExactGrad eg = exact_objective_and_gradient(g, pol);
  REQUIRE(eg.trajectories == 1);
  REQUIRE(eg.objective == Catch::Approx(2.0 - gamma * 1.0 + gamma * gamma * 0.5).margin(1e-13));
}

TEST_CASE("enumeration agrees with the closed-form objective and gradient") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    ToyMatrixGame g = random_toy_game(rng, 2, 3, 3, 2, uniform(rng, 0.6, 0.99));
    TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.7, 0.05);
    ExactGrad a = exact_objective_and_gradient(g, pol);
    ExactGrad b = exact_objective_gradient_closed(g, pol);
    REQUIRE(a.objective == Catch::Approx(b.objective).margin(1e-9));
    for (size_t i = 0; i < a.grad.size(); ++i)
      REQUIRE(a.grad[i] == Catch::Approx(b.grad[i]).margin(1e-9));
  }
}

TEST_CASE("exact gradient matches central finite differences") {
  Rng rng(42);
  for (int trial = 0; trial < 3; ++trial) {
    ToyMatrixGame g = random_toy_game(rng, 2, 3, 2, 2, 0.9);
    TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.6, 0.02);
    ExactGrad eg = exact_objective_gradient_closed(g, pol);
    Vec fd = finite_difference_gradient(g, pol);
    double scale = 0.0;
    for (double v : fd) scale = std::max(scale, std::abs(v));
    for (size_t i = 0; i < fd.size(); ++i)
      REQUIRE(std::abs(eg.grad[i] - fd[i]) <= 1e-6 * std::max(1.0, scale));
  }
}

TEST_CASE("trajectory bound is enforced") {
  Rng rng(9);
  ToyMatrixGame g = random_toy_game(rng, 2, 4, 4, 3, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.3);
  REQUIRE_THROWS_AS(exact_objective_and_gradient(g, pol, 10), std::runtime_error);
}

TEST_CASE("cooperation probability closed form") {
  CooperationProbability p = cooperation_probability(0.5);
  // 2 * 0.25 * 0.625^8 and the uniform case 2 * (1/4)^8, both exact in
  // binary floating point.
  REQUIRE(std::abs(p.greedy_mix - 0.011641532182693481) < 1e-9);
  REQUIRE(std::abs(p.uniform - 3.0517578125e-5) < 1e-9);
  REQUIRE(cooperation_probability(0.0).greedy_mix == 0.0);
  REQUIRE_THROWS_AS(cooperation_probability(1.5), std::invalid_argument);
}

TEST_CASE("COMA variance: decomposition equals the direct second moment") {
  Rng rng(77);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 3, 2, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.8, 0.05);
  TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
  VarianceReport rep = exact_variance_coma(g, pol, sol);
  REQUIRE(rep.variance == Catch::Approx(rep.variance_direct).margin(1e-9));
  REQUIRE(rep.variance >= 0.0);
  REQUIRE(rep.zb_max < 1e-12);
}

TEST_CASE("CM3 variance: decomposition equals the direct second moment") {
  Rng rng(78);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 3, 2, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.8, 0.05);
  TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
  VarianceReport rep = exact_variance_cm3(g, pol, sol);
  REQUIRE(rep.variance == Catch::Approx(rep.variance_direct).margin(1e-9));
  REQUIRE(rep.variance >= 0.0);
}

TEST_CASE("closed-form variance matches the Monte-Carlo probe") {
  Rng rng(79);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 2, 2, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.8, 0.05);
  TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
  TabularCriticSet critics(g, sol);
  TabularComaCritic coma(g, sol);
  EstimatorInputs in;
  in.critics = &critics;
  in.coma = &coma;

  VarianceReport ex_cm3 = exact_variance_cm3(g, pol, sol);
  VarianceProbeResult pr_cm3 = variance_probe(Estimator::CM3, g, pol, in, 20000, 99);
  REQUIRE(std::abs(pr_cm3.variance - ex_cm3.variance) <= 3.0 * pr_cm3.variance_se);

  VarianceReport ex_coma = exact_variance_coma(g, pol, sol);
  VarianceProbeResult pr_coma = variance_probe(Estimator::COMA, g, pol, in, 20000, 99);
  REQUIRE(std::abs(pr_coma.variance - ex_coma.variance) <= 3.0 * pr_coma.variance_se);
}

TEST_CASE("probe rejects zero samples") {
  Rng rng(80);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 2, 2, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.5);
  TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
  TabularCriticSet critics(g, sol);
  EstimatorInputs in;
  in.critics = &critics;
  REQUIRE_THROWS_AS(variance_probe(Estimator::CM3, g, pol, in, 0, 1), std::invalid_argument);
}
