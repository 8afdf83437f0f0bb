#pragma once

// Learned-model adapters: goal-conditioned shared policy with the
// exploration-floored softmax head, and the critic-side interfaces backed
// by augmentable nets.

#include "cm3/arch.hpp"
#include "cm3/model.hpp"
#include "cm3/net.hpp"

namespace cm3 {

/// One policy network executed by every homogeneous agent (parameter
/// sharing); agents differ only through their observation and goal inputs.
class NeuralPolicy final : public PolicyModel {
 public:
  AugmentableNet net;
  FeatureAssembler assembler;
  double epsilon = 0.0;

  NeuralPolicy() = default;
  NeuralPolicy(AugmentableNet n, FeatureAssembler a) : net(std::move(n)), assembler(std::move(a)) {}

  Vec logits(const DecomposedObservation& obs, const Vec& goal) const {
    std::vector<Vec> segs = assembler.policy_main(obs, goal);
    if (net.stage == Stage::Two) {
      Vec side = assembler.policy_side(obs);
      return net.forward_one(segs, &side, ws_);
    }
    return net.forward_one(segs, nullptr, ws_);
  }

  Vec action_probabilities(const DecomposedObservation& obs, const Vec& goal) const override {
    return action_distribution(logits(obs, goal), epsilon);
  }

  int sample_action(const DecomposedObservation& obs, const Vec& goal, Rng& rng) const {
    return sample_categorical(rng, action_probabilities(obs, goal));
  }

  size_t num_params() const override { return net.num_params(); }

  void accumulate_score_gradient(const DecomposedObservation& obs, const Vec& goal, int action,
                                 double weight, std::span<double> grad) const override {
    Vec z = logits(obs, goal);  // fills ws_ for backward
    Vec g = action_log_prob_grad(z, epsilon, action);
    Mat upstream(g.size(), 1);
    for (size_t i = 0; i < g.size(); ++i) upstream(static_cast<int>(i), 0) = weight * g[i];
    net.backward(upstream, ws_, grad);
  }

 private:
  mutable Workspace ws_;
};

/// CriticPair mains exposed through the estimator-facing interface.
class NeuralCriticSet final : public CriticSet {
 public:
  const AugmentableNet* global = nullptr;
  const AugmentableNet* credit = nullptr;
  const FeatureAssembler* assembler = nullptr;

  NeuralCriticSet(const AugmentableNet& g, const AugmentableNet& c, const FeatureAssembler& a)
      : global(&g), credit(&c), assembler(&a) {}

  double global_q(const DecomposedState& state,
                  std::span<const DecomposedObservation> observations,
                  std::span<const Vec> goals, int n,
                  std::span<const int> joint_action) const override {
    std::vector<Vec> segs =
        assembler->q_main(state, observations[n], goals[n], n, joint_action[n]);
    if (global->stage == Stage::Two) {
      Vec side = assembler->q_global_side(state, goals, joint_action, n);
      return global->forward_one(segs, &side, ws_)[0];
    }
    return global->forward_one(segs, nullptr, ws_)[0];
  }

  double credit_q(const DecomposedState& state,
                  std::span<const DecomposedObservation> observations,
                  std::span<const Vec> goals, int n, int m, int action) const override {
    std::vector<Vec> segs = assembler->q_main(state, observations[n], goals[n], n, action);
    if (credit->stage == Stage::Two) {
      Vec side = assembler->q_credit_side(state, goals, n, m);
      return credit->forward_one(segs, &side, ws_)[0];
    }
    return credit->forward_one(segs, nullptr, ws_)[0];
  }

 private:
  mutable Workspace ws_;
};

class NeuralValueModel final : public StateValueModel {
 public:
  const AugmentableNet* net = nullptr;
  const FeatureAssembler* assembler = nullptr;

  NeuralValueModel(const AugmentableNet& n, const FeatureAssembler& a)
      : net(&n), assembler(&a) {}

  double value(const DecomposedObservation& obs, const Vec& goal) const override {
    std::vector<Vec> segs = assembler->iac_main(obs, goal);
    if (net->stage == Stage::Two) {
      Vec side = assembler->iac_side(obs);
      return net->forward_one(segs, &side, ws_)[0];
    }
    return net->forward_one(segs, nullptr, ws_)[0];
  }

 private:
  mutable Workspace ws_;
};

class NeuralComaCritic final : public ComaCriticModel {
 public:
  const AugmentableNet* net = nullptr;
  const FeatureAssembler* assembler = nullptr;

  NeuralComaCritic(const AugmentableNet& n, const FeatureAssembler& a)
      : net(&n), assembler(&a) {}

  Vec own_action_values(const DecomposedState& state, const DecomposedObservation& obs_n,
                        std::span<const Vec> goals, int agent,
                        std::span<const int> joint_action) const override {
    std::vector<Vec> segs = assembler->coma_main(state, obs_n, goals, agent, joint_action);
    return net->forward_one(segs, nullptr, ws_);
  }

 private:
  mutable Workspace ws_;
};

}  // namespace cm3
