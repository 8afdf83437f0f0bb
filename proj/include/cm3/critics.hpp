#pragma once

// Critic pair (global per-goal action value + credit function, each with a
// target copy) and the temporal-difference losses. Targets bootstrap with
// target-network parameters and next actions resampled from the target
// policy; terminal transitions bootstrap zero.

#include "cm3/neural.hpp"

namespace cm3 {

struct CriticPair {
  AugmentableNet global_q;
  AugmentableNet credit_q;
  AugmentableNet global_target;
  AugmentableNet credit_target;
  double tau = 0.01;

  void sync_targets() {
    global_target = global_q;
    credit_target = credit_q;
  }
  /// theta' <- tau theta + (1 - tau) theta' on every target parameter.
  void soft_update_targets() {
    soft_update(global_q.params, global_target.params, tau);
    soft_update(credit_q.params, credit_target.params, tau);
  }
};

namespace detail {

/// Column-wise batch assembly for multi-branch nets.
struct BatchInputs {
  std::vector<Mat> main;
  Mat side;
  bool has_side = false;

  void init(const std::vector<Vec>& segs, bool with_side, int side_dim, int cols) {
    main.resize(segs.size());
    for (size_t i = 0; i < segs.size(); ++i)
      main[i].resize(static_cast<int>(segs[i].size()), cols);
    has_side = with_side;
    if (with_side) side.resize(side_dim, cols);
  }
  void set(int col, const std::vector<Vec>& segs, const Vec* side_vec) {
    for (size_t i = 0; i < segs.size(); ++i)
      main[i].col(col) = Eigen::Map<const Eigen::VectorXd>(segs[i].data(), segs[i].size());
    if (has_side)
      side.col(col) = Eigen::Map<const Eigen::VectorXd>(side_vec->data(), side_vec->size());
  }
};

inline std::vector<int> sample_joint(const PolicyModel& policy,
                                     std::span<const DecomposedObservation> obs,
                                     std::span<const Vec> goals, Rng& rng) {
  std::vector<int> a(obs.size());
  for (size_t m = 0; m < obs.size(); ++m)
    a[m] = sample_categorical(rng, policy.action_probabilities(obs[m], goals[m]));
  return a;
}

}  // namespace detail

/// Mean over the minibatch of (1/N) sum_n squared TD errors of the global
/// action-value head. Accumulates d(loss)/d(theta) into grad.
inline double global_q_loss(const AugmentableNet& qnet, const AugmentableNet& qtarget,
                            const FeatureAssembler& as, const PolicyModel& target_policy,
                            std::span<const Transition> batch, double gamma, Rng& rng,
                            std::span<double> grad) {
  if (batch.empty()) throw std::invalid_argument("global_q_loss: empty minibatch");
  const int S = static_cast<int>(batch.size());
  const int N = as.n_agents;
  const int C = S * N;
  const bool two = qnet.stage == Stage::Two;

  int live_total = 0;
  for (const Transition& t : batch)
    if (!t.terminal) live_total += N;

  detail::BatchInputs cur, nx;
  std::vector<double> targets(C, 0.0);
  std::vector<int> owner;
  owner.reserve(live_total);

  int col = 0, k = 0;
  for (int i = 0; i < S; ++i) {
    const Transition& t = batch[i];
    std::vector<int> na;
    if (!t.terminal)
      na = detail::sample_joint(target_policy, t.next_observations, t.goals, rng);
    for (int n = 0; n < N; ++n, ++col) {
      std::vector<Vec> segs = as.q_main(t.state, t.observations[n], t.goals[n], n, t.actions[n]);
      Vec side;
      if (two) side = as.q_global_side(t.state, t.goals, t.actions, n);
      if (col == 0) cur.init(segs, two, static_cast<int>(side.size()), C);
      cur.set(col, segs, &side);
      targets[col] = t.rewards[n];
      if (!t.terminal) {
        std::vector<Vec> nsegs =
            as.q_main(t.next_state, t.next_observations[n], t.goals[n], n, na[n]);
        Vec nside;
        if (two) nside = as.q_global_side(t.next_state, t.goals, na, n);
        if (k == 0) nx.init(nsegs, two, static_cast<int>(nside.size()), live_total);
        nx.set(k, nsegs, &nside);
        owner.push_back(col);
        ++k;
      }
    }
  }

  if (!owner.empty()) {
    Workspace wst;
    const Mat& qn = qtarget.forward(nx.main, two ? &nx.side : nullptr, wst);
    for (size_t j = 0; j < owner.size(); ++j)
      targets[owner[j]] += gamma * qn(0, static_cast<int>(j));
  }

  Workspace ws;
  const Mat& q = qnet.forward(cur.main, two ? &cur.side : nullptr, ws);
  Mat dq(1, C);
  double loss = 0.0;
  const double scale = 1.0 / (static_cast<double>(S) * N);
  for (int c = 0; c < C; ++c) {
    double err = q(0, c) - targets[c];
    loss += err * err * scale;
    dq(0, c) = 2.0 * err * scale;
  }
  qnet.backward(dq, ws, grad);
  return loss;
}

/// Mean over the minibatch of (1/N^2) sum_{n,m} squared TD errors of the
/// credit head, with next actions a^m resampled from the target policy.
inline double credit_loss(const AugmentableNet& qnet, const AugmentableNet& qtarget,
                          const FeatureAssembler& as, const PolicyModel& target_policy,
                          std::span<const Transition> batch, double gamma, Rng& rng,
                          std::span<double> grad) {
  if (batch.empty()) throw std::invalid_argument("credit_loss: empty minibatch");
  const int S = static_cast<int>(batch.size());
  const int N = as.n_agents;
  const int C = S * N * N;
  const bool two = qnet.stage == Stage::Two;

  int live_total = 0;
  for (const Transition& t : batch)
    if (!t.terminal) live_total += N * N;

  detail::BatchInputs cur, nx;
  std::vector<double> targets(C, 0.0);
  std::vector<int> owner;
  owner.reserve(live_total);

  int col = 0, k = 0;
  for (int i = 0; i < S; ++i) {
    const Transition& t = batch[i];
    std::vector<int> next_m(N, 0);
    if (!t.terminal)
      for (int m = 0; m < N; ++m)
        next_m[m] = sample_categorical(
            rng, target_policy.action_probabilities(t.next_observations[m], t.goals[m]));
    for (int n = 0; n < N; ++n)
      for (int m = 0; m < N; ++m, ++col) {
        std::vector<Vec> segs =
            as.q_main(t.state, t.observations[n], t.goals[n], n, t.actions[m]);
        Vec side;
        if (two) side = as.q_credit_side(t.state, t.goals, n, m);
        if (col == 0) cur.init(segs, two, static_cast<int>(side.size()), C);
        cur.set(col, segs, &side);
        targets[col] = t.rewards[n];
        if (!t.terminal) {
          std::vector<Vec> nsegs =
              as.q_main(t.next_state, t.next_observations[n], t.goals[n], n, next_m[m]);
          Vec nside;
          if (two) nside = as.q_credit_side(t.next_state, t.goals, n, m);
          if (k == 0) nx.init(nsegs, two, static_cast<int>(nside.size()), live_total);
          nx.set(k, nsegs, &nside);
          owner.push_back(col);
          ++k;
        }
      }
  }

  if (!owner.empty()) {
    Workspace wst;
    const Mat& qn = qtarget.forward(nx.main, two ? &nx.side : nullptr, wst);
    for (size_t j = 0; j < owner.size(); ++j)
      targets[owner[j]] += gamma * qn(0, static_cast<int>(j));
  }

  Workspace ws;
  const Mat& q = qnet.forward(cur.main, two ? &cur.side : nullptr, ws);
  Mat dq(1, C);
  double loss = 0.0;
  const double scale = 1.0 / (static_cast<double>(S) * N * N);
  for (int c = 0; c < C; ++c) {
    double err = q(0, c) - targets[c];
    loss += err * err * scale;
    dq(0, c) = 2.0 * err * scale;
  }
  qnet.backward(dq, ws, grad);
  return loss;
}

/// COMA critic regression: per (sample, agent), the output node of the
/// chosen own action against the total-reward TD target, whose bootstrap
/// reads the node of the resampled next own action.
inline double coma_q_loss(const AugmentableNet& qnet, const AugmentableNet& qtarget,
                          const FeatureAssembler& as, const PolicyModel& target_policy,
                          std::span<const Transition> batch, double gamma, Rng& rng,
                          std::span<double> grad) {
  if (batch.empty()) throw std::invalid_argument("coma_q_loss: empty minibatch");
  const int S = static_cast<int>(batch.size());
  const int N = as.n_agents;
  const int C = S * N;

  int live_total = 0;
  for (const Transition& t : batch)
    if (!t.terminal) live_total += N;

  detail::BatchInputs cur, nx;
  std::vector<double> targets(C, 0.0);
  std::vector<int> owner, chosen(C, 0), next_chosen;
  owner.reserve(live_total);
  next_chosen.reserve(live_total);

  int col = 0, k = 0;
  for (int i = 0; i < S; ++i) {
    const Transition& t = batch[i];
    double r_total = std::accumulate(t.rewards.begin(), t.rewards.end(), 0.0);
    std::vector<int> na;
    if (!t.terminal)
      na = detail::sample_joint(target_policy, t.next_observations, t.goals, rng);
    for (int n = 0; n < N; ++n, ++col) {
      std::vector<Vec> segs = as.coma_main(t.state, t.observations[n], t.goals, n, t.actions);
      if (col == 0) cur.init(segs, false, 0, C);
      cur.set(col, segs, nullptr);
      chosen[col] = t.actions[n];
      targets[col] = r_total;
      if (!t.terminal) {
        std::vector<Vec> nsegs =
            as.coma_main(t.next_state, t.next_observations[n], t.goals, n, na);
        if (k == 0) nx.init(nsegs, false, 0, live_total);
        nx.set(k, nsegs, nullptr);
        owner.push_back(col);
        next_chosen.push_back(na[n]);
        ++k;
      }
    }
  }

  if (!owner.empty()) {
    Workspace wst;
    const Mat& qn = qtarget.forward(nx.main, nullptr, wst);
    for (size_t j = 0; j < owner.size(); ++j)
      targets[owner[j]] += gamma * qn(next_chosen[j], static_cast<int>(j));
  }

  Workspace ws;
  const Mat& q = qnet.forward(cur.main, nullptr, ws);
  Mat dq = Mat::Zero(q.rows(), C);
  double loss = 0.0;
  const double scale = 1.0 / (static_cast<double>(S) * N);
  for (int c = 0; c < C; ++c) {
    double err = q(chosen[c], c) - targets[c];
    loss += err * err * scale;
    dq(chosen[c], c) = 2.0 * err * scale;
  }
  qnet.backward(dq, ws, grad);
  return loss;
}

/// One-step TD loss of the per-agent value function V(o^n, g^n).
inline double value_loss(const AugmentableNet& vnet, const AugmentableNet& vtarget,
                         const FeatureAssembler& as, std::span<const Transition> batch,
                         double gamma, std::span<double> grad) {
  if (batch.empty()) throw std::invalid_argument("value_loss: empty minibatch");
  const int S = static_cast<int>(batch.size());
  const int N = as.n_agents;
  const int C = S * N;
  const bool two = vnet.stage == Stage::Two;

  int live_total = 0;
  for (const Transition& t : batch)
    if (!t.terminal) live_total += N;

  detail::BatchInputs cur, nx;
  std::vector<double> targets(C, 0.0);
  std::vector<int> owner;
  owner.reserve(live_total);
  int col = 0, k = 0;
  for (int i = 0; i < S; ++i) {
    const Transition& t = batch[i];
    for (int n = 0; n < N; ++n, ++col) {
      std::vector<Vec> segs = as.iac_main(t.observations[n], t.goals[n]);
      Vec side;
      if (two) side = as.iac_side(t.observations[n]);
      if (col == 0) cur.init(segs, two, static_cast<int>(side.size()), C);
      cur.set(col, segs, &side);
      targets[col] = t.rewards[n];
      if (!t.terminal) {
        std::vector<Vec> nsegs = as.iac_main(t.next_observations[n], t.goals[n]);
        Vec nside;
        if (two) nside = as.iac_side(t.next_observations[n]);
        if (k == 0) nx.init(nsegs, two, static_cast<int>(nside.size()), live_total);
        nx.set(k, nsegs, &nside);
        owner.push_back(col);
        ++k;
      }
    }
  }
  if (!owner.empty()) {
    Workspace wst;
    const Mat& vn = vtarget.forward(nx.main, two ? &nx.side : nullptr, wst);
    for (size_t j = 0; j < owner.size(); ++j)
      targets[owner[j]] += gamma * vn(0, static_cast<int>(j));
  }
  Workspace ws;
  const Mat& v = vnet.forward(cur.main, two ? &cur.side : nullptr, ws);
  Mat dv(1, C);
  double loss = 0.0;
  const double scale = 1.0 / (static_cast<double>(S) * N);
  for (int c = 0; c < C; ++c) {
    double err = v(0, c) - targets[c];
    loss += err * err * scale;
    dv(0, c) = 2.0 * err * scale;
  }
  vnet.backward(dv, ws, grad);
  return loss;
}

}  // namespace cm3
