#pragma once

// Per-environment network wiring and feature assembly: which input
// segments feed which branches for the policy, the global and credit
// critics, the IAC value function, and the COMA critic. Layer widths
// follow the reference architecture tables; a width scale lets shrunk
// configurations use smaller trunks.

#include "cm3/game.hpp"
#include "cm3/net.hpp"

namespace cm3 {

enum class EnvKind { Nav, Merge, Checkers, Generic };

inline EnvKind env_kind_of(const std::string& name) {
  if (name == "nav") return EnvKind::Nav;
  if (name == "merge") return EnvKind::Merge;
  if (name == "checkers") return EnvKind::Checkers;
  return EnvKind::Generic;
}

struct ArchOverrides {
  double width_scale = 1.0;
};

namespace detail {

inline int scaled(int w, double s) {
  return std::max(8, static_cast<int>(std::lround(w * s)));
}

inline SegmentShape seg_shape(const SegmentDef& d) {
  return d.is_tensor() ? SegmentShape{d.h, d.w, d.c, 0} : SegmentShape{.flat = d.flat};
}

inline BranchSpec pass(int flat_dim) { return BranchSpec{SegmentShape{.flat = flat_dim}, {}}; }

inline Vec slice(const Vec& v, int offset, int count) {
  return Vec(v.begin() + offset, v.begin() + offset + count);
}

}  // namespace detail

/// Splits flat feature vectors into the per-branch input segments expected
/// by the environment's architecture.
class FeatureAssembler {
 public:
  EnvKind kind = EnvKind::Generic;
  FeatureSpec f;
  int n_agents = 0;
  int n_actions = 0;
  int o_self_v_dim = 0;  // leading entries of the flat o_self segment that
                         // form the vector part consumed by the critics

  FeatureAssembler() = default;
  FeatureAssembler(EnvKind k, FeatureSpec fs, int agents, int actions)
      : kind(k), f(std::move(fs)), n_agents(agents), n_actions(actions) {
    o_self_v_dim = kind == EnvKind::Checkers ? 4 : f.o_self_dim();
  }

  // --- policy ---------------------------------------------------------------

  std::vector<Vec> policy_main(const DecomposedObservation& obs, const Vec& goal) const {
    std::vector<Vec> segs = split_self(obs);
    segs.push_back(goal);
    return segs;
  }
  Vec policy_side(const DecomposedObservation& obs) const { return obs.others_part; }

  // --- global / credit critics ----------------------------------------------

  /// Main input of the shared Stage-1 critic body: environment state
  /// segments, the evaluated agent's own state and observation pieces, the
  /// one-hot action slot (joint action for the global critic, a single
  /// agent's action for the credit function), and the goal.
  std::vector<Vec> q_main(const DecomposedState& s, const DecomposedObservation& obs_n,
                          const Vec& goal_n, int agent_n, int action) const {
    std::vector<Vec> segs;
    if (!s.env_part.empty()) segs.push_back(s.env_part);
    if (kind == EnvKind::Checkers) segs.push_back(self_tensor(obs_n));
    segs.push_back(s.agent_parts.at(agent_n));
    segs.push_back(one_hot(action, n_actions));
    segs.push_back(goal_n);
    if (kind == EnvKind::Checkers) segs.push_back(self_vector(obs_n));
    return segs;
  }

  Vec q_global_side(const DecomposedState& s, std::span<const Vec> goals,
                    std::span<const int> actions, int n) const {
    Vec out = s.others_flat(n);
    for (int m = 0; m < n_agents; ++m)
      if (m != n) append(out, one_hot(actions[m], n_actions));
    if (kind == EnvKind::Merge)
      for (int m = 0; m < n_agents; ++m)
        if (m != n) append(out, goals[m]);
    return out;
  }

  Vec q_credit_side(const DecomposedState& s, std::span<const Vec> goals, int n, int m) const {
    Vec out = s.agent_parts.at(m);  // disambiguates whose action is evaluated
    append(out, s.others_flat(n));
    if (kind == EnvKind::Merge)
      for (int k = 0; k < n_agents; ++k)
        if (k != n) append(out, goals[k]);
    return out;
  }

  // --- IAC value --------------------------------------------------------------

  std::vector<Vec> iac_main(const DecomposedObservation& obs, const Vec& goal) const {
    std::vector<Vec> segs;
    if (kind == EnvKind::Checkers) {
      segs.push_back(self_tensor(obs));
      segs.push_back(self_vector(obs));
    } else {
      segs.push_back(obs.self_part);
    }
    segs.push_back(goal);
    return segs;
  }
  Vec iac_side(const DecomposedObservation& obs) const { return obs.others_part; }

  // --- COMA critic -------------------------------------------------------------

  std::vector<Vec> coma_main(const DecomposedState& s, const DecomposedObservation& obs_n,
                             std::span<const Vec> goals, int n,
                             std::span<const int> actions) const {
    std::vector<Vec> segs;
    if (!s.env_part.empty()) segs.push_back(s.env_part);
    if (kind == EnvKind::Checkers) segs.push_back(self_tensor(obs_n));
    Vec sv;
    for (const Vec& a : s.agent_parts) append(sv, a);
    segs.push_back(std::move(sv));
    Vec others_a;
    for (int m = 0; m < n_agents; ++m)
      if (m != n) append(others_a, one_hot(actions[m], n_actions));
    segs.push_back(std::move(others_a));
    segs.push_back(goals[n]);
    Vec others_g;
    for (int m = 0; m < n_agents; ++m)
      if (m != n) append(others_g, goals[m]);
    segs.push_back(std::move(others_g));
    segs.push_back(one_hot(n, n_agents));
    segs.push_back(kind == EnvKind::Checkers ? self_vector(obs_n) : obs_n.self_part);
    return segs;
  }

  // --- o_self splitting --------------------------------------------------------

  std::vector<Vec> split_self(const DecomposedObservation& obs) const {
    std::vector<Vec> segs;
    int off = 0;
    for (const SegmentDef& d : f.o_self_segments) {
      segs.push_back(detail::slice(obs.self_part, off, d.dim()));
      off += d.dim();
    }
    return segs;
  }
  /// Tensor part of o_self (first segment when the env defines one).
  Vec self_tensor(const DecomposedObservation& obs) const {
    return detail::slice(obs.self_part, 0, f.o_self_segments.at(0).dim());
  }
  /// Leading entries of the flat o_self segment (coordinates + counts).
  Vec self_vector(const DecomposedObservation& obs) const {
    int off = f.o_self_segments.at(0).dim();
    return detail::slice(obs.self_part, off, o_self_v_dim);
  }
};

/// Architecture bundle for one environment: net specs plus the matching
/// feature assembler. Side branches size themselves from the Stage-2 agent
/// count; Stage-1 builds ignore them.
struct EnvArch {
  NetSpec policy;
  NetSpec q_global;
  NetSpec q_credit;
  NetSpec iac_value;
  NetSpec coma_q;
  FeatureAssembler assembler;
};

inline EnvArch make_env_arch(const MultiGoalGame& game, const ArchOverrides& ov = {}) {
  using detail::pass;
  using detail::scaled;
  const FeatureSpec f = game.features();
  const EnvKind kind = env_kind_of(game.name());
  const int N = game.num_agents();
  const int A = game.num_actions(0);
  const int G = f.goal_dim;
  const double ws = ov.width_scale;

  EnvArch arch;
  arch.assembler = FeatureAssembler(kind, f, N, A);

  const int self_dim = f.o_self_dim();
  const int others_dim = f.o_others_dim();
  const int agent_dim = f.agent_state_dim;
  const int others_state = agent_dim * (N - 1);
  const int others_actions = A * (N - 1);
  const int others_goals = G * (N - 1);
  const int merge_extra = kind == EnvKind::Merge ? others_goals : 0;

  auto self_segments = [&]() {
    std::vector<BranchSpec> segs;
    for (const SegmentDef& d : f.o_self_segments) segs.push_back({detail::seg_shape(d), {}});
    return segs;
  };

  switch (kind) {
    case EnvKind::Nav: {
      arch.policy.main = {pass(self_dim), pass(G)};
      arch.policy.trunk_widths = {scaled(64, ws), scaled(64, ws)};
      arch.policy.output_dim = A;
      arch.policy.side = {SegmentShape{.flat = others_dim}, {LayerSpec::dense(scaled(128, ws))}};

      arch.q_global.main = {pass(agent_dim), pass(A), pass(G)};
      arch.q_global.trunk_widths = {scaled(64, ws), scaled(64, ws)};
      arch.q_global.output_dim = 1;
      arch.q_global.side = {SegmentShape{.flat = others_state + others_actions},
                            {LayerSpec::dense(scaled(128, ws))}};
      arch.q_credit = arch.q_global;
      arch.q_credit.side = {SegmentShape{.flat = agent_dim + others_state},
                            {LayerSpec::dense(scaled(128, ws))}};

      arch.iac_value.main = {pass(self_dim), pass(G)};
      arch.iac_value.trunk_widths = {scaled(64, ws), scaled(64, ws)};
      arch.iac_value.output_dim = 1;
      arch.iac_value.side = {SegmentShape{.flat = others_dim}, {LayerSpec::dense(scaled(128, ws))}};

      arch.coma_q.main = {pass(agent_dim * N), pass(others_actions), pass(G),
                          pass(others_goals), pass(N), pass(self_dim)};
      arch.coma_q.trunk_widths = {scaled(128, ws), scaled(128, ws)};
      arch.coma_q.output_dim = A;
      break;
    }
    case EnvKind::Merge: {
      const SegmentDef grid = f.o_others_segments.at(0);
      arch.policy.main = {{SegmentShape{.flat = self_dim}, {LayerSpec::dense(scaled(32, ws))}},
                          {SegmentShape{.flat = G}, {LayerSpec::dense(scaled(32, ws))}}};
      arch.policy.trunk_widths = {scaled(64, ws)};
      arch.policy.output_dim = A;
      arch.policy.side = {detail::seg_shape(grid),
                          {LayerSpec::conv(4, 5, 3), LayerSpec::dense(scaled(64, ws))}};

      arch.q_global.main = {pass(agent_dim), pass(A), pass(G)};
      arch.q_global.trunk_widths = {scaled(256, ws), scaled(256, ws)};
      arch.q_global.output_dim = 1;
      arch.q_global.side = {SegmentShape{.flat = others_state + others_actions + merge_extra},
                            {LayerSpec::dense(scaled(128, ws))}};
      arch.q_credit = arch.q_global;
      arch.q_credit.side = {SegmentShape{.flat = agent_dim + others_state + merge_extra},
                            {LayerSpec::dense(scaled(128, ws))}};

      arch.iac_value.main = {pass(self_dim), pass(G)};
      arch.iac_value.trunk_widths = {scaled(64, ws), scaled(64, ws)};
      arch.iac_value.output_dim = 1;
      arch.iac_value.side = {detail::seg_shape(grid),
                             {LayerSpec::conv(4, 5, 3), LayerSpec::dense(scaled(128, ws))}};

      arch.coma_q.main = {pass(agent_dim * N), pass(others_actions), pass(G),
                          pass(others_goals), pass(N), pass(self_dim)};
      arch.coma_q.trunk_widths = {scaled(128, ws), scaled(128, ws)};
      arch.coma_q.output_dim = A;
      break;
    }
    case EnvKind::Checkers: {
      const SegmentDef fov = f.o_self_segments.at(0);
      const SegmentDef board = f.state_env_segments.at(0);
      const int self_flat = f.o_self_segments.at(1).dim();  // coords+counts+prev action
      const int self_v = 4;

      arch.policy.main = {{detail::seg_shape(fov),
                           {LayerSpec::conv(6, 3, 3), LayerSpec::dense(scaled(32, ws))}},
                          pass(self_flat), pass(G)};
      arch.policy.trunk_widths = {scaled(256, ws), scaled(256, ws)};
      arch.policy.output_dim = A;
      arch.policy.side = {SegmentShape{.flat = others_dim}, {LayerSpec::dense(scaled(256, ws))}};

      arch.q_global.main = {{detail::seg_shape(board), {LayerSpec::conv(4, 3, 5)}},
                            {detail::seg_shape(fov), {LayerSpec::conv(6, 3, 3)}},
                            pass(agent_dim), pass(A), pass(G), pass(self_v)};
      arch.q_global.trunk_widths = {scaled(256, ws), scaled(256, ws)};
      arch.q_global.output_dim = 1;
      arch.q_global.side = {SegmentShape{.flat = others_state + others_actions},
                            {LayerSpec::dense(scaled(32, ws))}};
      arch.q_credit = arch.q_global;
      arch.q_credit.side = {SegmentShape{.flat = agent_dim + others_state},
                            {LayerSpec::dense(scaled(32, ws))}};

      arch.iac_value.main = {{detail::seg_shape(fov), {LayerSpec::conv(6, 3, 3)}},
                             pass(self_v), pass(G)};
      arch.iac_value.trunk_widths = {scaled(256, ws), scaled(256, ws)};
      arch.iac_value.output_dim = 1;
      arch.iac_value.side = {SegmentShape{.flat = others_dim}, {LayerSpec::dense(scaled(32, ws))}};

      arch.coma_q.main = {{detail::seg_shape(board), {LayerSpec::conv(4, 3, 5)}},
                          {detail::seg_shape(fov), {LayerSpec::conv(6, 3, 3)}},
                          pass(agent_dim * N), pass(others_actions), pass(G),
                          pass(others_goals), pass(N), pass(self_v)};
      arch.coma_q.trunk_widths = {scaled(256, ws), scaled(256, ws)};
      arch.coma_q.output_dim = A;
      break;
    }
    case EnvKind::Generic: {
      arch.policy.main = {pass(self_dim), pass(G)};
      arch.policy.trunk_widths = {scaled(32, ws), scaled(32, ws)};
      arch.policy.output_dim = A;
      arch.policy.side = {SegmentShape{.flat = others_dim}, {LayerSpec::dense(scaled(32, ws))}};

      arch.q_global.main = {pass(agent_dim), pass(A), pass(G)};
      arch.q_global.trunk_widths = {scaled(32, ws), scaled(32, ws)};
      arch.q_global.output_dim = 1;
      arch.q_global.side = {SegmentShape{.flat = others_state + others_actions},
                            {LayerSpec::dense(scaled(32, ws))}};
      arch.q_credit = arch.q_global;
      arch.q_credit.side = {SegmentShape{.flat = agent_dim + others_state},
                            {LayerSpec::dense(scaled(32, ws))}};

      arch.iac_value.main = {pass(self_dim), pass(G)};
      arch.iac_value.trunk_widths = {scaled(32, ws), scaled(32, ws)};
      arch.iac_value.output_dim = 1;
      arch.iac_value.side = {SegmentShape{.flat = others_dim}, {LayerSpec::dense(scaled(32, ws))}};

      arch.coma_q.main = {pass(agent_dim * N), pass(others_actions), pass(G),
                          pass(others_goals), pass(N), pass(self_dim)};
      arch.coma_q.trunk_widths = {scaled(32, ws), scaled(32, ws)};
      arch.coma_q.output_dim = A;
      break;
    }
  }
  return arch;
}

}  // namespace cm3
