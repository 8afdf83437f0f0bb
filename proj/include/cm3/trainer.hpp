#pragma once

// Two-stage curriculum orchestration: rollout collection, replay buffer
// (on-policy reset and off-policy circular variants), the exploration
// schedule, training rounds, soft target updates, evaluation cadence, and
// checkpoint hand-off between stages.

#include <functional>

#include "cm3/checkpoint.hpp"
#include "cm3/critics.hpp"
#include "cm3/gradients.hpp"

namespace cm3 {

enum class Method { CM3, QV, Direct, IAC, COMA };

inline Method method_from_string(const std::string& s) {
  if (s == "cm3") return Method::CM3;
  if (s == "qv") return Method::QV;
  if (s == "direct") return Method::Direct;
  if (s == "iac") return Method::IAC;
  if (s == "coma") return Method::COMA;
  throw std::invalid_argument("unknown method: " + s);
}

inline const char* to_string(Method m) {
  switch (m) {
    case Method::CM3: return "cm3";
    case Method::QV: return "qv";
    case Method::Direct: return "direct";
    case Method::IAC: return "iac";
    case Method::COMA: return "coma";
  }
  return "?";
}

struct TrainerConfig {
  int episodes = 1000;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_div = 1000.0;  // eps_step := (eps_start - eps_end) / eps_div
  int buffer_capacity = 10000;
  bool off_policy = false;  // circular buffer, train while collecting
  int minibatch = 128;
  int episodes_per_train = 10;  // used when steps_per_train == 0
  int steps_per_train = 0;
  int epochs = 24;
  double lr_policy = 1e-4;
  double lr_q = 1e-3;
  double lr_v = 1e-3;
  double tau = 0.01;
  double gamma = 0.0;  // 0: take the game's discount
  int eval_interval = 100;
  int eval_episodes = 10;
  double width_scale = 1.0;
  uint64_t seed = 0;
};

inline double epsilon_step(const TrainerConfig& c) {
  return (c.eps_start - c.eps_end) / c.eps_div;
}

/// Exploration after k completed episodes: decays linearly, never below
/// eps_end.
inline double epsilon_at(const TrainerConfig& c, int episode) {
  return std::max(c.eps_end, c.eps_start - episode * epsilon_step(c));
}

class ReplayBuffer {
 public:
  enum class Mode { ResetAfterTraining, Circular };

  ReplayBuffer(size_t capacity, Mode mode) : capacity_(capacity), mode_(mode) {
    if (capacity_ == 0) throw std::invalid_argument("replay buffer needs capacity");
  }

  Mode mode() const { return mode_; }
  size_t size() const { return data_.size(); }
  size_t capacity() const { return capacity_; }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[next_] = std::move(t);  // circular eviction of the oldest
      next_ = (next_ + 1) % capacity_;
    }
  }

  void clear() {
    data_.clear();
    next_ = 0;
  }

  std::vector<Transition> sample(size_t count, Rng& rng) const {
    if (data_.empty()) throw std::logic_error("sampling from an empty buffer");
    std::vector<Transition> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i)
      out.push_back(data_[uniform_int(rng, 0, static_cast<int>(data_.size()) - 1)]);
    return out;
  }

 private:
  size_t capacity_;
  Mode mode_;
  std::vector<Transition> data_;
  size_t next_ = 0;
};

/// Draws a fresh per-agent goal assignment from the game's declared
/// distribution (the game owns the distribution; goals are fixed per
/// episode at reset).
inline std::vector<Vec> sample_goals(const MultiGoalGame& game, Rng& rng) {
  auto g = game.clone();
  g->seed(rng());
  g->reset();
  std::vector<Vec> out;
  for (int n = 0; n < g->num_agents(); ++n) out.push_back(g->goal(n));
  return out;
}

struct EvalResult {
  Vec mean_agent_returns;
  double joint_mean = 0.0;
  double joint_std = 0.0;
  Vec success_rates;
};

using JointController = std::function<std::vector<int>(const MultiGoalGame&, Rng&)>;

/// Runs evaluation episodes with a joint controller on a fresh copy of the
/// game; deterministic given the seed.
inline EvalResult evaluate_controller(const MultiGoalGame& proto, const JointController& act,
                                      int episodes, uint64_t seed) {
  if (episodes <= 0) throw std::invalid_argument("evaluate: needs at least one episode");
  auto game = proto.clone();
  const int N = game->num_agents();
  EvalResult res;
  res.mean_agent_returns.assign(N, 0.0);
  res.success_rates.assign(N, 0.0);
  Vec joint;
  Rng rng = substream(seed, 0xEAA1);
  for (int ep = 0; ep < episodes; ++ep) {
    game->seed(splitmix64(seed) + ep);
    game->reset();
    Vec returns(N, 0.0);
    bool done = false;
    while (!done) {
      StepResult r = game->step(act(*game, rng));
      for (int n = 0; n < N; ++n) returns[n] += r.rewards[n];
      done = r.terminal;
    }
    double j = 0.0;
    for (int n = 0; n < N; ++n) {
      res.mean_agent_returns[n] += returns[n];
      res.success_rates[n] += game->agent_succeeded(n) ? 1.0 : 0.0;
      j += returns[n];
    }
    joint.push_back(j);
  }
  for (int n = 0; n < N; ++n) {
    res.mean_agent_returns[n] /= episodes;
    res.success_rates[n] /= episodes;
  }
  for (double j : joint) res.joint_mean += j;
  res.joint_mean /= episodes;
  double var = 0.0;
  for (double j : joint) var += (j - res.joint_mean) * (j - res.joint_mean);
  res.joint_std = std::sqrt(var / episodes);
  return res;
}

/// Greedy-leaning evaluation of a shared policy: the exploration floor is
/// set to eps_end rather than zero, matching the executed policy class.
inline EvalResult evaluate_policy(const MultiGoalGame& proto, const NeuralPolicy& policy,
                                  double eps, int episodes, uint64_t seed) {
  NeuralPolicy eval_policy = policy;
  eval_policy.epsilon = eps;
  JointController act = [&eval_policy](const MultiGoalGame& g, Rng& rng) {
    std::vector<int> a(g.num_agents());
    for (int n = 0; n < g.num_agents(); ++n)
      a[n] = eval_policy.sample_action(g.observe(n), g.goal(n), rng);
    return a;
  };
  return evaluate_controller(proto, act, episodes, seed);
}

struct TrainOutputs {
  std::string checkpoint_path;
  std::string metrics_path;
  std::vector<Json> metrics;
  double final_success_rate = 0.0;  // success over the last 100 training episodes
  double final_eval_joint_return = 0.0;
  double best_eval_joint_return = -std::numeric_limits<double>::infinity();
};

namespace detail {

struct RolloutStats {
  Vec returns;
  bool success_all = false;
  int steps = 0;
};

/// One exploration episode; transitions appended to the buffer.
inline RolloutStats collect_episode(MultiGoalGame& game, const NeuralPolicy& policy,
                                    ReplayBuffer& buffer, Rng& explore_rng,
                                    const std::function<void()>& on_step) {
  const int N = game.num_agents();
  game.reset();
  RolloutStats stats;
  stats.returns.assign(N, 0.0);
  bool done = false;
  while (!done) {
    Transition t;
    t.state = game.state();
    t.observations.resize(N);
    t.goals.resize(N);
    t.actions.resize(N);
    for (int n = 0; n < N; ++n) {
      t.observations[n] = game.observe(n);
      t.goals[n] = game.goal(n);
      t.actions[n] = policy.sample_action(t.observations[n], t.goals[n], explore_rng);
    }
    StepResult r = game.step(t.actions);
    t.rewards = r.rewards;
    t.next_state = game.state();
    t.next_observations.resize(N);
    for (int n = 0; n < N; ++n) t.next_observations[n] = game.observe(n);
    t.terminal = r.terminal;
    t.timeout = r.timeout;
    for (int n = 0; n < N; ++n) stats.returns[n] += r.rewards[n];
    buffer.push(std::move(t));
    ++stats.steps;
    done = r.terminal;
    if (on_step) on_step();
  }
  stats.success_all = true;
  for (int n = 0; n < N; ++n)
    if (!game.agent_succeeded(n)) stats.success_all = false;
  return stats;
}

inline Json eval_record(int episode, double eps, const EvalResult& ev) {
  return Json{{"episode", episode},
              {"epsilon", eps},
              {"returns", ev.mean_agent_returns},
              {"joint_return", ev.joint_mean},
              {"joint_std", ev.joint_std},
              {"success", ev.success_rates}};
}

inline void write_metrics(const std::string& path, const std::vector<Json>& records) {
  std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::string body;
  for (const Json& j : records) {
    body += j.dump();
    body += '\n';
  }
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << body;
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace detail

/// Stage 1: single-agent actor-critic in the induced MDP. Produces the
/// checkpoint consumed by the Stage-2 curriculum methods.
inline TrainOutputs run_stage1(const TrainerConfig& cfg, MultiGoalGame& game,
                               const std::string& out_dir) {
  if (game.num_agents() != 1)
    throw std::invalid_argument("run_stage1: game must be the induced single-agent MDP");
  const double gamma = cfg.gamma > 0.0 ? cfg.gamma : game.discount();

  EnvArch arch = make_env_arch(game, {cfg.width_scale});
  Rng init_rng = substream(cfg.seed, 0x1417);
  Rng explore_rng = substream(cfg.seed, 0xE4);
  Rng batch_rng = substream(cfg.seed, 0xBA7C);
  game.seed(splitmix64(cfg.seed) ^ 0x5EED);

  NeuralPolicy policy(AugmentableNet::build(arch.policy, Stage::One, init_rng), arch.assembler);
  AugmentableNet q = AugmentableNet::build(arch.q_global, Stage::One, init_rng);
  NeuralPolicy policy_target = policy;
  AugmentableNet q_target = q;

  Adam opt_pi(cfg.lr_policy), opt_q(cfg.lr_q);
  ReplayBuffer buffer(cfg.buffer_capacity, cfg.off_policy
                                               ? ReplayBuffer::Mode::Circular
                                               : ReplayBuffer::Mode::ResetAfterTraining);

  Vec grad_q(q.num_params()), grad_pi(policy.num_params());
  auto train_round = [&]() {
    if (buffer.size() < static_cast<size_t>(cfg.minibatch)) return;
    for (int epoch = 0; epoch < std::max(1, cfg.epochs); ++epoch) {
      std::vector<Transition> batch = buffer.sample(cfg.minibatch, batch_rng);
      std::fill(grad_q.begin(), grad_q.end(), 0.0);
      global_q_loss(q, q_target, arch.assembler, policy_target, batch, gamma, batch_rng, grad_q);
      opt_q.step(q.params, grad_q);

      NeuralCriticSet critics(q, q, arch.assembler);
      Vec ascent = stage1_policy_gradient(policy, critics, batch);
      for (size_t i = 0; i < ascent.size(); ++i) grad_pi[i] = -ascent[i];
      opt_pi.step(policy.net.params, grad_pi);

      soft_update(q.params, q_target.params, cfg.tau);
      soft_update(policy.net.params, policy_target.net.params, cfg.tau);
    }
    if (buffer.mode() == ReplayBuffer::Mode::ResetAfterTraining) buffer.clear();
  };

  TrainOutputs out;
  std::vector<int> success_history;
  int env_steps = 0;
  for (int e = 0; e < cfg.episodes; ++e) {
    double eps = epsilon_at(cfg, e);
    policy.epsilon = eps;
    policy_target.epsilon = eps;
    auto on_step = [&]() {
      ++env_steps;
      if (cfg.steps_per_train > 0 && env_steps % cfg.steps_per_train == 0) train_round();
    };
    detail::RolloutStats stats =
        detail::collect_episode(game, policy, buffer, explore_rng, on_step);
    success_history.push_back(stats.success_all ? 1 : 0);
    if (cfg.steps_per_train == 0 && (e + 1) % cfg.episodes_per_train == 0) train_round();
    if ((e + 1) % cfg.eval_interval == 0 || e + 1 == cfg.episodes) {
      EvalResult ev = evaluate_policy(game, policy, cfg.eps_end, cfg.eval_episodes,
                                      splitmix64(cfg.seed) + e + 1);
      out.metrics.push_back(detail::eval_record(e + 1, eps, ev));
      out.final_eval_joint_return = ev.joint_mean;
      out.best_eval_joint_return = std::max(out.best_eval_joint_return, ev.joint_mean);
    }
  }

  int window = std::min<int>(100, static_cast<int>(success_history.size()));
  if (window > 0) {
    int wins = 0;
    for (int i = 0; i < window; ++i)
      wins += success_history[success_history.size() - 1 - i];
    out.final_success_rate = static_cast<double>(wins) / window;
  }

  out.checkpoint_path = out_dir + "/checkpoint.json";
  out.metrics_path = out_dir + "/metrics.jsonl";
  save_checkpoint(out.checkpoint_path, CheckpointMeta{1, "stage1", game.name(), cfg.seed},
                  {{"pi1", &policy.net}, {"q1", &q}});
  detail::write_metrics(out.metrics_path, out.metrics);
  return out;
}

/// Stage 2: the full Markov game with the chosen method. CM3 and QV
/// restore Stage-1 parameters through function augmentation; Direct trains
/// the identical architecture from scratch; IAC and COMA are the
/// decentralized and counterfactual baselines.
inline TrainOutputs run_stage2(const TrainerConfig& cfg, MultiGoalGame& game, Method method,
                               const std::string& stage1_checkpoint,
                               const std::string& out_dir) {
  const double gamma = cfg.gamma > 0.0 ? cfg.gamma : game.discount();
  const bool needs_checkpoint = method == Method::CM3 || method == Method::QV;
  if (needs_checkpoint && stage1_checkpoint.empty())
    throw std::invalid_argument("curriculum methods require a Stage-1 checkpoint");

  EnvArch arch = make_env_arch(game, {cfg.width_scale});
  Rng init_rng = substream(cfg.seed, 0x1417);
  Rng explore_rng = substream(cfg.seed, 0xE4);
  Rng batch_rng = substream(cfg.seed, 0xBA7C);
  game.seed(splitmix64(cfg.seed) ^ 0x5EED);

  NeuralPolicy policy;
  std::optional<CriticPair> critics;
  std::optional<AugmentableNet> value_net, value_target;  // IAC
  std::optional<AugmentableNet> coma_net, coma_target;    // COMA

  if (needs_checkpoint) {
    Json ck = read_checkpoint(stage1_checkpoint);
    AugmentableNet pi1 = AugmentableNet::build(arch.policy, Stage::One, init_rng);
    AugmentableNet q1 = AugmentableNet::build(arch.q_global, Stage::One, init_rng);
    load_net(pi1, ck, "pi1");
    load_net(q1, ck, "q1");
    policy = NeuralPolicy(AugmentableNet::augment(pi1, arch.policy.side, init_rng),
                          arch.assembler);
    CriticPair pair;
    pair.global_q = AugmentableNet::augment(q1, arch.q_global.side, init_rng);
    pair.credit_q = AugmentableNet::augment(q1, arch.q_credit.side, init_rng);
    pair.tau = cfg.tau;
    pair.sync_targets();
    critics = std::move(pair);
  } else if (method == Method::Direct) {
    policy = NeuralPolicy(AugmentableNet::build(arch.policy, Stage::Two, init_rng),
                          arch.assembler);
    CriticPair pair;
    pair.global_q = AugmentableNet::build(arch.q_global, Stage::Two, init_rng);
    pair.credit_q = AugmentableNet::build(arch.q_credit, Stage::Two, init_rng);
    pair.tau = cfg.tau;
    pair.sync_targets();
    critics = std::move(pair);
  } else if (method == Method::IAC) {
    policy = NeuralPolicy(AugmentableNet::build(arch.policy, Stage::Two, init_rng),
                          arch.assembler);
    value_net = AugmentableNet::build(arch.iac_value, Stage::Two, init_rng);
    value_target = *value_net;
  } else {  // COMA
    policy = NeuralPolicy(AugmentableNet::build(arch.policy, Stage::Two, init_rng),
                          arch.assembler);
    coma_net = AugmentableNet::build(arch.coma_q, Stage::One, init_rng);
    coma_target = *coma_net;
  }
  NeuralPolicy policy_target = policy;

  Adam opt_pi(cfg.lr_policy);
  Adam opt_qg(cfg.lr_q), opt_qc(cfg.lr_q), opt_v(cfg.lr_v), opt_coma(cfg.lr_q);
  ReplayBuffer buffer(cfg.buffer_capacity, cfg.off_policy
                                               ? ReplayBuffer::Mode::Circular
                                               : ReplayBuffer::Mode::ResetAfterTraining);

  Vec grad_pi(policy.num_params());
  auto train_round = [&]() {
    if (buffer.size() < static_cast<size_t>(cfg.minibatch)) return;
    for (int epoch = 0; epoch < std::max(1, cfg.epochs); ++epoch) {
      std::vector<Transition> batch = buffer.sample(cfg.minibatch, batch_rng);
      Vec ascent;
      if (critics) {
        CriticPair& pair = *critics;
        Vec gq(pair.global_q.num_params(), 0.0);
        global_q_loss(pair.global_q, pair.global_target, arch.assembler, policy_target, batch,
                      gamma, batch_rng, gq);
        opt_qg.step(pair.global_q.params, gq);
        Vec gc(pair.credit_q.num_params(), 0.0);
        credit_loss(pair.credit_q, pair.credit_target, arch.assembler, policy_target, batch,
                    gamma, batch_rng, gc);
        opt_qc.step(pair.credit_q.params, gc);

        NeuralCriticSet critic_set(pair.global_q, pair.credit_q, arch.assembler);
        ascent = method == Method::QV ? qv_policy_gradient(policy, critic_set, batch)
                                      : cm3_policy_gradient(policy, critic_set, batch);
      } else if (value_net) {
        Vec gv(value_net->num_params(), 0.0);
        value_loss(*value_net, *value_target, arch.assembler, batch, gamma, gv);
        opt_v.step(value_net->params, gv);
        NeuralValueModel v(*value_net, arch.assembler);
        NeuralValueModel vt(*value_target, arch.assembler);
        ascent = iac_policy_gradient(policy, v, vt, gamma, batch);
      } else {
        Vec gq(coma_net->num_params(), 0.0);
        coma_q_loss(*coma_net, *coma_target, arch.assembler, policy_target, batch, gamma,
                    batch_rng, gq);
        opt_coma.step(coma_net->params, gq);
        NeuralComaCritic critic(*coma_net, arch.assembler);
        ascent = coma_policy_gradient(policy, critic, batch);
      }
      for (size_t i = 0; i < ascent.size(); ++i) grad_pi[i] = -ascent[i];
      opt_pi.step(policy.net.params, grad_pi);

      soft_update(policy.net.params, policy_target.net.params, cfg.tau);
      if (critics) critics->soft_update_targets();
      if (value_net) soft_update(value_net->params, value_target->params, cfg.tau);
      if (coma_net) soft_update(coma_net->params, coma_target->params, cfg.tau);
    }
    if (buffer.mode() == ReplayBuffer::Mode::ResetAfterTraining) buffer.clear();
  };

  TrainOutputs out;
  std::vector<int> success_history;
  int env_steps = 0;
  for (int e = 0; e < cfg.episodes; ++e) {
    double eps = epsilon_at(cfg, e);
    policy.epsilon = eps;
    policy_target.epsilon = eps;
    auto on_step = [&]() {
      ++env_steps;
      if (cfg.steps_per_train > 0 && env_steps % cfg.steps_per_train == 0) train_round();
    };
    detail::RolloutStats stats =
        detail::collect_episode(game, policy, buffer, explore_rng, on_step);
    success_history.push_back(stats.success_all ? 1 : 0);
    if (cfg.steps_per_train == 0 && (e + 1) % cfg.episodes_per_train == 0) train_round();
    if ((e + 1) % cfg.eval_interval == 0 || e + 1 == cfg.episodes) {
      EvalResult ev = evaluate_policy(game, policy, cfg.eps_end, cfg.eval_episodes,
                                      splitmix64(cfg.seed) + e + 1);
      out.metrics.push_back(detail::eval_record(e + 1, eps, ev));
      out.final_eval_joint_return = ev.joint_mean;
      out.best_eval_joint_return = std::max(out.best_eval_joint_return, ev.joint_mean);
    }
  }

  int window = std::min<int>(100, static_cast<int>(success_history.size()));
  if (window > 0) {
    int wins = 0;
    for (int i = 0; i < window; ++i)
      wins += success_history[success_history.size() - 1 - i];
    out.final_success_rate = static_cast<double>(wins) / window;
  }

  out.checkpoint_path = out_dir + "/checkpoint.json";
  out.metrics_path = out_dir + "/metrics.jsonl";
  CheckpointMeta meta{2, to_string(method), game.name(), cfg.seed};
  std::vector<std::pair<std::string, const AugmentableNet*>> nets = {{"pi", &policy.net}};
  if (critics) {
    nets.push_back({"q_global", &critics->global_q});
    nets.push_back({"q_credit", &critics->credit_q});
  }
  if (value_net) nets.push_back({"v", &*value_net});
  if (coma_net) nets.push_back({"q_coma", &*coma_net});
  save_checkpoint(out.checkpoint_path, meta, nets);
  detail::write_metrics(out.metrics_path, out.metrics);
  return out;
}

}  // namespace cm3
