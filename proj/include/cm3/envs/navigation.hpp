#pragma once

// Cooperative navigation particle world: circular agents in an unbounded
// 2D plane with inertia and friction, assigned landmarks, collision
// penalties, and the four spawn formations.

#include <array>

#include "cm3/game.hpp"

namespace cm3 {

enum class Formation { Antipodal, Cross, Merge, UniformRandom };

inline Formation formation_from_string(const std::string& s) {
  if (s == "antipodal") return Formation::Antipodal;
  if (s == "cross" || s == "intersection") return Formation::Cross;
  if (s == "merge") return Formation::Merge;
  if (s == "uniform" || s == "random") return Formation::UniformRandom;
  throw std::invalid_argument("unknown formation: " + s);
}

inline const char* to_string(Formation f) {
  switch (f) {
    case Formation::Antipodal: return "antipodal";
    case Formation::Cross: return "cross";
    case Formation::Merge: return "merge";
    case Formation::UniformRandom: return "uniform";
  }
  return "?";
}

struct Point {
  double x = 0.0, y = 0.0;
};

/// Per-step reward: negative distance to the assigned landmark, with a -1
/// penalty when the agent collided this step.
inline double nav_reward(const Point& pos, const Point& landmark, bool collided) {
  double dx = pos.x - landmark.x, dy = pos.y - landmark.y;
  if (!std::isfinite(dx) || !std::isfinite(dy))
    throw std::invalid_argument("nav_reward: non-finite position");
  return -std::sqrt(dx * dx + dy * dy) - (collided ? 1.0 : 0.0);
}

struct FormationSpawn {
  std::vector<Point> starts;
  std::vector<Point> landmarks;
};

/// Predefined spawn coordinates. Antipodal and Cross place four agents,
/// Merge places two; UniformRandom is handled by the caller's sampler.
inline FormationSpawn spawn_formation(Formation f) {
  switch (f) {
    case Formation::Antipodal:
      return {{{-0.9, -0.9}, {0.9, 0.9}, {-0.9, 0.9}, {0.9, -0.9}},
              {{0.9, 0.9}, {-0.9, -0.9}, {0.9, -0.9}, {-0.9, 0.9}}};
    case Formation::Cross:
      return {{{-0.9, -0.15}, {0.9, 0.15}, {0.15, -0.9}, {-0.15, 0.9}},
              {{0.9, -0.15}, {-0.9, 0.15}, {0.15, 0.9}, {-0.15, -0.9}}};
    case Formation::Merge:
      return {{{-0.9, 0.2}, {-0.9, -0.2}}, {{0.9, -0.2}, {0.9, 0.2}}};
    case Formation::UniformRandom:
      throw std::invalid_argument("spawn_formation: uniform spawn has no fixed coordinates");
  }
  throw std::invalid_argument("unknown formation");
}

inline int formation_agent_count(Formation f) {
  return f == Formation::Merge ? 2 : 4;
}

struct NavConfig {
  int n_agents = 4;
  Formation formation = Formation::UniformRandom;
  double predefined_prob = 0.8;  // otherwise uniform spawn in (-1,1)^2
  int max_steps = 50;
  double gamma = 0.99;
  double dt = 0.1;
  double friction = 0.25;
  double accel = 4.0;
  double radius = 0.1;
  double success_distance = 0.05;
};

class NavigationWorld final : public MultiGoalGame {
 public:
  NavConfig cfg;

  explicit NavigationWorld(NavConfig c) : cfg(c) {
    if (cfg.formation != Formation::UniformRandom &&
        cfg.n_agents != formation_agent_count(cfg.formation))
      throw std::invalid_argument("formation does not match agent count");
    positions_.resize(cfg.n_agents);
    velocities_.resize(cfg.n_agents);
    landmarks_.resize(cfg.n_agents);
  }

  std::string name() const override { return "nav"; }
  int num_agents() const override { return cfg.n_agents; }
  int num_actions(int) const override { return 5; }
  double discount() const override { return cfg.gamma; }
  int horizon() const override { return cfg.max_steps; }

  FeatureSpec features() const override {
    FeatureSpec f;
    f.agent_state_dim = 4;
    f.o_self_segments = {SegmentDef{.flat = 4}};
    f.o_others_segments = {SegmentDef{.flat = 4 * (cfg.n_agents - 1)}};
    f.goal_dim = 2;
    return f;
  }

  void seed(uint64_t s) override { rng_ = substream(s, 0x9A71); }

  void reset() override {
    steps_ = 0;
    done_ = false;
    bool predefined = cfg.formation != Formation::UniformRandom &&
                      uniform(rng_, 0.0, 1.0) < cfg.predefined_prob;
    if (predefined) {
      FormationSpawn sp = spawn_formation(cfg.formation);
      for (int n = 0; n < cfg.n_agents; ++n) {
        positions_[n] = sp.starts[n];
        landmarks_[n] = sp.landmarks[n];
      }
    } else {
      for (int n = 0; n < cfg.n_agents; ++n) {
        positions_[n] = {uniform(rng_, -1.0, 1.0), uniform(rng_, -1.0, 1.0)};
        landmarks_[n] = {uniform(rng_, -1.0, 1.0), uniform(rng_, -1.0, 1.0)};
      }
    }
    for (auto& v : velocities_) v = {0.0, 0.0};
  }

  StepResult step(std::span<const int> actions) override {
    if (static_cast<int>(actions.size()) != cfg.n_agents)
      throw std::invalid_argument("step: wrong joint action size");
    if (done_) throw std::logic_error("step after terminal");

    for (int n = 0; n < cfg.n_agents; ++n) {
      Point a = action_accel(actions[n]);
      velocities_[n].x = (1.0 - cfg.friction) * velocities_[n].x + a.x * cfg.dt;
      velocities_[n].y = (1.0 - cfg.friction) * velocities_[n].y + a.y * cfg.dt;
      positions_[n].x += velocities_[n].x * cfg.dt;
      positions_[n].y += velocities_[n].y * cfg.dt;
    }

    std::vector<int> collisions(cfg.n_agents, 0);
    for (int i = 0; i < cfg.n_agents; ++i)
      for (int j = i + 1; j < cfg.n_agents; ++j) {
        double dx = positions_[j].x - positions_[i].x;
        double dy = positions_[j].y - positions_[i].y;
        double d = std::sqrt(dx * dx + dy * dy);
        if (d < 2.0 * cfg.radius) {
          ++collisions[i];
          ++collisions[j];
          separate(i, j, dx, dy, d);
        }
      }

    StepResult r;
    r.rewards.resize(cfg.n_agents);
    for (int n = 0; n < cfg.n_agents; ++n)
      r.rewards[n] = nav_reward(positions_[n], landmarks_[n], false) - collisions[n];

    ++steps_;
    if (all_on_landmarks()) {
      r.terminal = true;
    } else if (steps_ >= cfg.max_steps) {
      r.terminal = true;
      r.timeout = true;
    }
    done_ = r.terminal;
    return r;
  }

  DecomposedState state() const override {
    DecomposedState s;
    s.agent_parts.resize(cfg.n_agents);
    for (int n = 0; n < cfg.n_agents; ++n)
      s.agent_parts[n] = {positions_[n].x, positions_[n].y, velocities_[n].x, velocities_[n].y};
    return s;
  }

  DecomposedObservation observe(int agent) const override {
    DecomposedObservation o;
    o.self_part = {positions_[agent].x, positions_[agent].y, velocities_[agent].x,
                   velocities_[agent].y};
    for (int m = 0; m < cfg.n_agents; ++m) {
      if (m == agent) continue;
      o.others_part.push_back(positions_[m].x - positions_[agent].x);
      o.others_part.push_back(positions_[m].y - positions_[agent].y);
      o.others_part.push_back(velocities_[m].x - velocities_[agent].x);
      o.others_part.push_back(velocities_[m].y - velocities_[agent].y);
    }
    return o;
  }

  Vec goal(int agent) const override { return {landmarks_[agent].x, landmarks_[agent].y}; }

  bool agent_succeeded(int agent) const override {
    return distance_to_goal(agent) < cfg.success_distance;
  }

  bool reducible() const override { return true; }
  std::unique_ptr<MultiGoalGame> induced_mdp() const override {
    NavConfig c = cfg;
    c.n_agents = 1;
    c.formation = Formation::UniformRandom;  // uniform start and landmark
    c.predefined_prob = 0.0;
    return std::make_unique<NavigationWorld>(c);
  }
  std::unique_ptr<MultiGoalGame> clone() const override {
    return std::make_unique<NavigationWorld>(*this);
  }

  double distance_to_goal(int n) const {
    double dx = positions_[n].x - landmarks_[n].x;
    double dy = positions_[n].y - landmarks_[n].y;
    return std::sqrt(dx * dx + dy * dy);
  }

 private:
  Point action_accel(int a) const {
    switch (a) {
      case 0: return {0.0, 0.0};
      case 1: return {0.0, cfg.accel};
      case 2: return {0.0, -cfg.accel};
      case 3: return {-cfg.accel, 0.0};
      case 4: return {cfg.accel, 0.0};
    }
    throw std::invalid_argument("invalid action");
  }

  void separate(int i, int j, double dx, double dy, double d) {
    // Push both agents apart to touching distance along the center line.
    double nx = 1.0, ny = 0.0;
    if (d > 1e-12) {
      nx = dx / d;
      ny = dy / d;
    }
    double push = (2.0 * cfg.radius - d) / 2.0;
    positions_[i].x -= nx * push;
    positions_[i].y -= ny * push;
    positions_[j].x += nx * push;
    positions_[j].y += ny * push;
  }

  bool all_on_landmarks() const {
    for (int n = 0; n < cfg.n_agents; ++n)
      if (distance_to_goal(n) >= cfg.success_distance) return false;
    return true;
  }

  Rng rng_{0};
  std::vector<Point> positions_;
  std::vector<Point> velocities_;
  std::vector<Point> landmarks_;
  int steps_ = 0;
  bool done_ = false;
};

}  // namespace cm3
