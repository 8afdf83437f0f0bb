#pragma once

// Kinematic lane-merge traffic world: a 200 m straight road with four
// 3.2 m lanes at sub-lane resolution 0.8 m. Vehicles hold an integer
// sub-lane and a longitudinal position; collisions are rectangle overlaps
// on (x, sublane). Optional scripted background vehicles drive at constant
// target speed with gap-keeping deceleration.

#include <optional>

#include "cm3/game.hpp"

namespace cm3 {

struct MergeEvent {
  enum class Kind { None, Collision, Timeout, Arrival, Overspeed } kind = Kind::None;
  double delta = 0.0;  // normalized sub-lane difference at arrival
  static MergeEvent none() { return {}; }
  static MergeEvent collision() { return {Kind::Collision, 0.0}; }
  static MergeEvent timeout() { return {Kind::Timeout, 0.0}; }
  static MergeEvent arrival(double d) { return {Kind::Arrival, d}; }
  static MergeEvent overspeed() { return {Kind::Overspeed, 0.0}; }
};

/// Reward table: -1 collision, -10 time-out, 10(1 - delta) on reaching the
/// end of the road, -0.1 while over the speed threshold.
inline double merge_reward(const MergeEvent& e) {
  using K = MergeEvent::Kind;
  switch (e.kind) {
    case K::None: return 0.0;
    case K::Collision: return -1.0;
    case K::Timeout: return -10.0;
    case K::Arrival:
      if (e.delta < 0.0 || e.delta > 1.0)
        throw std::invalid_argument("merge_reward: delta outside [0,1]");
      return 10.0 * (1.0 - e.delta);
    case K::Overspeed: return -0.1;
  }
  return 0.0;
}

struct MergeConfig {
  int n_agents = 2;
  int max_steps = 33;
  double gamma = 0.99;
  double predefined_prob = 0.8;
  std::vector<int> fixed_init_lanes = {1, 2};
  std::vector<int> fixed_goal_lanes = {2, 1};
  int background_vehicles = 0;

  // Road geometry and dynamics.
  static constexpr double kRoadLength = 200.0;
  static constexpr double kLaneWidth = 3.2;
  static constexpr double kSublaneWidth = 0.8;
  static constexpr int kLanes = 4;
  static constexpr int kSublanes = 16;
  static constexpr double kDt = 0.2;
  static constexpr double kSpeedNorm = 29.0;
  static constexpr double kOverspeed = 35.7;
  static constexpr double kAccel = 2.5;
  static constexpr double kVehicleLength = 5.0;
  static constexpr double kArrivalX = 190.0;
  static constexpr double kMaxSpeed = 45.0;
};

/// Center sub-lane index of a lane (the sub-lane the arrival distance is
/// measured against; delta 0 is attainable there).
inline int goal_center_sublane(int lane) { return 4 * lane + 2; }

class LaneMergeWorld final : public MultiGoalGame {
 public:
  MergeConfig cfg;

  struct Vehicle {
    double x = 0.0;
    int sublane = 0;
    double v = 0.0;
    bool arrived = false;
    int depart_step = 0;
    double target_speed = 30.0;
  };

  explicit LaneMergeWorld(MergeConfig c) : cfg(std::move(c)) {
    if (static_cast<int>(cfg.fixed_init_lanes.size()) < cfg.n_agents ||
        static_cast<int>(cfg.fixed_goal_lanes.size()) < cfg.n_agents)
      throw std::invalid_argument("lane assignments shorter than agent count");
  }

  std::string name() const override { return "merge"; }
  int num_agents() const override { return cfg.n_agents; }
  int num_actions(int) const override { return 5; }
  double discount() const override { return cfg.gamma; }
  int horizon() const override { return cfg.max_steps; }

  FeatureSpec features() const override {
    FeatureSpec f;
    f.agent_state_dim = 3;
    f.o_self_segments = {SegmentDef{.flat = 3}};
    f.o_others_segments = {SegmentDef{13, 9, 2, 0}};
    f.goal_dim = MergeConfig::kLanes;
    return f;
  }

  void seed(uint64_t s) override { rng_ = substream(s, 0x3E26); }

  void reset() override {
    steps_ = 0;
    done_ = false;
    agents_.assign(cfg.n_agents, Vehicle{});
    goal_lanes_.assign(cfg.n_agents, 0);

    bool predefined = uniform(rng_, 0.0, 1.0) < cfg.predefined_prob;
    for (int n = 0; n < cfg.n_agents; ++n) {
      int init_lane, goal_lane;
      if (predefined) {
        init_lane = cfg.fixed_init_lanes[n];
        goal_lane = cfg.fixed_goal_lanes[n];
      } else {
        init_lane = uniform_int(rng_, 0, MergeConfig::kLanes - 1);
        goal_lane = uniform_int(rng_, 0, MergeConfig::kLanes - 1);
      }
      Vehicle& veh = agents_[n];
      veh.x = 0.0;
      veh.sublane = goal_center_sublane(init_lane);
      veh.v = std::clamp(std::normal_distribution<double>(30.0, 1.0)(rng_), 25.0, 33.0);
      veh.target_speed = veh.v;
      double depart_s = std::normal_distribution<double>(0.0, 0.5)(rng_);
      veh.depart_step = std::max(0, static_cast<int>(std::lround(depart_s / MergeConfig::kDt)));
      goal_lanes_[n] = goal_lane;
    }

    background_.clear();
    for (int b = 0; b < cfg.background_vehicles; ++b) {
      Vehicle veh;
      for (int attempt = 0; attempt < 50; ++attempt) {
        veh.sublane = goal_center_sublane(uniform_int(rng_, 0, MergeConfig::kLanes - 1));
        veh.x = uniform(rng_, 20.0, 180.0);
        veh.v = uniform(rng_, 25.0, 30.0);
        veh.target_speed = veh.v;
        bool clear = true;
        for (const Vehicle& other : background_)
          if (overlap(veh, other)) clear = false;
        if (clear) break;
      }
      background_.push_back(veh);
    }
  }

  StepResult step(std::span<const int> actions) override {
    if (static_cast<int>(actions.size()) != cfg.n_agents)
      throw std::invalid_argument("step: wrong joint action size");
    if (done_) throw std::logic_error("step after terminal");

    StepResult r;
    r.rewards.assign(cfg.n_agents, 0.0);

    for (int n = 0; n < cfg.n_agents; ++n) {
      Vehicle& veh = agents_[n];
      if (steps_ < veh.depart_step) continue;  // not yet emitted
      if (!veh.arrived) apply_action(veh, actions[n]);
      veh.x += veh.v * MergeConfig::kDt;
    }
    for (Vehicle& veh : background_) {
      drive_background(veh);
      veh.x += veh.v * MergeConfig::kDt;
    }

    // Events after the motion update.
    for (int n = 0; n < cfg.n_agents; ++n) {
      Vehicle& veh = agents_[n];
      if (steps_ < veh.depart_step) continue;
      bool was_arrived = veh.arrived;
      if (!veh.arrived && veh.x > MergeConfig::kArrivalX) {
        veh.arrived = true;
        double delta = std::abs(veh.sublane - goal_center_sublane(goal_lanes_[n])) /
                       static_cast<double>(MergeConfig::kSublanes);
        r.rewards[n] += merge_reward(MergeEvent::arrival(delta));
      }
      if (was_arrived) continue;  // rewards switch off after arrival
      if (colliding(n)) r.rewards[n] += merge_reward(MergeEvent::collision());
      if (veh.v > MergeConfig::kOverspeed) r.rewards[n] += merge_reward(MergeEvent::overspeed());
    }

    ++steps_;
    bool all_arrived = true;
    for (const Vehicle& veh : agents_)
      if (!veh.arrived) all_arrived = false;
    if (all_arrived) {
      r.terminal = true;
    } else if (steps_ >= cfg.max_steps) {
      r.terminal = true;
      r.timeout = true;
      for (int n = 0; n < cfg.n_agents; ++n)
        if (!agents_[n].arrived) r.rewards[n] += merge_reward(MergeEvent::timeout());
    }
    done_ = r.terminal;
    return r;
  }

  DecomposedState state() const override {
    DecomposedState s;
    s.agent_parts.resize(cfg.n_agents);
    for (int n = 0; n < cfg.n_agents; ++n) {
      const Vehicle& veh = agents_[n];
      s.agent_parts[n] = {veh.x / MergeConfig::kRoadLength,
                          lateral_pos(veh.sublane) / (MergeConfig::kLanes * MergeConfig::kLaneWidth),
                          veh.v / MergeConfig::kSpeedNorm};
    }
    return s;
  }

  DecomposedObservation observe(int agent) const override {
    const Vehicle& self = agents_[agent];
    DecomposedObservation o;
    double lane_offset =
        (goal_center_sublane(goal_lanes_[agent]) - self.sublane) /
        static_cast<double>(MergeConfig::kSublanes);
    o.self_part = {self.v / MergeConfig::kSpeedNorm, lane_offset,
                   std::max(0.0, MergeConfig::kArrivalX - self.x) / MergeConfig::kRoadLength};

    // Occupancy grid [13, 9, 2]: 15 m forward/backward at 2.5 m resolution,
    // four sub-lanes left/right; channels: occupancy, relative speed.
    o.others_part.assign(13 * 9 * 2, 0.0);
    std::vector<double> best(13 * 9, std::numeric_limits<double>::infinity());
    auto mark = [&](const Vehicle& other) {
      double dx = other.x - self.x;
      int ds = other.sublane - self.sublane;
      for (int col = std::max(0, ds - 1 + 4); col <= std::min(8, ds + 1 + 4); ++col)
        for (int row = 0; row < 13; ++row) {
          double center = (row - 6) * 2.5;
          if (std::abs(dx - center) >=
              1.25 + MergeConfig::kVehicleLength / 2.0)
            continue;
          int cell = row * 9 + col;
          double score = std::abs(dx);
          if (score < best[cell]) {
            best[cell] = score;
            o.others_part[cell * 2 + 0] = 1.0;
            o.others_part[cell * 2 + 1] = (other.v - self.v) / MergeConfig::kSpeedNorm;
          }
        }
    };
    for (int m = 0; m < cfg.n_agents; ++m)
      if (m != agent && steps_ >= agents_[m].depart_step) mark(agents_[m]);
    for (const Vehicle& veh : background_) mark(veh);
    return o;
  }

  Vec goal(int agent) const override {
    return one_hot(goal_lanes_[agent], MergeConfig::kLanes);
  }

  bool agent_succeeded(int agent) const override {
    const Vehicle& veh = agents_[agent];
    return veh.arrived &&
           std::abs(veh.sublane - goal_center_sublane(goal_lanes_[agent])) <= 1;
  }

  bool reducible() const override { return true; }
  std::unique_ptr<MultiGoalGame> induced_mdp() const override {
    MergeConfig c = cfg;
    c.n_agents = 1;
    c.predefined_prob = 0.0;  // lanes uniform at random
    c.background_vehicles = 0;
    return std::make_unique<LaneMergeWorld>(c);
  }
  std::unique_ptr<MultiGoalGame> clone() const override {
    return std::make_unique<LaneMergeWorld>(*this);
  }

  const Vehicle& vehicle(int n) const { return agents_.at(n); }
  Vehicle& mutable_vehicle(int n) { return agents_.at(n); }
  int goal_lane(int n) const { return goal_lanes_.at(n); }
  int current_step() const { return steps_; }

 private:
  static double lateral_pos(int sublane) {
    return MergeConfig::kSublaneWidth * sublane + MergeConfig::kSublaneWidth / 2.0;
  }

  void apply_action(Vehicle& veh, int a) {
    switch (a) {
      case 0: break;
      case 1: veh.v += MergeConfig::kAccel * MergeConfig::kDt; break;
      case 2: veh.v -= MergeConfig::kAccel * MergeConfig::kDt; break;
      case 3: veh.sublane = std::max(0, veh.sublane - 1); break;
      case 4: veh.sublane = std::min(MergeConfig::kSublanes - 1, veh.sublane + 1); break;
      default: throw std::invalid_argument("invalid action");
    }
    veh.v = std::clamp(veh.v, 0.0, MergeConfig::kMaxSpeed);
  }

  void drive_background(Vehicle& veh) {
    // Keep lane; decelerate behind close leaders, otherwise track target.
    double gap = std::numeric_limits<double>::infinity();
    auto consider = [&](const Vehicle& other) {
      if (&other == &veh) return;
      if (std::abs(other.sublane - veh.sublane) >= 2) return;
      double ahead = other.x - veh.x;
      if (ahead > 0.0) gap = std::min(gap, ahead - MergeConfig::kVehicleLength);
    };
    for (const Vehicle& v : background_) consider(v);
    for (int n = 0; n < cfg.n_agents; ++n)
      if (steps_ >= agents_[n].depart_step) consider(agents_[n]);
    if (gap < veh.v * 1.0)
      veh.v = std::max(0.0, veh.v - MergeConfig::kAccel * MergeConfig::kDt);
    else
      veh.v = std::min(veh.target_speed, veh.v + MergeConfig::kAccel * MergeConfig::kDt);
  }

  static bool overlap(const Vehicle& a, const Vehicle& b) {
    return std::abs(a.x - b.x) < MergeConfig::kVehicleLength &&
           std::abs(a.sublane - b.sublane) < 2;
  }

  bool colliding(int agent) const {
    const Vehicle& self = agents_[agent];
    for (int m = 0; m < cfg.n_agents; ++m)
      if (m != agent && steps_ >= agents_[m].depart_step && overlap(self, agents_[m])) return true;
    for (const Vehicle& veh : background_)
      if (overlap(self, veh)) return true;
    return false;
  }

  Rng rng_{0};
  std::vector<Vehicle> agents_;
  std::vector<Vehicle> background_;
  std::vector<int> goal_lanes_;
  int steps_ = 0;
  bool done_ = false;
};

}  // namespace cm3
