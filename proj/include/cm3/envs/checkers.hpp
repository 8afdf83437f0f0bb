#pragma once

// Checkers gridworld: a bordered grid whose middle band holds a checkered
// pattern of red and yellow collectibles. Agent A wants red, agent B wants
// yellow; stepping on the other color costs both sides. Walkable area is
// 5 rows x (C+5) columns inside a 2-cell border that keeps the 5x5 field
// of view well-defined.

#include <deque>

#include "cm3/game.hpp"

namespace cm3 {

enum class CheckersRole { A, B };
enum class CellContent { Empty, Red, Yellow };

/// Collection reward: A gets +1 red / -0.5 yellow, B the mirror image.
inline double checkers_reward(CheckersRole role, CellContent cell) {
  switch (cell) {
    case CellContent::Empty: return 0.0;
    case CellContent::Red: return role == CheckersRole::A ? 1.0 : -0.5;
    case CellContent::Yellow: return role == CheckersRole::B ? 1.0 : -0.5;
  }
  return 0.0;
}

struct CheckersConfig {
  int reward_cols = 8;  // pattern is 3 x reward_cols
  int max_steps = 75;
  double gamma = 0.99;
  int n_agents = 2;  // 1 selects the induced single-agent game
};

class CheckersWorld final : public MultiGoalGame {
 public:
  CheckersConfig cfg;

  explicit CheckersWorld(CheckersConfig c) : cfg(c) {
    if (cfg.reward_cols < 1 || cfg.reward_cols % 2 != 0)
      throw std::invalid_argument("reward_cols must be positive and even");
    if (cfg.n_agents != 1 && cfg.n_agents != 2)
      throw std::invalid_argument("checkers supports 1 or 2 agents");
  }

  // Geometry (array coordinates; border thickness 2 on every side).
  int array_rows() const { return 9; }
  int array_cols() const { return cfg.reward_cols + 9; }
  static constexpr int kWalkTop = 2, kWalkBottom = 6;
  int walk_left() const { return 2; }
  int walk_right() const { return array_cols() - 3; }
  static constexpr int kPatternTop = 3, kPatternBottom = 5;
  int pattern_left() const { return 4; }
  int pattern_right() const { return 4 + cfg.reward_cols - 1; }
  // State window: the pattern rows by the centered reward_cols+1 columns.
  int window_left() const { return 4; }
  int window_cols() const { return cfg.reward_cols + 1; }
  int center_col() const { return (array_cols() - 1) / 2; }

  std::string name() const override { return "checkers"; }
  int num_agents() const override { return cfg.n_agents; }
  int num_actions(int) const override { return 5; }
  double discount() const override { return cfg.gamma; }
  int horizon() const override { return cfg.max_steps; }

  FeatureSpec features() const override {
    FeatureSpec f;
    f.state_env_segments = {SegmentDef{3, window_cols(), 2, 0}};
    f.agent_state_dim = 4;
    f.o_self_segments = {SegmentDef{5, 5, 3, 0}, SegmentDef{.flat = 4 + 5}};
    f.o_others_segments = {SegmentDef{.flat = 2 * std::max(1, cfg.n_agents - 1)}};
    f.goal_dim = 2;
    return f;
  }

  void seed(uint64_t s) override { rng_ = substream(s, 0xC4EC); }

  void reset() override {
    steps_ = 0;
    done_ = false;
    board_.assign(static_cast<size_t>(array_rows()) * array_cols(), CellContent::Empty);
    remaining_ = 0;
    for (int r = kPatternTop; r <= kPatternBottom; ++r)
      for (int c = pattern_left(); c <= pattern_right(); ++c) {
        cell(r, c) = ((r + c) % 2 == 0) ? CellContent::Red : CellContent::Yellow;
        ++remaining_;
      }

    roles_.clear();
    if (cfg.n_agents == 2) {
      roles_ = {CheckersRole::A, CheckersRole::B};
      rows_ = {kWalkTop, kWalkBottom};
      cols_ = {center_col(), center_col()};
    } else {
      // Induced game: the single agent takes a random role each episode.
      roles_ = {uniform_int(rng_, 0, 1) == 0 ? CheckersRole::A : CheckersRole::B};
      rows_ = {roles_[0] == CheckersRole::A ? kWalkTop : kWalkBottom};
      cols_ = {center_col()};
    }
    red_counts_.assign(cfg.n_agents, 0);
    yellow_counts_.assign(cfg.n_agents, 0);
    wrong_counts_.assign(cfg.n_agents, 0);
    prev_actions_.assign(cfg.n_agents, 0);
  }

  StepResult step(std::span<const int> actions) override {
    if (static_cast<int>(actions.size()) != cfg.n_agents)
      throw std::invalid_argument("step: wrong joint action size");
    if (done_) throw std::logic_error("step after terminal");

    std::vector<int> nr(cfg.n_agents), nc(cfg.n_agents);
    for (int n = 0; n < cfg.n_agents; ++n) {
      auto [dr, dc] = action_delta(actions[n]);
      nr[n] = rows_[n] + dr;
      nc[n] = cols_[n] + dc;
      if (!walkable(nr[n], nc[n])) {
        nr[n] = rows_[n];
        nc[n] = cols_[n];
      }
    }
    if (cfg.n_agents == 2) {
      bool same_target = nr[0] == nr[1] && nc[0] == nc[1];
      bool swap = nr[0] == rows_[1] && nc[0] == cols_[1] && nr[1] == rows_[0] &&
                  nc[1] == cols_[0];
      if (same_target || swap) {
        nr = {rows_[0], rows_[1]};
        nc = {cols_[0], cols_[1]};
      } else {
        // Moving into the other agent's cell only works if it vacates.
        for (int n = 0; n < 2; ++n) {
          int other = 1 - n;
          bool into_other = nr[n] == rows_[other] && nc[n] == cols_[other];
          bool other_stays = nr[other] == rows_[other] && nc[other] == cols_[other];
          if (into_other && other_stays) {
            nr[n] = rows_[n];
            nc[n] = cols_[n];
          }
        }
      }
    }

    StepResult r;
    r.rewards.assign(cfg.n_agents, 0.0);
    for (int n = 0; n < cfg.n_agents; ++n) {
      rows_[n] = nr[n];
      cols_[n] = nc[n];
      CellContent& content = cell(rows_[n], cols_[n]);
      if (content != CellContent::Empty) {
        r.rewards[n] = checkers_reward(roles_[n], content);
        if (content == CellContent::Red) {
          ++red_counts_[n];
          if (roles_[n] != CheckersRole::A) ++wrong_counts_[n];
        } else {
          ++yellow_counts_[n];
          if (roles_[n] != CheckersRole::B) ++wrong_counts_[n];
        }
        content = CellContent::Empty;
        --remaining_;
      }
      prev_actions_[n] = actions[n];
    }

    ++steps_;
    if (remaining_ == 0) {
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
    s.env_part.assign(static_cast<size_t>(3) * window_cols() * 2, 0.0);
    for (int r = kPatternTop; r <= kPatternBottom; ++r)
      for (int c = window_left(); c < window_left() + window_cols(); ++c) {
        int idx = ((r - kPatternTop) * window_cols() + (c - window_left())) * 2;
        if (cell_at(r, c) == CellContent::Red) s.env_part[idx] = 1.0;
        if (cell_at(r, c) == CellContent::Yellow) s.env_part[idx + 1] = 1.0;
      }
    s.agent_parts.resize(cfg.n_agents);
    for (int n = 0; n < cfg.n_agents; ++n) s.agent_parts[n] = agent_vector(n);
    return s;
  }

  DecomposedObservation observe(int agent) const override {
    DecomposedObservation o;
    o.self_part.assign(5 * 5 * 3, 0.0);
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j) {
        int r = rows_[agent] + i, c = cols_[agent] + j;
        int idx = ((i + 2) * 5 + (j + 2)) * 3;
        CellContent content =
            (r >= 0 && r < array_rows() && c >= 0 && c < array_cols()) ? cell_at(r, c)
                                                                       : CellContent::Empty;
        if (content == CellContent::Red) o.self_part[idx] = 1.0;
        if (content == CellContent::Yellow) o.self_part[idx + 1] = 1.0;
        bool invalid = !walkable(r, c) || occupied_by_other(agent, r, c);
        if (invalid) o.self_part[idx + 2] = 1.0;
      }
    append(o.self_part, agent_vector(agent));
    append(o.self_part, one_hot(prev_actions_[agent], 5));
    for (int m = 0; m < cfg.n_agents; ++m) {
      if (m == agent) continue;
      o.others_part.push_back(static_cast<double>(rows_[m]) / (array_rows() - 1));
      o.others_part.push_back(static_cast<double>(cols_[m]) / (array_cols() - 1));
    }
    if (cfg.n_agents == 1) o.others_part = {};
    return o;
  }

  Vec goal(int agent) const override {
    return one_hot(roles_[agent] == CheckersRole::A ? 0 : 1, 2);
  }

  bool agent_succeeded(int agent) const override {
    int own = roles_[agent] == CheckersRole::A ? red_counts_[agent] : yellow_counts_[agent];
    return own == own_total() && wrong_counts_[agent] == 0;
  }

  bool reducible() const override { return cfg.n_agents == 2; }
  std::unique_ptr<MultiGoalGame> induced_mdp() const override {
    if (cfg.n_agents != 2)
      throw std::logic_error("unsupported-reduction: game declares itself irreducible");
    CheckersConfig c = cfg;
    c.n_agents = 1;
    return std::make_unique<CheckersWorld>(c);
  }
  std::unique_ptr<MultiGoalGame> clone() const override {
    return std::make_unique<CheckersWorld>(*this);
  }

  // --- inspection helpers (scripted policies, tests) -----------------------

  int total_reward_cells() const { return 3 * cfg.reward_cols; }
  int own_total() const { return total_reward_cells() / 2; }
  int remaining() const { return remaining_; }
  CellContent cell_at(int r, int c) const { return board_[r * array_cols() + c]; }
  bool walkable(int r, int c) const {
    return r >= kWalkTop && r <= kWalkBottom && c >= walk_left() && c <= walk_right();
  }
  int agent_row(int n) const { return rows_.at(n); }
  int agent_col(int n) const { return cols_.at(n); }
  CheckersRole role(int n) const { return roles_.at(n); }

 private:
  CellContent& cell(int r, int c) { return board_[r * array_cols() + c]; }

  Vec agent_vector(int n) const {
    return {static_cast<double>(rows_[n]) / (array_rows() - 1),
            static_cast<double>(cols_[n]) / (array_cols() - 1),
            static_cast<double>(red_counts_[n]) / own_total(),
            static_cast<double>(yellow_counts_[n]) / own_total()};
  }

  bool occupied_by_other(int agent, int r, int c) const {
    for (int m = 0; m < cfg.n_agents; ++m)
      if (m != agent && rows_[m] == r && cols_[m] == c) return true;
    return false;
  }

  static std::pair<int, int> action_delta(int a) {
    switch (a) {
      case 0: return {0, 0};
      case 1: return {-1, 0};
      case 2: return {1, 0};
      case 3: return {0, -1};
      case 4: return {0, 1};
    }
    throw std::invalid_argument("invalid action");
  }

  Rng rng_{0};
  std::vector<CellContent> board_;
  std::vector<CheckersRole> roles_;
  std::vector<int> rows_, cols_;
  std::vector<int> red_counts_, yellow_counts_, wrong_counts_;
  std::vector<int> prev_actions_;
  int remaining_ = 0;
  int steps_ = 0;
  bool done_ = false;
};

struct CheckersPlan {
  int action = 0;
  int dist = std::numeric_limits<int>::max();  // max() when nothing reachable
};

/// BFS to the nearest own-color collectible through cells that are
/// walkable, free of the other color, and not the other agent's position.
inline CheckersPlan checkers_greedy_plan(const CheckersWorld& w, int agent) {
  const CheckersRole role = w.role(agent);
  const CellContent own = role == CheckersRole::A ? CellContent::Red : CellContent::Yellow;
  const CellContent other = role == CheckersRole::A ? CellContent::Yellow : CellContent::Red;

  const int cols = w.array_cols();
  auto passable = [&](int r, int c) {
    if (!w.walkable(r, c)) return false;
    if (w.cell_at(r, c) == other) return false;
    for (int m = 0; m < w.num_agents(); ++m)
      if (m != agent && w.agent_row(m) == r && w.agent_col(m) == c) return false;
    return true;
  };

  std::vector<int> first_action(static_cast<size_t>(w.array_rows()) * cols, -1);
  std::vector<int> dist(first_action.size(), -1);
  std::deque<std::pair<int, int>> queue;
  int sr = w.agent_row(agent), sc = w.agent_col(agent);
  dist[sr * cols + sc] = 0;
  first_action[sr * cols + sc] = 0;
  queue.emplace_back(sr, sc);
  static constexpr int kDr[] = {-1, 1, 0, 0};
  static constexpr int kDc[] = {0, 0, -1, 1};
  static constexpr int kAction[] = {1, 2, 3, 4};
  while (!queue.empty()) {
    auto [r, c] = queue.front();
    queue.pop_front();
    int idx = r * cols + c;
    if (w.cell_at(r, c) == own)
      return {first_action[idx], dist[idx]};  // first hit in BFS order is nearest
    for (int k = 0; k < 4; ++k) {
      int r2 = r + kDr[k], c2 = c + kDc[k];
      if (!passable(r2, c2)) continue;
      int idx2 = r2 * cols + c2;
      if (dist[idx2] >= 0) continue;
      dist[idx2] = dist[idx] + 1;
      first_action[idx2] = dist[idx] == 0 ? kAction[k] : first_action[idx];
      queue.emplace_back(r2, c2);
    }
  }
  return {};  // nothing reachable yet: wait
}

/// Hand-coded optimal joint play: each agent walks to its nearest own-color
/// collectible; contested cells go to the agent closer to its target, the
/// other waits one step. Clearing the near rows unlocks the middle row for
/// the other color, which collects the full board.
inline std::vector<int> checkers_optimal_actions(const CheckersWorld& w) {
  std::vector<CheckersPlan> plans(w.num_agents());
  for (int n = 0; n < w.num_agents(); ++n) plans[n] = checkers_greedy_plan(w, n);
  if (w.num_agents() == 1) return {plans[0].action};

  auto delta = [](int a) -> std::pair<int, int> {
    switch (a) {
      case 1: return {-1, 0};
      case 2: return {1, 0};
      case 3: return {0, -1};
      case 4: return {0, 1};
    }
    return {0, 0};
  };
  std::array<std::pair<int, int>, 2> target;
  for (int n = 0; n < 2; ++n) {
    auto [dr, dc] = delta(plans[n].action);
    target[n] = {w.agent_row(n) + dr, w.agent_col(n) + dc};
  }
  bool same = target[0] == target[1];
  bool swap = target[0] == std::pair{w.agent_row(1), w.agent_col(1)} &&
              target[1] == std::pair{w.agent_row(0), w.agent_col(0)};
  if (same || swap) {
    int loser = plans[0].dist <= plans[1].dist ? 1 : 0;
    plans[loser].action = 0;
    auto [dr, dc] = delta(plans[1 - loser].action);
    target[1 - loser] = {w.agent_row(1 - loser) + dr, w.agent_col(1 - loser) + dc};
    target[loser] = {w.agent_row(loser), w.agent_col(loser)};
  }
  for (int n = 0; n < 2; ++n) {
    int m = 1 - n;
    bool into_other = target[n] == std::pair{w.agent_row(m), w.agent_col(m)};
    bool other_stays = plans[m].action == 0;
    if (into_other && other_stays) plans[n].action = 0;
  }
  return {plans[0].action, plans[1].action};
}

}  // namespace cm3
