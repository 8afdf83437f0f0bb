#pragma once

// Human-readable key-value configuration files with [sections] and '#'
// comments, plus the environment factory and scenario handling.

#include <map>
#include <sstream>

#include "cm3/envs/checkers.hpp"
#include "cm3/envs/lane_merge.hpp"
#include "cm3/envs/navigation.hpp"
#include "cm3/trainer.hpp"

namespace cm3 {

class ConfigFile {
 public:
  static ConfigFile parse_string(const std::string& text) {
    ConfigFile cfg;
    cfg.text_ = text;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#' || s[0] == ';') continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw std::invalid_argument("config line " + std::to_string(lineno) +
                                      ": malformed section header");
        section = strip(s.substr(1, s.size() - 2));
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": expected key = value");
      std::string key = strip(s.substr(0, eq));
      std::string value = strip(s.substr(eq + 1));
      auto hash = value.find('#');
      if (hash != std::string::npos) value = strip(value.substr(0, hash));
      cfg.values_[section][key] = value;
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_string(text);
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = values_.find(section);
    return s != values_.end() && s->second.count(key) > 0;
  }
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback = "") const {
    auto s = values_.find(section);
    if (s == values_.end()) return fallback;
    auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }
  double get_num(const std::string& section, const std::string& key, double fallback) const {
    std::string v = get(section, key);
    return v.empty() ? fallback : std::stod(v);
  }
  int get_int(const std::string& section, const std::string& key, int fallback) const {
    std::string v = get(section, key);
    return v.empty() ? fallback : static_cast<int>(std::llround(std::stod(v)));
  }
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
    std::string v = get(section, key);
    if (v.empty()) return fallback;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config: not a boolean: " + v);
  }
  std::vector<int> get_ints(const std::string& section, const std::string& key) const {
    std::vector<int> out;
    std::istringstream in(get(section, key));
    std::string tok;
    while (in >> tok) out.push_back(std::stoi(tok));
    return out;
  }
  const std::string& text() const { return text_; }

 private:
  static std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::map<std::string, std::string>> values_;
  std::string text_;
};

inline TrainerConfig trainer_config_from(const ConfigFile& cfg, uint64_t seed) {
  TrainerConfig t;
  t.episodes = cfg.get_int("train", "episodes", t.episodes);
  t.eps_start = cfg.get_num("train", "eps_start", t.eps_start);
  t.eps_end = cfg.get_num("train", "eps_end", t.eps_end);
  t.eps_div = cfg.get_num("train", "eps_div", t.eps_div);
  t.buffer_capacity = cfg.get_int("train", "buffer", t.buffer_capacity);
  t.off_policy = cfg.get_bool("train", "off_policy", t.off_policy);
  t.minibatch = cfg.get_int("train", "minibatch", t.minibatch);
  t.episodes_per_train = cfg.get_int("train", "episodes_per_train", t.episodes_per_train);
  t.steps_per_train = cfg.get_int("train", "steps_per_train", t.steps_per_train);
  t.epochs = cfg.get_int("train", "epochs", t.epochs);
  t.lr_policy = cfg.get_num("train", "lr_policy", t.lr_policy);
  t.lr_q = cfg.get_num("train", "lr_q", t.lr_q);
  t.lr_v = cfg.get_num("train", "lr_v", t.lr_v);
  t.tau = cfg.get_num("train", "tau", t.tau);
  t.gamma = cfg.get_num("train", "gamma", t.gamma);
  t.eval_interval = cfg.get_int("train", "eval_interval", t.eval_interval);
  t.eval_episodes = cfg.get_int("train", "eval_episodes", t.eval_episodes);
  t.width_scale = cfg.get_num("train", "width_scale", t.width_scale);
  t.seed = seed;
  return t;
}

/// App-E-style lane configurations for evaluation scenarios.
inline void apply_merge_scenario_config(MergeConfig& m, const std::string& name) {
  if (name == "C1") {
    m.fixed_init_lanes = {1, 2};
    m.fixed_goal_lanes = {3, 0};
    m.predefined_prob = 1.0;
  } else if (name == "C2") {
    m.predefined_prob = 0.0;  // both lanes uniform at random
  } else if (name == "C3") {
    m.fixed_init_lanes = {1, 2};
    m.fixed_goal_lanes = {2, 1};
    m.predefined_prob = 1.0;
  } else if (name == "C4") {
    m.fixed_init_lanes = {0, 1};
    m.fixed_goal_lanes = {3, 2};
    m.predefined_prob = 1.0;
  } else {
    throw std::invalid_argument("unknown lane configuration: " + name);
  }
}

/// Builds an environment from the [env] section (or a scenario file's
/// [scenario] section). Stage 1 builds the full game and then applies the
/// induced single-agent reduction.
inline std::unique_ptr<MultiGoalGame> make_env(const std::string& env_id, const ConfigFile& cfg,
                                               int stage, const std::string& section = "env") {
  std::unique_ptr<MultiGoalGame> game;
  if (env_id == "nav") {
    NavConfig c;
    c.formation = formation_from_string(cfg.get(section, "formation", "uniform"));
    c.n_agents = cfg.get_int(section, "agents",
                             c.formation == Formation::UniformRandom
                                 ? 4
                                 : formation_agent_count(c.formation));
    c.predefined_prob = cfg.get_num(section, "predefined_prob", c.predefined_prob);
    c.max_steps = cfg.get_int(section, "max_steps", c.max_steps);
    c.gamma = cfg.get_num(section, "gamma", c.gamma);
    game = std::make_unique<NavigationWorld>(c);
  } else if (env_id == "merge") {
    MergeConfig c;
    std::string lane_config = cfg.get(section, "config", "");
    if (!lane_config.empty()) apply_merge_scenario_config(c, lane_config);
    if (cfg.has(section, "init_lanes")) c.fixed_init_lanes = cfg.get_ints(section, "init_lanes");
    if (cfg.has(section, "goal_lanes")) c.fixed_goal_lanes = cfg.get_ints(section, "goal_lanes");
    c.n_agents = cfg.get_int(section, "agents", c.n_agents);
    c.predefined_prob = cfg.get_num(section, "predefined_prob", c.predefined_prob);
    c.background_vehicles = cfg.get_int(section, "background", c.background_vehicles);
    c.max_steps = cfg.get_int(section, "max_steps", c.max_steps);
    c.gamma = cfg.get_num(section, "gamma", c.gamma);
    game = std::make_unique<LaneMergeWorld>(c);
  } else if (env_id == "checkers") {
    CheckersConfig c;
    c.reward_cols = cfg.get_int(section, "reward_cols", c.reward_cols);
    c.max_steps = cfg.get_int(section, "max_steps", c.max_steps);
    c.gamma = cfg.get_num(section, "gamma", c.gamma);
    game = std::make_unique<CheckersWorld>(c);
  } else {
    throw std::invalid_argument("unknown environment: " + env_id);
  }

  if (stage == 1) {
    auto induced = induce_single_agent_mdp(*game);
    int stage1_steps = cfg.get_int(section, "stage1_max_steps", 0);
    if (stage1_steps > 0) {
      if (auto* nav = dynamic_cast<NavigationWorld*>(induced.get()))
        nav->cfg.max_steps = stage1_steps;
      else if (auto* merge = dynamic_cast<LaneMergeWorld*>(induced.get()))
        merge->cfg.max_steps = stage1_steps;
      else if (auto* ck = dynamic_cast<CheckersWorld*>(induced.get()))
        ck->cfg.max_steps = stage1_steps;
    }
    return induced;
  }
  return game;
}

}  // namespace cm3
