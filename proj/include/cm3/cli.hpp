#pragma once

// Command implementations behind the CLI: stage-wise training with run
// manifests, evaluation, the verification suites, and plot-data export.

#include <chrono>
#include <iostream>

#include "cm3/config.hpp"
#include "cm3/oracle.hpp"

namespace cm3 {

// --- run manifest -----------------------------------------------------------

struct RunPaths {
  std::string out_dir;
  std::string manifest() const { return out_dir + "/manifest.json"; }
  std::string checkpoint() const { return out_dir + "/checkpoint.json"; }
  std::string metrics() const { return out_dir + "/metrics.jsonl"; }
};

inline std::string default_run_root() {
  const char* root = std::getenv("CM3_RUN_ROOT");
  return root ? root : "runs";
}

inline Json start_manifest(const RunPaths& paths, const ConfigFile& cfg,
                           const std::string& env_id, int stage, const std::string& method,
                           uint64_t seed) {
  Json m;
  m["format"] = "cm3-manifest";
  m["version"] = 1;
  m["status"] = "running";
  m["env"] = env_id;
  m["stage"] = stage;
  m["method"] = method;
  m["master_seed"] = seed;
  m["config_text"] = cfg.text();
  m["out_dir"] = paths.out_dir;
  m["checkpoint"] = paths.checkpoint();
  m["metrics"] = paths.metrics();
  write_json_atomic(paths.manifest(), m);
  return m;
}

inline void finalize_manifest(Json m, const RunPaths& paths, bool success,
                              double wall_seconds) {
  m["status"] = success ? "completed" : "failed";
  m["wall_clock_seconds"] = wall_seconds;
  write_json_atomic(paths.manifest(), m);
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  int stage = 0;              // 0: take from config
  std::string method = "cm3";
  std::string env;            // empty: take from config
  uint64_t seed = 0;
  bool seed_set = false;
  std::string from_checkpoint;
  std::string out_dir;
};

inline int cmd_train(const TrainArgs& args) {
  ConfigFile cfg = ConfigFile::parse_file(args.config_path);
  std::string env_id = args.env.empty() ? cfg.get("run", "env") : args.env;
  if (env_id.empty()) throw std::invalid_argument("no environment given (--env or [run] env)");
  int stage = args.stage > 0 ? args.stage : cfg.get_int("run", "stage", 1);
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  std::string method_name =
      !args.method.empty() ? args.method : cfg.get("run", "method", "cm3");
  uint64_t seed = args.seed_set ? args.seed
                                : static_cast<uint64_t>(cfg.get_int("run", "seed", 0));

  Method method = method_from_string(method_name);
  if (stage == 2 && (method == Method::CM3 || method == Method::QV) &&
      args.from_checkpoint.empty())
    throw std::invalid_argument(
        "curriculum methods need --from-checkpoint with a Stage-1 checkpoint");

  RunPaths paths;
  paths.out_dir = !args.out_dir.empty()
                      ? args.out_dir
                      : default_run_root() + "/" + env_id + "_stage" + std::to_string(stage) +
                            (stage == 2 ? "_" + method_name : "") + "_seed" +
                            std::to_string(seed);
  std::filesystem::create_directories(paths.out_dir);

  Json manifest =
      start_manifest(paths, cfg, env_id, stage, stage == 1 ? "stage1" : method_name, seed);
  auto t0 = std::chrono::steady_clock::now();
  bool ok = false;
  try {
    TrainerConfig tc = trainer_config_from(cfg, seed);
    auto game = make_env(env_id, cfg, stage);
    TrainOutputs out = stage == 1
                           ? run_stage1(tc, *game, paths.out_dir)
                           : run_stage2(tc, *game, method, args.from_checkpoint, paths.out_dir);
    manifest["final_success_rate"] = out.final_success_rate;
    manifest["final_eval_joint_return"] = out.final_eval_joint_return;
    ok = true;
  } catch (const std::exception& e) {
    manifest["error"] = e.what();
    std::cerr << "train failed: " << e.what() << "\n";
  }
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  finalize_manifest(manifest, paths, ok, wall);
  return ok ? 0 : 1;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;  // path, or "checkers-optimal" for the scripted policy
  std::string env;
  int episodes = 10;
  std::string scenario;  // optional scenario file
  uint64_t seed = 0;
  std::string out_path;  // optional JSON output
};

inline int cmd_eval(const EvalArgs& args) {
  if (args.episodes <= 0) throw std::invalid_argument("eval: needs at least one episode");
  ConfigFile scenario = args.scenario.empty() ? ConfigFile::parse_string("")
                                              : ConfigFile::parse_file(args.scenario);
  std::string env_id = !args.env.empty() ? args.env : scenario.get("scenario", "env");
  if (env_id.empty()) throw std::invalid_argument("eval: no environment given");
  uint64_t seed = args.seed != 0 ? args.seed
                                 : static_cast<uint64_t>(scenario.get_int("scenario", "seed", 1));
  auto game = make_env(env_id, scenario, /*stage=*/2, "scenario");

  EvalResult res;
  if (args.checkpoint == "checkers-optimal") {
    if (env_id != "checkers")
      throw std::invalid_argument("the scripted optimal policy is checkers-only");
    JointController act = [](const MultiGoalGame& g, Rng&) {
      return checkers_optimal_actions(dynamic_cast<const CheckersWorld&>(g));
    };
    res = evaluate_controller(*game, act, args.episodes, seed);
  } else {
    Json ck = read_checkpoint(args.checkpoint);
    if (ck.value("env", "") != env_id)
      throw std::invalid_argument("checkpoint was trained on environment '" +
                                  ck.value("env", "") + "', not '" + env_id + "'");
    EnvArch arch = make_env_arch(*game, {});
    int stage = ck.value("stage", 1);
    Rng rng(1);
    NeuralPolicy policy(
        AugmentableNet::build(arch.policy, stage == 2 ? Stage::Two : Stage::One, rng),
        arch.assembler);
    load_net(policy.net, ck, stage == 2 ? "pi" : "pi1");
    if (stage == 1 && game->num_agents() != 1)
      throw std::invalid_argument("a Stage-1 checkpoint evaluates on the induced MDP only");
    double eps = scenario.get_num("scenario", "epsilon", 0.05);
    res = evaluate_policy(*game, policy, eps, args.episodes, seed);
  }

  Json record{{"env", env_id},
              {"episodes", args.episodes},
              {"seed", seed},
              {"returns", res.mean_agent_returns},
              {"joint_return", res.joint_mean},
              {"joint_std", res.joint_std},
              {"success", res.success_rates}};
  std::cout << record.dump() << "\n";
  if (!args.out_path.empty()) write_json_atomic(args.out_path, record);
  return 0;
}

// --- verify -------------------------------------------------------------------

struct VerifyArgs {
  std::string suite = "all";  // identities | gradients | variance | coop-prob | all
  uint64_t seed = 12345;
  int trials = 0;  // 0: per-suite default
  std::string out_path;
};

namespace detail {

inline Json check_entry(const std::string& name, double value, double limit, bool pass) {
  return Json{{"name", name}, {"value", value}, {"limit", limit}, {"pass", pass}};
}

inline Json verify_identities(uint64_t seed, int trials) {
  Rng rng = substream(seed, 0x1D);
  Json checks = Json::array();
  bool all = true;
  for (int t = 0; t < trials; ++t) {
    ToyMatrixGame g = random_toy_game(rng, 2, uniform_int(rng, 3, 4), uniform_int(rng, 3, 4),
                                      uniform_int(rng, 2, 3), uniform(rng, 0.5, 0.99));
    TabularSoftmaxPolicy pol =
        TabularSoftmaxPolicy::random(g, rng, 1.0, t % 2 == 0 ? 0.0 : 0.05);
    TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
    IdentityReport rep = check_identities(g, sol);
    double res = rep.max_residual();
    bool pass = rep.all_pass();
    all = all && pass;
    checks.push_back(check_entry("game_" + std::to_string(t), res, 1e-10, pass));
  }
  return Json{{"suite", "identities"}, {"trials", trials}, {"checks", checks}, {"pass", all}};
}

inline Json verify_gradients(uint64_t seed, int trials) {
  Rng rng = substream(seed, 0x26AD);
  Json checks = Json::array();
  bool all = true;
  auto record = [&](const std::string& name, double rel, double limit) {
    bool pass = rel <= limit;
    all = all && pass;
    checks.push_back(check_entry(name, rel, limit, pass));
  };
  for (int t = 0; t < trials; ++t) {
    ToyMatrixGame g = random_toy_game(rng, 2, 3, 2, 2, uniform(rng, 0.7, 0.95));
    TabularSoftmaxPolicy pol =
        TabularSoftmaxPolicy::random(g, rng, 0.8, t % 2 == 0 ? 0.0 : 0.05);
    TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
    TabularCriticSet critics(g, sol);
    TabularComaCritic coma(g, sol);
    EstimatorInputs in;
    in.critics = &critics;
    in.coma = &coma;
    Vec fd = finite_difference_gradient(g, pol);
    double scale = 1.0;
    for (double v : fd) scale = std::max(scale, std::abs(v));
    for (Estimator e : {Estimator::CM3, Estimator::QV, Estimator::COMA}) {
      Vec ex = estimator_exact_expectation(e, g, pol, in);
      double worst = 0.0;
      for (size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, std::abs(ex[i] - fd[i]));
      record(std::string(to_string(e)) + "_unbiased_" + std::to_string(t), worst / scale, 1e-6);
    }

    ToyMatrixGame m = random_toy_game(rng, 1, 3, 3, 3, uniform(rng, 0.7, 0.95));
    TabularSoftmaxPolicy polm = TabularSoftmaxPolicy::random(m, rng, 0.8, 0.02);
    TabularSolution solm = solve_tabular(m, tabulate_policy(m, polm));
    TabularCriticSet criticsm(m, solm);
    TabularValueModel value(solm);
    EstimatorInputs inm;
    inm.critics = &criticsm;
    inm.value = &value;
    inm.value_target = &value;
    inm.gamma = m.gamma;
    Vec fdm = finite_difference_gradient(m, polm);
    double scalem = 1.0;
    for (double v : fdm) scalem = std::max(scalem, std::abs(v));
    for (Estimator e : {Estimator::Stage1, Estimator::IAC}) {
      Vec ex = estimator_exact_expectation(e, m, polm, inm);
      double worst = 0.0;
      for (size_t i = 0; i < fdm.size(); ++i)
        worst = std::max(worst, std::abs(ex[i] - fdm[i]));
      record(std::string(to_string(e)) + "_unbiased_" + std::to_string(t), worst / scalem,
             1e-6);
    }

    // Baseline zero-mean by exact enumeration.
    double zb = 0.0;
    for (int agent = 0; agent < 2; ++agent)
      for (int s = 0; s < g.n_states; ++s) {
        Vec probs = pol.action_probabilities(toy_observation(s), g.goal(agent));
        Vec acc(pol.num_params(), 0.0);
        for (int a = 0; a < g.actions_per_agent[agent]; ++a)
          pol.accumulate_score_gradient(toy_observation(s), g.goal(agent), a, probs[a], acc);
        for (double v : acc) zb = std::max(zb, std::abs(v));
      }
    record("baseline_zero_mean_" + std::to_string(t), zb, 1e-12);
  }
  return Json{{"suite", "gradients"}, {"trials", trials}, {"checks", checks}, {"pass", all}};
}

inline Json verify_variance(uint64_t seed, int samples) {
  Rng rng = substream(seed, 0x7A2);
  ToyMatrixGame g = random_toy_game(rng, 2, 3, 2, 2, 0.9);
  TabularSoftmaxPolicy pol = TabularSoftmaxPolicy::random(g, rng, 0.8, 0.05);
  TabularSolution sol = solve_tabular(g, tabulate_policy(g, pol));
  TabularCriticSet critics(g, sol);
  TabularComaCritic coma(g, sol);
  EstimatorInputs in;
  in.critics = &critics;
  in.coma = &coma;

  Json checks = Json::array();
  bool all = true;
  auto record = [&](const std::string& name, double value, double limit) {
    bool pass = value <= limit;
    all = all && pass;
    checks.push_back(check_entry(name, value, limit, pass));
  };

  VarianceReport ex_cm3 = exact_variance_cm3(g, pol, sol);
  VarianceProbeResult pr_cm3 =
      variance_probe(Estimator::CM3, g, pol, in, static_cast<size_t>(samples), seed);
  record("cm3_closed_vs_empirical", std::abs(pr_cm3.variance - ex_cm3.variance),
         3.0 * pr_cm3.variance_se);
  record("cm3_decomposition_consistency", std::abs(ex_cm3.variance - ex_cm3.variance_direct),
         1e-9);

  VarianceReport ex_coma = exact_variance_coma(g, pol, sol);
  VarianceProbeResult pr_coma =
      variance_probe(Estimator::COMA, g, pol, in, static_cast<size_t>(samples), seed);
  record("coma_closed_vs_empirical", std::abs(pr_coma.variance - ex_coma.variance),
         3.0 * pr_coma.variance_se);
  record("coma_decomposition_consistency",
         std::abs(ex_coma.variance - ex_coma.variance_direct), 1e-9);
  record("coma_score_baseline_zero_mean", ex_coma.zb_max, 1e-12);

  Json j{{"suite", "variance"}, {"samples", samples}, {"checks", checks}, {"pass", all}};
  j["cm3_variance"] = ex_cm3.variance;
  j["coma_variance"] = ex_coma.variance;
  return j;
}

inline Json verify_coop_prob() {
  CooperationProbability p = cooperation_probability(0.5);
  Json checks = Json::array();
  double e1 = std::abs(p.greedy_mix - 0.011641532182693481);
  double e2 = std::abs(p.uniform - 3.0517578125e-5);
  bool all = e1 <= 1e-9 && e2 <= 1e-9;
  checks.push_back(check_entry("greedy_mix_eps_0.5", p.greedy_mix, 1e-9, e1 <= 1e-9));
  checks.push_back(check_entry("uniform_random", p.uniform, 1e-9, e2 <= 1e-9));
  return Json{{"suite", "coop-prob"}, {"checks", checks}, {"pass", all}};
}

}  // namespace detail

inline int cmd_verify(const VerifyArgs& args) {
  std::vector<Json> reports;
  auto want = [&](const std::string& s) { return args.suite == "all" || args.suite == s; };
  if (want("identities"))
    reports.push_back(detail::verify_identities(args.seed, args.trials > 0 ? args.trials : 50));
  if (want("gradients"))
    reports.push_back(detail::verify_gradients(args.seed, args.trials > 0 ? args.trials : 20));
  if (want("variance"))
    reports.push_back(detail::verify_variance(args.seed, args.trials > 0 ? args.trials : 100000));
  if (want("coop-prob")) reports.push_back(detail::verify_coop_prob());
  if (reports.empty()) throw std::invalid_argument("unknown verify suite: " + args.suite);

  bool all = true;
  Json out = Json::array();
  for (const Json& r : reports) {
    all = all && r["pass"].get<bool>();
    out.push_back(r);
  }
  Json report{{"format", "cm3-verify-report"}, {"pass", all}, {"suites", out}};
  std::cout << report.dump(2) << "\n";
  if (!args.out_path.empty()) write_json_atomic(args.out_path, report);
  return all ? 0 : 1;
}

// --- export-plots ---------------------------------------------------------------

struct ExportArgs {
  std::vector<std::string> metrics_paths;
  std::string out;
};

/// Aligns several runs' metrics on the episode index and writes
/// tab-delimited columns: episode, mean joint return, std. Runs of
/// different lengths are truncated to the common prefix with a warning;
/// mismatched episode indices are an error.
inline int cmd_export_plots(const ExportArgs& args) {
  if (args.metrics_paths.empty()) throw std::invalid_argument("export-plots: no metrics files");
  std::vector<std::vector<std::pair<int, double>>> runs;
  for (const std::string& path : args.metrics_paths) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics " + path);
    std::vector<std::pair<int, double>> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Json j = Json::parse(line);
      rows.emplace_back(j.at("episode").get<int>(), j.at("joint_return").get<double>());
    }
    runs.push_back(std::move(rows));
  }
  size_t common = runs[0].size();
  for (const auto& r : runs) common = std::min(common, r.size());
  if (common == 0) throw std::runtime_error("export-plots: a metrics file has no records");
  for (const auto& r : runs)
    if (r.size() != common)
      std::cerr << "export-plots: warning: runs have different lengths; truncating to "
                << common << " records\n";
  for (size_t i = 0; i < common; ++i)
    for (const auto& r : runs)
      if (r[i].first != runs[0][i].first)
        throw std::runtime_error("export-plots: evaluation cadences are misaligned at row " +
                                 std::to_string(i));

  std::ostringstream body;
  body << "episode\tmean\tstd\n";
  for (size_t i = 0; i < common; ++i) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r[i].second;
    mean /= runs.size();
    double var = 0.0;
    for (const auto& r : runs) var += (r[i].second - mean) * (r[i].second - mean);
    double sd = std::sqrt(var / runs.size());
    body << runs[0][i].first << "\t" << mean << "\t" << sd << "\n";
  }
  std::filesystem::path target(args.out);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::ofstream out(target);
  if (!out) throw std::runtime_error("cannot write " + args.out);
  out << body.str();
  return 0;
}

}  // namespace cm3
