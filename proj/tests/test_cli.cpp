#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cm3/cli.hpp"

using namespace cm3;

namespace {

std::string temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("cm3_cli_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string write_file(const std::string& dir, const std::string& name,
                       const std::string& text) {
  std::string path = dir + "/" + name;
  std::ofstream out(path);
  out << text;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const char* kTinyNavStage1 = R"(
[run]
env = nav
stage = 1

[env]
formation = merge
stage1_max_steps = 25

[train]
episodes = 12
eps_start = 1.0
eps_end = 0.1
eps_div = 10
buffer = 2000
minibatch = 32
episodes_per_train = 4
epochs = 2
eval_interval = 6
eval_episodes = 2
)";

}  // namespace

TEST_CASE("config parsing") {
  ConfigFile cfg = ConfigFile::parse_string(
      "# comment\n[run]\nenv = nav   # trailing comment\nstage=2\n"
      "[train]\nepisodes = 1e3\noff_policy = true\nlanes = 1 2 3\n");
  REQUIRE(cfg.get("run", "env") == "nav");
  REQUIRE(cfg.get_int("run", "stage", 0) == 2);
  REQUIRE(cfg.get_int("train", "episodes", 0) == 1000);
  REQUIRE(cfg.get_bool("train", "off_policy", false));
  REQUIRE(cfg.get_ints("train", "lanes") == std::vector<int>{1, 2, 3});
  REQUIRE(cfg.get("missing", "key", "fallback") == "fallback");
  REQUIRE_THROWS_AS(ConfigFile::parse_string("[broken\n"), std::invalid_argument);
  REQUIRE_THROWS_AS(ConfigFile::parse_string("[a]\nnot a pair\n"), std::invalid_argument);
}

TEST_CASE("train command produces a self-describing run directory") {
  std::string dir = temp_dir("train");
  std::string cfg = write_file(dir, "cfg.ini", kTinyNavStage1);
  TrainArgs args;
  args.config_path = cfg;
  args.seed = 5;
  args.seed_set = true;
  args.out_dir = dir + "/run";
  REQUIRE(cmd_train(args) == 0);

  Json manifest = Json::parse(slurp(dir + "/run/manifest.json"));
  REQUIRE(manifest["status"] == "completed");
  REQUIRE(manifest["env"] == "nav");
  REQUIRE(manifest["stage"] == 1);
  REQUIRE(manifest["master_seed"] == 5);
  REQUIRE(manifest["config_text"].get<std::string>().find("episodes = 12") !=
          std::string::npos);
  // Every referenced output exists on success.
  REQUIRE(std::filesystem::exists(manifest["checkpoint"].get<std::string>()));
  REQUIRE(std::filesystem::exists(manifest["metrics"].get<std::string>()));
}

TEST_CASE("identical config and seed give bit-identical metrics") {
  std::string dir = temp_dir("repro");
  std::string cfg = write_file(dir, "cfg.ini", kTinyNavStage1);
  TrainArgs a;
  a.config_path = cfg;
  a.seed = 9;
  a.seed_set = true;
  a.out_dir = dir + "/a";
  REQUIRE(cmd_train(a) == 0);
  TrainArgs b = a;
  b.out_dir = dir + "/b";
  REQUIRE(cmd_train(b) == 0);
  REQUIRE(slurp(dir + "/a/metrics.jsonl") == slurp(dir + "/b/metrics.jsonl"));
  REQUIRE_FALSE(slurp(dir + "/a/metrics.jsonl").empty());
}

TEST_CASE("stage-2 curriculum methods demand a checkpoint") {
  std::string dir = temp_dir("nockpt");
  std::string cfg = write_file(dir, "cfg.ini", kTinyNavStage1);
  TrainArgs args;
  args.config_path = cfg;
  args.stage = 2;
  args.method = "cm3";
  args.out_dir = dir + "/run";
  REQUIRE_THROWS_AS(cmd_train(args), std::invalid_argument);
}

TEST_CASE("stage-2 direct runs without a checkpoint") {
  std::string dir = temp_dir("direct");
  std::string cfg = write_file(dir, "cfg.ini", kTinyNavStage1);
  TrainArgs args;
  args.config_path = cfg;
  args.stage = 2;
  args.method = "direct";
  args.seed = 3;
  args.seed_set = true;
  args.out_dir = dir + "/run";
  REQUIRE(cmd_train(args) == 0);
  Json ck = read_checkpoint(dir + "/run/checkpoint.json");
  REQUIRE(ck["stage"] == 2);
  REQUIRE(ck["method"] == "direct");
}

TEST_CASE("verify coop-prob prints the closed-form values and passes") {
  VerifyArgs args;
  args.suite = "coop-prob";
  REQUIRE(cmd_verify(args) == 0);
}

TEST_CASE("verify identities over a handful of games") {
  VerifyArgs args;
  args.suite = "identities";
  args.trials = 5;
  std::string dir = temp_dir("verify");
  args.out_path = dir + "/report.json";
  REQUIRE(cmd_verify(args) == 0);
  Json report = Json::parse(slurp(args.out_path));
  REQUIRE(report["pass"].get<bool>());
  REQUIRE(report["suites"][0]["checks"].size() == 5);
}

TEST_CASE("eval validates arguments and evaluates the scripted policy") {
  EvalArgs bad;
  bad.checkpoint = "checkers-optimal";
  bad.env = "checkers";
  bad.episodes = 0;
  REQUIRE_THROWS_AS(cmd_eval(bad), std::invalid_argument);

  EvalArgs args;
  args.checkpoint = "checkers-optimal";
  args.env = "checkers";
  args.episodes = 2;
  args.seed = 3;
  std::string dir = temp_dir("eval");
  args.out_path = dir + "/eval.json";
  REQUIRE(cmd_eval(args) == 0);
  Json record = Json::parse(slurp(args.out_path));
  REQUIRE(record["joint_return"].get<double>() == Catch::Approx(24.0));

  EvalArgs wrong_env;
  wrong_env.checkpoint = "checkers-optimal";
  wrong_env.env = "nav";
  wrong_env.episodes = 1;
  REQUIRE_THROWS_AS(cmd_eval(wrong_env), std::invalid_argument);
}

TEST_CASE("eval honors scenario lane configurations") {
  std::string dir = temp_dir("scenario");
  write_file(dir, "c3.ini", "[scenario]\nenv = merge\nconfig = C3\nbackground = 2\nseed = 4\n");
  ConfigFile sc = ConfigFile::parse_file(dir + "/c3.ini");
  auto game = make_env("merge", sc, 2, "scenario");
  auto& merge = dynamic_cast<LaneMergeWorld&>(*game);
  REQUIRE(merge.cfg.fixed_init_lanes == std::vector<int>{1, 2});
  REQUIRE(merge.cfg.fixed_goal_lanes == std::vector<int>{2, 1});
  REQUIRE(merge.cfg.predefined_prob == 1.0);
  REQUIRE(merge.cfg.background_vehicles == 2);
  REQUIRE_THROWS_AS(
      [&] {
        MergeConfig m;
        apply_merge_scenario_config(m, "C9");
      }(),
      std::invalid_argument);
}

TEST_CASE("export-plots aggregates runs") {
  std::string dir = temp_dir("plots");
  auto metrics = [&](const std::string& name, std::vector<std::pair<int, double>> rows) {
    std::string body;
    for (auto [ep, ret] : rows)
      body += Json{{"episode", ep}, {"joint_return", ret}, {"epsilon", 0.1}}.dump() + "\n";
    return write_file(dir, name, body);
  };
  std::string a = metrics("a.jsonl", {{100, 1.0}, {200, 3.0}});
  std::string b = metrics("b.jsonl", {{100, 3.0}, {200, 5.0}});

  ExportArgs args;
  args.metrics_paths = {a, b};
  args.out = dir + "/curve.tsv";
  REQUIRE(cmd_export_plots(args) == 0);
  std::string tsv = slurp(args.out);
  REQUIRE(tsv.find("episode\tmean\tstd") == 0);
  REQUIRE(tsv.find("100\t2\t1") != std::string::npos);
  REQUIRE(tsv.find("200\t4\t1") != std::string::npos);

  // Single run: std column is zero.
  ExportArgs single;
  single.metrics_paths = {a};
  single.out = dir + "/single.tsv";
  REQUIRE(cmd_export_plots(single) == 0);
  REQUIRE(slurp(single.out).find("100\t1\t0") != std::string::npos);

  // Different lengths truncate to the common prefix.
  std::string c = metrics("c.jsonl", {{100, 2.0}});
  ExportArgs trunc;
  trunc.metrics_paths = {a, c};
  trunc.out = dir + "/trunc.tsv";
  REQUIRE(cmd_export_plots(trunc) == 0);
  std::string out = slurp(trunc.out);
  REQUIRE(out.find("200") == std::string::npos);

  // Misaligned cadences are an error, not an interpolation.
  std::string d = metrics("d.jsonl", {{150, 2.0}, {250, 2.5}});
  ExportArgs bad;
  bad.metrics_paths = {a, d};
  bad.out = dir + "/bad.tsv";
  REQUIRE_THROWS_AS(cmd_export_plots(bad), std::runtime_error);
}
