// Command-line entry point: stage-wise training, evaluation, verification
// suites, and plot-data export.

#include <CLI11.hpp>

#include "cm3/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"CM3: cooperative multi-goal multi-agent reinforcement learning"};
  app.require_subcommand(1);

  cm3::TrainArgs train;
  CLI::App* t = app.add_subcommand("train", "Train one curriculum stage");
  t->add_option("--config", train.config_path, "Configuration file")->required();
  t->add_option("--stage", train.stage, "Curriculum stage (1 or 2)");
  t->add_option("--method", train.method, "cm3 | qv | direct | iac | coma");
  t->add_option("--env", train.env, "nav | merge | checkers");
  auto* seed_opt = t->add_option("--seed", train.seed, "Master seed");
  t->add_option("--from-checkpoint", train.from_checkpoint,
                "Stage-1 checkpoint for curriculum methods");
  t->add_option("--out", train.out_dir, "Run directory (default under CM3_RUN_ROOT)");

  cm3::EvalArgs eval;
  CLI::App* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", eval.checkpoint,
                "Checkpoint path, or 'checkers-optimal' for the scripted policy")
      ->required();
  e->add_option("--env", eval.env, "Environment id");
  e->add_option("--episodes", eval.episodes, "Evaluation episodes");
  e->add_option("--scenario", eval.scenario, "Scenario file (lane configs, board size)");
  e->add_option("--seed", eval.seed, "Evaluation seed");
  e->add_option("--out", eval.out_path, "Write the result record to this file");

  cm3::VerifyArgs verify;
  CLI::App* v = app.add_subcommand("verify", "Run the exact verification suites");
  v->add_option("--suite", verify.suite, "identities | gradients | variance | coop-prob | all");
  v->add_option("--seed", verify.seed, "Suite seed");
  v->add_option("--trials", verify.trials, "Trial count (or sample count for variance)");
  v->add_option("--out", verify.out_path, "Write the report to this file");

  cm3::ExportArgs exp;
  CLI::App* x = app.add_subcommand("export-plots", "Aggregate metrics into plot data");
  x->add_option("--metrics", exp.metrics_paths, "Metrics files (one per run)")->required();
  x->add_option("--out", exp.out, "Output TSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*t) {
      train.seed_set = seed_opt->count() > 0;
      return cm3::cmd_train(train);
    }
    if (*e) return cm3::cmd_eval(eval);
    if (*v) return cm3::cmd_verify(verify);
    if (*x) return cm3::cmd_export_plots(exp);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
