#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "vardlab/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"vard-lab: desk-scale diffusion RL fine-tuning laboratory"};

  std::string task;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string preset;
  std::string out_dir;
  bool dump = false;

  app.add_option("task", task,
                 "ddpm-pretrain | value-pretrain | vard-finetune | "
                 "baseline-finetune | so3-train | verify-lemma1 | eval")
      ->required();
  app.add_option("--config", config_path, "JSON run configuration")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master RNG seed")->required();
  app.add_option("--preset", preset, "named hyperparameter preset");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_flag("--dump-trajectories", dump, "write trajectories.jsonl");

  CLI11_PARSE(app, argc, argv);

  try {
    vardlab::RunConfig cfg = vardlab::load_config(config_path);
    cfg.task = task;
    cfg.seed = seed;
    cfg.seed_set = true;
    if (!preset.empty()) vardlab::apply_preset(cfg, preset);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (dump) cfg.dump_trajectories = true;
    return vardlab::run_task(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
