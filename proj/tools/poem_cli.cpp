// poem: command-line front end for training, evaluation, comparison and tuning.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "poem/harness.hpp"

namespace {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config_path;
  std::string env;
  std::string algo;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> timesteps;
  std::optional<int> episodes;
  std::string out;
  std::vector<std::string> sets;  // raw "section.key=value" overrides
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option("--env", f.env, "environment id (mountain_car_continuous | sparse_lander)");
  cmd->add_option("--algo", f.algo, "ppo | poem");
  cmd->add_option("--seed", f.seed, "base seed");
  cmd->add_option("--timesteps", f.timesteps, "total training timesteps");
  cmd->add_option("--episodes", f.episodes, "evaluation episodes");
  cmd->add_option("--set", f.sets, "override any config key, e.g. --set ppo.learning_rate=1e-4");
}

poem::RunConfig resolve(const CommonFlags& f) {
  std::map<std::string, std::string> file;
  if (!f.config_path.empty()) file = poem::read_ini_file(f.config_path);
  std::map<std::string, std::string> flags;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw poem::config_error("--set expects section.key=value, got '" + s + "'");
    poem::find_key(s.substr(0, eq));
    flags[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (!f.env.empty()) flags["run.env"] = f.env;
  if (!f.algo.empty()) flags["run.algo"] = f.algo;
  if (f.seed) flags["run.seed"] = std::to_string(*f.seed);
  if (f.timesteps) flags["run.total_timesteps"] = std::to_string(*f.timesteps);
  if (f.episodes) flags["eval.episodes"] = std::to_string(*f.episodes);
  if (!f.out.empty()) flags["run.output_dir"] = f.out;
  return poem::resolve_config(file, poem::env_overrides(), flags);
}

int cmd_train(const CommonFlags& f, int runs, unsigned workers, bool quiet) {
  const poem::RunConfig base = resolve(f);
  std::vector<poem::RunConfig> configs;
  for (int r = 0; r < runs; ++r) {
    poem::RunConfig c = base;
    c.seed = base.seed + static_cast<std::uint64_t>(r);
    c.output_dir = (fs::path(base.output_dir) / poem::run_id_for(c)).string();
    configs.push_back(c);
  }
  const auto results = poem::train_many(configs, workers, quiet ? nullptr : &std::cerr);
  int failures = 0;
  for (const auto& r : results) {
    std::cout << r.run_dir.string() << ": ";
    if (!r.ok) {
      std::cout << "FAILED " << r.error << '\n';
      ++failures;
      continue;
    }
    std::cout << r.timesteps << " steps, " << r.mutations_triggered << " mutations triggered, "
              << r.mutations_accepted << " accepted";
    if (r.eval) std::cout << ", eval mean " << r.eval->mean << " (std " << r.eval->std << ")";
    std::cout << '\n';
  }
  return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPO and POEM training, evaluation and comparison"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  int runs = 1;
  unsigned workers = 0;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train one or more seeds; each run goes to OUT/seed_<n>");
  add_common(train, train_flags);
  train->add_option("--out", train_flags.out, "output directory");
  train->add_option("--runs", runs, "number of consecutive seeds to train")->check(CLI::PositiveNumber);
  train->add_option("--workers", workers, "worker threads (0 = hardware concurrency)");
  train->add_flag("--quiet", quiet, "suppress progress lines");

  std::string ckpt_path, eval_env, eval_out = "eval";
  int eval_episodes = 15;
  std::uint64_t eval_seed = 1'000'000;
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint with deterministic actions");
  evaluate->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  evaluate->add_option("--env", eval_env, "environment id (default: the checkpoint's)");
  evaluate->add_option("--episodes", eval_episodes, "episodes")->check(CLI::PositiveNumber);
  evaluate->add_option("--seed", eval_seed, "seed of the first episode");
  evaluate->add_option("--out", eval_out, "output directory for the CSVs");

  std::string poem_dir, ppo_dir, compare_out, unit = "runs";
  double alpha = 0.05;
  auto* compare = app.add_subcommand("compare", "Welch t-test of POEM runs against PPO runs, per environment");
  compare->add_option("poem_dir", poem_dir, "directory with POEM eval_episodes.csv files")->required();
  compare->add_option("ppo_dir", ppo_dir, "directory with PPO eval_episodes.csv files")->required();
  compare->add_option("--alpha", alpha, "significance level");
  compare->add_option("--unit", unit, "sample unit: runs (per-run means) or episodes (pooled)")
      ->check(CLI::IsMember({"runs", "episodes"}));
  compare->add_option("--out", compare_out, "write the comparison CSV here");

  CommonFlags tune_flags;
  poem::TuneSpec spec;
  auto* tune = app.add_subcommand("tune", "bounded random search around the configured centers");
  add_common(tune, tune_flags);
  tune->add_option("--out", tune_flags.out, "output directory");
  tune->add_option("--trials", spec.n_trials, "number of trials")->check(CLI::PositiveNumber);
  tune->add_option("--trial-timesteps", spec.trial_timesteps, "timesteps per trial");
  tune->add_option("--trial-episodes", spec.eval_episodes, "evaluation episodes per trial");
  tune->add_option("--bound", spec.relative_bound, "relative bound, 0.1 = +-10%");
  tune->add_option("--tune-seed", spec.master_seed, "seed for sampling trials");
  tune->add_option("--keys", spec.keys, "keys to tune (default: all numeric PPO/POEM keys)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      if (train_flags.out.empty()) train_flags.out = "runs";
      return cmd_train(train_flags, runs, workers, quiet);
    }
    if (*evaluate) {
      if (eval_env.empty()) eval_env = poem::load_checkpoint(ckpt_path).env_id;
      const auto report = poem::evaluate_checkpoint(ckpt_path, eval_env, eval_episodes, eval_seed, eval_out);
      std::cout << "mean " << report.mean << " std " << report.std << " over " << eval_episodes << " episodes\n";
      return 0;
    }
    if (*compare) {
      const auto rows = poem::compare_dirs(poem_dir, ppo_dir, alpha,
                                           unit == "runs" ? poem::SampleUnit::Runs : poem::SampleUnit::Episodes);
      poem::print_comparison_table(std::cout, rows, alpha);
      if (!compare_out.empty()) {
        std::ofstream out(compare_out);
        poem::write_comparison_csv(out, rows);
        if (!out) throw std::runtime_error("cannot write " + compare_out);
      }
      return 0;
    }
    if (*tune) {
      if (tune_flags.out.empty()) tune_flags.out = "tune";
      const poem::RunConfig base = resolve(tune_flags);
      const auto result = poem::tune(spec, base, tune_flags.out, &std::cerr);
      std::cout << "best trial " << result.best_index << " score "
                << result.trials[static_cast<std::size_t>(result.best_index)].score << "; config written to "
                << (fs::path(tune_flags.out) / "best_config.ini").string() << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
