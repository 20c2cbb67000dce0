#pragma once

// End-to-end pipelines: train (collect -> GAE -> PPO or POEM update), evaluate
// checkpoints, compare two sets of runs, and bounded random-search tuning.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "poem/checkpoint.hpp"
#include "poem/config.hpp"
#include "poem/envs.hpp"
#include "poem/eval.hpp"
#include "poem/poem.hpp"
#include "poem/ppo.hpp"
#include "poem/rollout.hpp"
#include "poem/stats.hpp"

namespace poem {

namespace fs = std::filesystem;

inline constexpr std::string_view kMetricsCsvHeader =
    "global_step,iteration,epoch,minibatch_idx,l_ppo,l_vf,entropy,kl_div,l_total,"
    "d_post,sigma,triggered,accepted,l_total_before,l_total_after";
inline constexpr std::string_view kTrainEpisodesCsvHeader = "global_step,episode,total_reward,length,terminated";

inline std::string run_id_for(const RunConfig& c) { return "seed_" + std::to_string(c.seed); }

inline ActorCritic make_actor_critic(const Env& env, const RunConfig& c, std::uint64_t init_seed) {
  const ActionSpace space = env.action_space();
  return ActorCritic::create(env.observation_dim(), head_for(space), space.n, c.hidden_sizes, init_seed,
                             c.initial_log_std);
}

struct TrainResult {
  fs::path run_dir;
  bool ok = true;
  std::string error;
  std::int64_t timesteps = 0;
  int iterations = 0;
  std::size_t mutations_triggered = 0;
  std::size_t mutations_accepted = 0;
  ActorCritic final_policy;
  std::optional<EvalReport> eval;
};

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline void write_loss_columns(std::ostream& out, const LossBreakdown& l) {
  out << format_double(l.l_ppo) << ',' << format_double(l.l_vf) << ',' << format_double(l.entropy) << ','
      << format_double(l.kl_div) << ',' << format_double(l.l_total);
}

}  // namespace detail

inline void write_eval_outputs(const fs::path& dir, std::string_view algo, std::string_view env_id,
                               std::string_view run_id, const EvalReport& report) {
  std::ostringstream episodes, steps;
  write_episode_csv(episodes, algo, env_id, run_id, report);
  write_step_csv(steps, algo, env_id, report);
  detail::write_text(dir / "eval_episodes.csv", episodes.str());
  detail::write_text(dir / "eval_steps.csv", steps.str());
}

// Trains one run into config.output_dir. Outputs: config.ini (snapshot),
// metrics.csv (one row per minibatch), train_episodes.csv, checkpoint.bin
// (periodic and final), status.txt, and eval CSVs when eval_episodes > 0.
inline TrainResult train(const RunConfig& config, std::ostream* log = nullptr) {
  config.validate();
  TrainResult result;
  result.run_dir = config.output_dir;
  fs::create_directories(result.run_dir);
  detail::write_text(result.run_dir / "config.ini", config_to_string(config));

  auto env = make_env(config.env_id);
  Rng master(config.seed);
  const std::uint64_t init_seed = master.next();
  const std::uint64_t episode_seed = master.next();
  Rng action_rng = master.split();
  Rng shuffle_rng = master.split();
  Rng mutation_rng = master.split();

  ActorCritic ac = make_actor_critic(*env, config, init_seed);
  AdamState adam = AdamState::for_size(ac.params.size(), config.ppo.learning_rate);
  EmaTracker ema = EmaTracker::start(ac, config.poem.beta);
  RolloutCollector collector(*env, episode_seed);
  const std::string algo = to_string(config.algo);
  const std::string run_id = run_id_for(config);
  const auto checkpoint_path = result.run_dir / "checkpoint.bin";

  std::ofstream metrics(result.run_dir / "metrics.csv", std::ios::trunc);
  std::ofstream episodes(result.run_dir / "train_episodes.csv", std::ios::trunc);
  if (!metrics || !episodes) throw std::runtime_error("cannot open output files in " + result.run_dir.string());
  metrics << kMetricsCsvHeader << '\n';
  episodes << kTrainEpisodesCsvHeader << '\n';

  const auto iterations = static_cast<int>((config.total_timesteps + config.n_steps - 1) / config.n_steps);
  int episode_counter = 0;
  try {
    for (int it = 0; it < iterations; ++it) {
      RolloutBatch batch = collector.collect(ac, config.n_steps, action_rng);
      result.timesteps += config.n_steps;
      for (const auto& ep : collector.take_finished_episodes())
        episodes << result.timesteps << ',' << episode_counter++ << ',' << format_double(ep.total_reward) << ','
                 << ep.length << ',' << (ep.terminated ? 1 : 0) << '\n';
      batch = compute_gae(std::move(batch), config.ppo.gamma, config.ppo.lam);

      if (config.algo == Algo::Ppo) {
        const auto diag = ppo_update(ac, batch, config.ppo, adam, shuffle_rng);
        for (const auto& mb : diag.minibatches) {
          metrics << result.timesteps << ',' << it << ',' << mb.epoch << ',' << mb.index << ',';
          detail::write_loss_columns(metrics, mb.loss);
          metrics << ",,,0,0,,\n";
        }
      } else {
        const auto diag = poem_update(ac, ema, batch, config.ppo, config.poem, adam, shuffle_rng, mutation_rng);
        for (const auto& mb : diag.minibatches) {
          const auto& d = mb.diversity;
          result.mutations_triggered += d.mutation_triggered;
          result.mutations_accepted += d.mutation_accepted;
          metrics << result.timesteps << ',' << it << ',' << mb.epoch << ',' << mb.index << ',';
          detail::write_loss_columns(metrics, mb.loss);
          metrics << ',' << format_double(d.d_post) << ',' << detail::opt(d.sigma_used) << ','
                  << (d.mutation_triggered ? 1 : 0) << ',' << (d.mutation_accepted ? 1 : 0) << ','
                  << format_double(d.l_total_before) << ',' << detail::opt(d.l_total_after) << '\n';
        }
      }
      ++result.iterations;
      if (log)
        *log << run_id << ' ' << algo << " iter " << result.iterations << '/' << iterations << " steps "
             << result.timesteps << '\n';
      if (result.iterations % config.checkpoint_every == 0)
        save_checkpoint(checkpoint_path, {config.env_id, algo, run_id, ac});
    }
  } catch (const numerical_error& e) {
    result.ok = false;
    result.error = "numerical failure at iteration " + std::to_string(result.iterations) + ": " + e.what();
  }
  metrics.close();
  episodes.close();
  result.final_policy = ac;
  if (!result.ok) {
    detail::write_text(result.run_dir / "status.txt", "failed\n" + result.error + "\n");
    return result;
  }
  save_checkpoint(checkpoint_path, {config.env_id, algo, run_id, ac});
  if (config.eval_episodes > 0) {
    result.eval = evaluate_policy(*env, ac, config.eval_episodes, config.eval_seed_base, true);
    write_eval_outputs(result.run_dir, algo, config.env_id, run_id, *result.eval);
  }
  detail::write_text(result.run_dir / "status.txt", "ok\n");
  return result;
}

// Loads the checkpoint before writing anything, so a bad file leaves no CSVs.
inline EvalReport evaluate_checkpoint(const fs::path& checkpoint, std::string_view env_id, int n_episodes,
                                      std::uint64_t seed_base, const fs::path& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  auto env = make_env(env_id);
  const ActionSpace space = env->action_space();
  if (env->observation_dim() != ckpt.ac.observation_dim() || head_for(space) != ckpt.ac.head ||
      space.n != ckpt.ac.action_dim)
    throw std::invalid_argument("checkpoint " + checkpoint.string() + " (trained on " + ckpt.env_id +
                                ") does not match the dimensions of " + std::string(env_id));
  EvalReport report = evaluate_policy(*env, ckpt.ac, n_episodes, seed_base, true);
  fs::create_directories(out_dir);
  write_eval_outputs(out_dir, ckpt.algo, env_id, ckpt.run_id, report);
  return report;
}

// ---------------------------------------------------------------------------
// compare

enum class SampleUnit { Runs, Episodes };

struct EnvComparison {
  std::string env_id;
  ComparisonRow row;
};

// env -> run key -> per-episode rewards, from every eval_episodes.csv below dir.
using EvalSamples = std::map<std::string, std::map<std::string, std::vector<double>>>;

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline EvalSamples load_eval_samples(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() == "eval_episodes.csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("no eval_episodes.csv found under " + dir.string());
  EvalSamples samples;
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    if (!std::getline(in, line) || line != kEpisodeCsvHeader)
      throw std::invalid_argument(file.string() + ": missing or unexpected header");
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != 7) throw std::invalid_argument(file.string() + ":" + std::to_string(line_no) + ": ragged row");
      double reward = 0.0;
      const auto res = std::from_chars(cells[5].data(), cells[5].data() + cells[5].size(), reward);
      if (res.ec != std::errc{} || res.ptr != cells[5].data() + cells[5].size())
        throw std::invalid_argument(file.string() + ":" + std::to_string(line_no) + ": bad total_reward");
      samples[cells[1]][file.string() + "#" + cells[2]].push_back(reward);
    }
  }
  return samples;
}

inline std::vector<double> flatten_samples(const std::map<std::string, std::vector<double>>& runs, SampleUnit unit) {
  std::vector<double> out;
  for (const auto& [key, rewards] : runs) {
    if (unit == SampleUnit::Runs)
      out.push_back(mean(rewards));
    else
      out.insert(out.end(), rewards.begin(), rewards.end());
  }
  return out;
}

// One row per environment present in both directories. t is computed as
// welch(ppo, poem), so it is negative when POEM scores higher.
inline std::vector<EnvComparison> compare_dirs(const fs::path& poem_dir, const fs::path& ppo_dir, double alpha,
                                               SampleUnit unit = SampleUnit::Runs) {
  const EvalSamples poem_samples = load_eval_samples(poem_dir);
  const EvalSamples ppo_samples = load_eval_samples(ppo_dir);
  std::vector<EnvComparison> rows;
  for (const auto& [env_id, poem_runs] : poem_samples) {
    const auto it = ppo_samples.find(env_id);
    if (it == ppo_samples.end()) continue;
    if (unit == SampleUnit::Runs && (poem_runs.size() < 2 || it->second.size() < 2))
      throw std::invalid_argument("compare: need at least 2 runs per side for " + env_id + " (" +
                                  poem_dir.string() + " has " + std::to_string(poem_runs.size()) + ", " +
                                  ppo_dir.string() + " has " + std::to_string(it->second.size()) + ")");
    const auto a = flatten_samples(poem_runs, unit);
    const auto b = flatten_samples(it->second, unit);
    rows.push_back({env_id, compare_runs(a, b, alpha)});
  }
  if (rows.empty()) throw std::invalid_argument("compare: no environment appears in both directories");
  return rows;
}

inline constexpr std::string_view kComparisonCsvHeader =
    "env,t_statistic,p_value,dof,poem_significantly_better,mean_poem,mean_ppo,n_poem,n_ppo";

inline void write_comparison_csv(std::ostream& out, const std::vector<EnvComparison>& rows) {
  out << kComparisonCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.env_id << ',' << format_double(r.row.test.t_statistic) << ',' << format_double(r.row.test.p_value)
        << ',' << format_double(r.row.test.dof) << ',' << (r.row.poem_significantly_better ? "yes" : "no") << ','
        << format_double(r.row.mean_poem) << ',' << format_double(r.row.mean_ppo) << ',' << r.row.test.n_b << ','
        << r.row.test.n_a << '\n';
}

inline void print_comparison_table(std::ostream& out, const std::vector<EnvComparison>& rows, double alpha) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-26s %12s %10s %18s %12s %12s\n", "Environment", "T-statistic", "P-value",
                "POEM better?", "Mean POEM", "Mean PPO");
  out << buf;
  for (const auto& r : rows) {
    const double p = r.row.test.p_value;
    char pbuf[32];
    if (p < 1e-4)
      std::snprintf(pbuf, sizeof pbuf, "<0.0001");
    else
      std::snprintf(pbuf, sizeof pbuf, "%.4f", p);
    std::snprintf(buf, sizeof buf, "%-26s %12.4f %10s %18s %12.2f %12.2f\n", r.env_id.c_str(), r.row.test.t_statistic,
                  pbuf, r.row.poem_significantly_better ? "Yes" : "No", r.row.mean_poem, r.row.mean_ppo);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "(Welch two-sided, alpha = %g)\n", alpha);
  out << buf;
}

// ---------------------------------------------------------------------------
// parallel runs

// Runs tasks on up to `workers` threads; the first exception is rethrown.
inline void run_parallel(const std::vector<std::function<void()>>& tasks, unsigned workers = 0) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(tasks.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  for (unsigned w = 1; w < workers; ++w) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::vector<TrainResult> train_many(const std::vector<RunConfig>& configs, unsigned workers = 0,
                                           std::ostream* log = nullptr) {
  std::vector<TrainResult> results(configs.size());
  std::mutex log_mutex;
  std::vector<std::function<void()>> tasks;
  for (std::size_t i = 0; i < configs.size(); ++i)
    tasks.emplace_back([&, i] {
      std::ostringstream local;
      results[i] = train(configs[i], log ? &local : nullptr);
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << local.str();
      }
    });
  run_parallel(tasks, workers);
  return results;
}

// ---------------------------------------------------------------------------
// tune

struct TuneSpec {
  double relative_bound = 0.10;
  int n_trials = 8;
  std::int64_t trial_timesteps = 100'000;
  int eval_episodes = 4;
  std::uint64_t master_seed = 0;
  std::vector<std::string> keys;  // empty: default_tuned_keys(algo)
};

inline std::vector<std::string> default_tuned_keys(Algo algo) {
  std::vector<std::string> keys = {"ppo.learning_rate", "ppo.clip_epsilon", "ppo.alpha_vf",
                                   "ppo.alpha_ent",     "ppo.gamma",        "ppo.lam"};
  if (algo == Algo::Poem)
    for (const char* k : {"poem.beta", "poem.delta", "poem.sigma_min", "poem.sigma_max", "poem.lambda_div"})
      keys.emplace_back(k);
  return keys;
}

struct TrialRecord {
  int index = 0;
  RunConfig config;
  double score = -std::numeric_limits<double>::infinity();
  std::string error;
};

struct TuneResult {
  RunConfig best;
  int best_index = 0;
  std::vector<TrialRecord> trials;
};

// Trial configurations: each key drawn uniformly from center * [1 - b, 1 + b]
// and pulled back into its valid range.
inline std::vector<RunConfig> sample_trials(const TuneSpec& spec, const RunConfig& base) {
  if (spec.n_trials < 1) throw std::invalid_argument("tune: n_trials must be >= 1");
  if (!(spec.relative_bound >= 0.0)) throw std::invalid_argument("tune: relative_bound must be >= 0");
  const auto keys = spec.keys.empty() ? default_tuned_keys(base.algo) : spec.keys;
  Rng rng(spec.master_seed);
  std::vector<RunConfig> trials;
  for (int i = 0; i < spec.n_trials; ++i) {
    RunConfig c = base;
    for (const auto& key : keys) {
      const double center = std::stod(get_value(base, key));
      const double lo = center * (1.0 - spec.relative_bound), hi = center * (1.0 + spec.relative_bound);
      double v = std::min(lo, hi) + (std::max(lo, hi) - std::min(lo, hi)) * rng.uniform();
      if (key == "ppo.gamma" || key == "ppo.lam" || key == "poem.beta") v = std::min(v, 1.0);
      if (key == "ppo.clip_epsilon") v = std::min(v, 0.999);
      set_value(c, key, detail::format_number(v));
    }
    if (c.poem.sigma_min > c.poem.sigma_max) std::swap(c.poem.sigma_min, c.poem.sigma_max);
    c.normalize();
    trials.push_back(std::move(c));
  }
  return trials;
}

// Each trial trains for trial_timesteps, then scores the mean deterministic
// evaluation reward. Ties go to the lower trial index; failures score -inf.
inline TuneResult tune(const TuneSpec& spec, const RunConfig& base, const fs::path& out_dir,
                       std::ostream* log = nullptr) {
  auto configs = sample_trials(spec, base);
  fs::create_directories(out_dir);
  TuneResult result;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    RunConfig& c = configs[i];
    c.total_timesteps = spec.trial_timesteps;
    c.n_steps = static_cast<int>(std::min<std::int64_t>(c.n_steps, spec.trial_timesteps));
    c.ppo.minibatch_size = std::min(c.ppo.minibatch_size, c.n_steps);
    c.eval_episodes = spec.eval_episodes;
    c.output_dir = (out_dir / ("trial_" + std::to_string(i))).string();
    TrialRecord rec{static_cast<int>(i), c, -std::numeric_limits<double>::infinity(), {}};
    try {
      const TrainResult tr = train(c);
      if (!tr.ok)
        rec.error = tr.error;
      else if (tr.eval)
        rec.score = tr.eval->mean;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    if (log) *log << "trial " << i << " score " << rec.score << (rec.error.empty() ? "" : " (" + rec.error + ")") << '\n';
    result.trials.push_back(std::move(rec));
  }
  for (const auto& t : result.trials)
    if (t.score > result.trials[static_cast<std::size_t>(result.best_index)].score) result.best_index = t.index;
  result.best = result.trials[static_cast<std::size_t>(result.best_index)].config;

  const auto keys = spec.keys.empty() ? default_tuned_keys(base.algo) : spec.keys;
  std::ofstream csv(out_dir / "trials.csv", std::ios::trunc);
  csv << "trial,score";
  for (const auto& k : keys) csv << ',' << k;
  csv << ",error\n";
  for (const auto& t : result.trials) {
    csv << t.index << ',' << format_double(t.score);
    for (const auto& k : keys) csv << ',' << get_value(t.config, k);
    std::string err = t.error;
    std::replace(err.begin(), err.end(), ',', ';');
    csv << ',' << err << '\n';
  }
  detail::write_text(out_dir / "best_config.ini", config_to_string(result.best));
  return result;
}

}  // namespace poem
