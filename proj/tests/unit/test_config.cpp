#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "poem/config.hpp"

using namespace poem;

namespace {

std::map<std::string, std::string> ini(const std::string& text) {
  std::istringstream in(text);
  return read_ini(in, "test.ini");
}

// Sets an environment variable for the lifetime of the guard.
struct EnvVar {
  std::string name;
  EnvVar(std::string n, const char* value) : name(std::move(n)) { ::setenv(name.c_str(), value, 1); }
  ~EnvVar() { ::unsetenv(name.c_str()); }
};

}  // namespace

TEST(Config, DefaultsPerEnvironment) {
  const auto mc = default_run_config("mountain_car_continuous", Algo::Poem);
  EXPECT_EQ(mc.total_timesteps, 150000);
  EXPECT_EQ(mc.ppo.alpha_ent, 0.01);
  EXPECT_EQ(mc.poem.delta, 0.01);
  const auto lander = default_run_config("sparse_lander", Algo::Ppo);
  EXPECT_EQ(lander.total_timesteps, 250000);
  EXPECT_EQ(lander.poem.lambda_div, 0.0);
  EXPECT_EQ(lander.poem.delta, PoemConfig::kTriggerDisabled);
  EXPECT_THROW(default_run_config("pong", Algo::Poem), config_error);
}

TEST(Config, ParsesIni) {
  const auto c = resolve_config(ini("[run]\nenv = sparse_lander\nseed = 4\nhidden_sizes = 32, 16\n"
                                    "[ppo]\nlearning_rate = 1e-4\nmax_grad_norm = none\n"
                                    "[poem]\nmutate_scope = actor_and_critic\nn_candidates = 3\n"),
                                {}, {});
  EXPECT_EQ(c.env_id, "sparse_lander");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.hidden_sizes, (std::vector<int>{32, 16}));
  EXPECT_EQ(c.ppo.learning_rate, 1e-4);
  EXPECT_FALSE(c.ppo.max_grad_norm);
  EXPECT_EQ(c.poem.mutate_scope, MutateScope::ActorAndCritic);
  EXPECT_EQ(c.poem.n_candidates, 3);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(ini("[ppo]\nlearnin_rate = 0.1\n"), config_error);
  EXPECT_THROW(ini("[bogus]\nx = 1\n"), config_error);
  EXPECT_THROW(ini("seed = 1\n"), config_error);
  EXPECT_THROW(resolve_config(ini("[ppo]\nepochs = ten\n"), {}, {}), config_error);
  EXPECT_THROW(resolve_config(ini("[run]\nalgo = sac\n"), {}, {}), config_error);
  EXPECT_THROW(resolve_config({}, {}, {{"poem.sigma_min", "0.5"}}), config_error);
  EXPECT_THROW(resolve_config({}, {}, {{"run.total_timesteps", "10"}}), config_error);
  try {
    ini("[ppo]\nlearnin_rate = 0.1\n");
  } catch (const config_error& e) {
    EXPECT_NE(std::string(e.what()).find("ppo.learnin_rate"), std::string::npos);
  }
}

TEST(Config, PrecedenceFileThenEnvThenFlags) {
  const auto file = ini("[run]\nseed = 1\n[ppo]\nepochs = 3\nlam = 0.9\n");
  const std::map<std::string, std::string> env = {{"run.seed", "2"}, {"ppo.epochs", "4"}};
  const std::map<std::string, std::string> flags = {{"run.seed", "3"}};
  const auto c = resolve_config(file, env, flags);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.ppo.epochs, 4);
  EXPECT_EQ(c.ppo.lam, 0.9);
}

TEST(Config, EnvironmentVariables) {
  const EnvVar a("POEM_PPO_CLIP_EPSILON", "0.3");
  const EnvVar b("POEM_RUN_ENV", "sparse_lander");
  const auto overrides = env_overrides();
  EXPECT_EQ(overrides.at("ppo.clip_epsilon"), "0.3");
  const auto c = resolve_config({}, overrides, {});
  EXPECT_EQ(c.ppo.clip_epsilon, 0.3);
  EXPECT_EQ(c.env_id, "sparse_lander");
  EXPECT_EQ(c.total_timesteps, 250000);  // defaults follow the resolved environment
}

TEST(Config, PpoIgnoresDiversitySettings) {
  const auto c = resolve_config(ini("[run]\nalgo = ppo\n[poem]\nlambda_div = 0.5\ndelta = 0.2\n"), {}, {});
  EXPECT_EQ(c.poem.lambda_div, 0.0);
  EXPECT_EQ(c.poem.delta, PoemConfig::kTriggerDisabled);
  RunConfig bad = c;
  bad.poem.lambda_div = 0.1;
  EXPECT_THROW(bad.validate(), config_error);
}

TEST(Config, RoundTripsThroughText) {
  RunConfig c = default_run_config("sparse_lander", Algo::Poem);
  c.seed = 17;
  c.ppo.learning_rate = 0.000123456789;
  c.poem.sigma_max = 0.0731;
  c.hidden_sizes = {8, 4, 2};
  c.ppo.max_grad_norm.reset();
  const std::string text = config_to_string(c);
  EXPECT_EQ(config_to_string(config_from_string(text)), text);
  for (const auto& k : config_keys()) EXPECT_EQ(get_value(config_from_string(text), k.dotted()), get_value(c, k.dotted()));
}

TEST(Config, EnvVarNames) {
  EXPECT_EQ(find_key("poem.sigma_min").env_var(), "POEM_POEM_SIGMA_MIN");
  EXPECT_EQ(find_key("run.total_timesteps").env_var(), "POEM_RUN_TOTAL_TIMESTEPS");
  EXPECT_THROW(find_key("run.nope"), config_error);
}
