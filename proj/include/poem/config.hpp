#pragma once

// Run configuration: per-environment defaults, INI files, POEM_* environment
// overrides and config snapshots.
//
// File schema (all keys optional, unknown keys are errors):
//
//   [run]   env, algo, total_timesteps, n_steps, seed, output_dir,
//           hidden_sizes (comma list), initial_log_std, checkpoint_every
//   [ppo]   clip_epsilon, alpha_vf, alpha_ent, epochs, minibatch_size,
//           learning_rate, max_grad_norm (number or "none"), gamma, lam
//   [poem]  beta, delta, sigma_min, sigma_max, lambda_div, n_candidates,
//           mutate_scope (actor_only | actor_and_critic)
//   [eval]  episodes, seed_base
//
// Environment overrides use POEM_<SECTION>_<KEY>, e.g. POEM_PPO_LEARNING_RATE.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "poem/poem.hpp"
#include "poem/ppo.hpp"

namespace poem {

class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Algo { Ppo, Poem };

inline std::string to_string(Algo a) { return a == Algo::Ppo ? "ppo" : "poem"; }

inline Algo parse_algo(std::string_view s) {
  if (s == "ppo") return Algo::Ppo;
  if (s == "poem") return Algo::Poem;
  throw config_error("unknown algo '" + std::string(s) + "' (expected ppo or poem)");
}

inline std::string to_string(MutateScope s) { return s == MutateScope::ActorOnly ? "actor_only" : "actor_and_critic"; }

inline MutateScope parse_scope(std::string_view s) {
  if (s == "actor_only") return MutateScope::ActorOnly;
  if (s == "actor_and_critic") return MutateScope::ActorAndCritic;
  throw config_error("unknown mutate_scope '" + std::string(s) + "'");
}

struct RunConfig {
  std::string env_id = "mountain_car_continuous";
  Algo algo = Algo::Poem;
  std::int64_t total_timesteps = 150'000;
  int n_steps = 2048;
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::vector<int> hidden_sizes = {64, 64};
  double initial_log_std = 0.0;
  int checkpoint_every = 10;  // iterations between periodic checkpoints
  int eval_episodes = 15;
  std::uint64_t eval_seed_base = 1'000'000;
  PpoConfig ppo;
  PoemConfig poem;

  // Plain PPO runs carry no diversity bonus and never trigger mutation.
  void normalize() {
    if (algo == Algo::Ppo) {
      poem.lambda_div = 0.0;
      poem.delta = PoemConfig::kTriggerDisabled;
    }
  }

  void validate() const {
    if (n_steps < 1) throw config_error("run.n_steps must be >= 1");
    if (total_timesteps < n_steps) throw config_error("run.total_timesteps must be >= run.n_steps");
    if (hidden_sizes.empty()) throw config_error("run.hidden_sizes must list at least one width");
    for (int h : hidden_sizes)
      if (h < 1) throw config_error("run.hidden_sizes entries must be >= 1");
    if (eval_episodes < 0) throw config_error("eval.episodes must be >= 0");
    if (checkpoint_every < 1) throw config_error("run.checkpoint_every must be >= 1");
    try {
      ppo.validate(static_cast<std::size_t>(n_steps));
      poem.validate();
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    if (algo == Algo::Ppo && (poem.lambda_div != 0.0 || poem.delta > PoemConfig::kTriggerDisabled))
      throw config_error("algo=ppo requires lambda_div = 0 and the mutation trigger disabled");
  }
};

// Desk-scale defaults: budgets per environment, sparse-reward entropy bump
// for mountain car.
inline RunConfig default_run_config(std::string_view env_id, Algo algo) {
  RunConfig c;
  c.env_id = std::string(env_id);
  c.algo = algo;
  if (env_id == "mountain_car_continuous") {
    c.total_timesteps = 150'000;
    c.ppo.alpha_ent = 0.01;
  } else if (env_id == "sparse_lander") {
    c.total_timesteps = 250'000;
  } else {
    throw config_error("unknown environment id: " + std::string(env_id));
  }
  c.normalize();
  return c;
}

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc{} || res.ptr != last)
    throw config_error("invalid value '" + std::string(text) + "' for " + std::string(key));
  return value;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string format_number(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// One configurable key: "section.key" with text setters/getters.
struct ConfigKey {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string dotted() const { return section + "." + key; }
  std::string env_var() const {
    std::string name = "POEM_" + section + "_" + key;
    for (char& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return name;
  }
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_number;
  using detail::parse_number;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto real = [&k](std::string sec, std::string name, auto member) {
      std::string dotted = sec + "." + name;
      k.push_back({sec, name, [member, dotted](RunConfig& c, std::string_view v) { member(c) = parse_number<double>(dotted, v); },
                   [member](const RunConfig& c) { return format_number(member(c)); }});
    };
    auto integer = [&k](std::string sec, std::string name, auto member) {
      using T = std::remove_reference_t<decltype(member(std::declval<RunConfig&>()))>;
      std::string dotted = sec + "." + name;
      k.push_back({sec, name, [member, dotted](RunConfig& c, std::string_view v) { member(c) = parse_number<T>(dotted, v); },
                   [member](const RunConfig& c) { return std::to_string(member(c)); }});
    };
    k.push_back({"run", "env", [](RunConfig& c, std::string_view v) { c.env_id = std::string(v); },
                 [](const RunConfig& c) { return c.env_id; }});
    k.push_back({"run", "algo", [](RunConfig& c, std::string_view v) { c.algo = parse_algo(v); },
                 [](const RunConfig& c) { return to_string(c.algo); }});
    integer("run", "total_timesteps", [](auto& c) -> auto& { return c.total_timesteps; });
    integer("run", "n_steps", [](auto& c) -> auto& { return c.n_steps; });
    integer("run", "seed", [](auto& c) -> auto& { return c.seed; });
    k.push_back({"run", "output_dir", [](RunConfig& c, std::string_view v) { c.output_dir = std::string(v); },
                 [](const RunConfig& c) { return c.output_dir; }});
    k.push_back({"run", "hidden_sizes",
                 [](RunConfig& c, std::string_view v) {
                   c.hidden_sizes.clear();
                   std::stringstream ss{std::string(v)};
                   for (std::string item; std::getline(ss, item, ',');)
                     c.hidden_sizes.push_back(parse_number<int>("run.hidden_sizes", detail::trim(item)));
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i)
                     out += (i ? "," : "") + std::to_string(c.hidden_sizes[i]);
                   return out;
                 }});
    real("run", "initial_log_std", [](auto& c) -> auto& { return c.initial_log_std; });
    integer("run", "checkpoint_every", [](auto& c) -> auto& { return c.checkpoint_every; });

    real("ppo", "clip_epsilon", [](auto& c) -> auto& { return c.ppo.clip_epsilon; });
    real("ppo", "alpha_vf", [](auto& c) -> auto& { return c.ppo.alpha_vf; });
    real("ppo", "alpha_ent", [](auto& c) -> auto& { return c.ppo.alpha_ent; });
    integer("ppo", "epochs", [](auto& c) -> auto& { return c.ppo.epochs; });
    integer("ppo", "minibatch_size", [](auto& c) -> auto& { return c.ppo.minibatch_size; });
    real("ppo", "learning_rate", [](auto& c) -> auto& { return c.ppo.learning_rate; });
    k.push_back({"ppo", "max_grad_norm",
                 [](RunConfig& c, std::string_view v) {
                   if (v == "none")
                     c.ppo.max_grad_norm.reset();
                   else
                     c.ppo.max_grad_norm = parse_number<double>("ppo.max_grad_norm", v);
                 },
                 [](const RunConfig& c) {
                   return c.ppo.max_grad_norm ? format_number(*c.ppo.max_grad_norm) : std::string("none");
                 }});
    real("ppo", "gamma", [](auto& c) -> auto& { return c.ppo.gamma; });
    real("ppo", "lam", [](auto& c) -> auto& { return c.ppo.lam; });

    real("poem", "beta", [](auto& c) -> auto& { return c.poem.beta; });
    real("poem", "delta", [](auto& c) -> auto& { return c.poem.delta; });
    real("poem", "sigma_min", [](auto& c) -> auto& { return c.poem.sigma_min; });
    real("poem", "sigma_max", [](auto& c) -> auto& { return c.poem.sigma_max; });
    real("poem", "lambda_div", [](auto& c) -> auto& { return c.poem.lambda_div; });
    integer("poem", "n_candidates", [](auto& c) -> auto& { return c.poem.n_candidates; });
    k.push_back({"poem", "mutate_scope", [](RunConfig& c, std::string_view v) { c.poem.mutate_scope = parse_scope(v); },
                 [](const RunConfig& c) { return to_string(c.poem.mutate_scope); }});

    integer("eval", "episodes", [](auto& c) -> auto& { return c.eval_episodes; });
    integer("eval", "seed_base", [](auto& c) -> auto& { return c.eval_seed_base; });
    return k;
  }();
  return keys;
}

inline const ConfigKey& find_key(std::string_view dotted) {
  for (const auto& k : config_keys())
    if (k.dotted() == dotted) return k;
  throw config_error("unknown config key '" + std::string(dotted) + "'");
}

inline void set_value(RunConfig& c, std::string_view dotted, std::string_view value) {
  find_key(dotted).set(c, detail::trim(value));
}

inline std::string get_value(const RunConfig& c, std::string_view dotted) { return find_key(dotted).get(c); }

// Flat "section.key" -> value map read from an INI stream.
inline std::map<std::string, std::string> read_ini(std::istream& in, const std::string& origin) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw config_error(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  std::map<std::string, std::string> flat;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw config_error(origin + ": key '" + section + "' outside of a [section]");
    for (const auto& [key, node] : body) {
      const std::string dotted = section + "." + key;
      find_key(dotted);
      flat[dotted] = node.data();
    }
  }
  return flat;
}

inline std::map<std::string, std::string> read_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  return read_ini(in, path);
}

inline std::map<std::string, std::string> env_overrides() {
  std::map<std::string, std::string> flat;
  for (const auto& k : config_keys())
    if (const char* v = std::getenv(k.env_var().c_str())) flat[k.dotted()] = v;
  return flat;
}

// Resolution order: environment defaults < file < POEM_* env vars < flags.
// env and algo are resolved first because they pick the defaults.
inline RunConfig resolve_config(const std::map<std::string, std::string>& file,
                                const std::map<std::string, std::string>& env,
                                const std::map<std::string, std::string>& flags) {
  auto pick = [&](const std::string& dotted, std::string fallback) {
    for (const auto* layer : {&flags, &env, &file})
      if (auto it = layer->find(dotted); it != layer->end()) return detail::trim(it->second);
    return fallback;
  };
  RunConfig c = default_run_config(pick("run.env", "mountain_car_continuous"), parse_algo(pick("run.algo", "poem")));
  for (const auto* layer : {&file, &env, &flags})
    for (const auto& [dotted, value] : *layer) set_value(c, dotted, value);
  c.normalize();
  c.validate();
  return c;
}

inline void write_config(std::ostream& out, const RunConfig& c) {
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      out << (section.empty() ? "" : "\n") << '[' << k.section << "]\n";
      section = k.section;
    }
    out << k.key << " = " << k.get(c) << '\n';
  }
}

inline std::string config_to_string(const RunConfig& c) {
  std::ostringstream out;
  write_config(out, c);
  return out.str();
}

inline RunConfig config_from_string(const std::string& text) {
  std::istringstream in(text);
  return resolve_config(read_ini(in, "<string>"), {}, {});
}

}  // namespace poem
