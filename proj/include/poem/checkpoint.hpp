#pragma once

// Checkpoint file: a text header naming the environment and network shapes,
// terminated by "end", followed by the binary parameter blob.
//
//   POEM-CHECKPOINT 1
//   env_id=mountain_car_continuous
//   algo=poem
//   run_id=seed_0
//   head=diag_gaussian
//   action_dim=1
//   actor_layers=2,64,64,1
//   critic_layers=2,64,64,1
//   end
//   <uint32 count><count x float64>   (little-endian)

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poem/nn.hpp"
#include "poem/policy.hpp"

namespace poem {

class checkpoint_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic = "POEM-CHECKPOINT 1";

struct Checkpoint {
  std::string env_id;
  std::string algo;
  std::string run_id;
  ActorCritic ac;
};

namespace detail {

inline std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

inline std::vector<int> split_ints(const std::string& text) {
  std::vector<int> xs;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      throw checkpoint_error("checkpoint: malformed layer list '" + text + "'");
    }
    if (used != item.size()) throw checkpoint_error("checkpoint: malformed layer list '" + text + "'");
    xs.push_back(v);
  }
  return xs;
}

}  // namespace detail

// Written to a temporary file and renamed, so a crash never leaves a torn checkpoint.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("cannot write checkpoint " + tmp.string());
    out << kCheckpointMagic << '\n'
        << "env_id=" << ckpt.env_id << '\n'
        << "algo=" << ckpt.algo << '\n'
        << "run_id=" << ckpt.run_id << '\n'
        << "head=" << (ckpt.ac.head == HeadKind::DiagGaussian ? "diag_gaussian" : "categorical") << '\n'
        << "action_dim=" << ckpt.ac.action_dim << '\n'
        << "actor_layers=" << detail::join_ints(ckpt.ac.actor_spec.layer_sizes) << '\n'
        << "critic_layers=" << detail::join_ints(ckpt.ac.critic_spec.layer_sizes) << '\n'
        << "end\n";
    write_param_values(out, ckpt.ac.params.values());
    out.flush();
    if (!out) throw checkpoint_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw checkpoint_error("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw checkpoint_error(path.string() + ": not a checkpoint file");
  std::map<std::string, std::string> header;
  while (true) {
    if (!std::getline(in, line)) throw checkpoint_error(path.string() + ": truncated header");
    if (line == "end") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw checkpoint_error(path.string() + ": malformed header line '" + line + "'");
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) {
    const auto it = header.find(key);
    if (it == header.end()) throw checkpoint_error(path.string() + ": header lacks '" + key + "'");
    return it->second;
  };

  Checkpoint ckpt;
  ckpt.env_id = field("env_id");
  ckpt.algo = field("algo");
  ckpt.run_id = field("run_id");
  const std::string head = field("head");
  if (head != "diag_gaussian" && head != "categorical") throw checkpoint_error(path.string() + ": unknown head " + head);
  ckpt.ac.head = head == "diag_gaussian" ? HeadKind::DiagGaussian : HeadKind::Categorical;
  ckpt.ac.actor_spec.layer_sizes = detail::split_ints(field("actor_layers"));
  ckpt.ac.critic_spec.layer_sizes = detail::split_ints(field("critic_layers"));
  ckpt.ac.action_dim = detail::split_ints(field("action_dim")).at(0);
  try {
    ckpt.ac.actor_spec.validate();
    ckpt.ac.critic_spec.validate();
  } catch (const std::invalid_argument& e) {
    throw checkpoint_error(path.string() + ": " + e.what());
  }
  if (ckpt.ac.actor_spec.output_size() != ckpt.ac.action_dim || ckpt.ac.critic_spec.output_size() != 1 ||
      ckpt.ac.actor_spec.input_size() != ckpt.ac.critic_spec.input_size())
    throw checkpoint_error(path.string() + ": inconsistent network shapes");

  std::vector<double> values;
  try {
    values = read_param_values(in);
  } catch (const std::runtime_error& e) {
    throw checkpoint_error(path.string() + ": " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw checkpoint_error(path.string() + ": trailing bytes");
  const auto layout = ActorCritic::expected_layout(ckpt.ac.actor_spec, ckpt.ac.log_std_size(), ckpt.ac.critic_spec);
  if (layout.empty() || layout.back().range.end() != values.size())
    throw checkpoint_error(path.string() + ": parameter count does not match the header shapes");
  if (!all_finite(values)) throw checkpoint_error(path.string() + ": non-finite parameters");
  ckpt.ac.params = ParamVector(std::move(values), layout);
  return ckpt;
}

}  // namespace poem
