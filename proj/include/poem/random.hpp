#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace poem {

// Seeded generator with platform-independent uniform/normal transforms.
// std::normal_distribution caches values and differs across standard
// libraries, so the transforms live here and the engine is the whole state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double low, double high) { return low + (high - low) * uniform(); }

  // Standard normal via Box-Muller, one draw per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent child stream, e.g. one per episode or per subsystem.
  Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

  bool operator==(const Rng&) const = default;

 private:
  std::mt19937_64 engine_;
};

}  // namespace poem
