#pragma once

// Native control environments behind a reset/step interface.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "poem/policy.hpp"
#include "poem/random.hpp"

namespace poem {

struct ActionSpace {
  enum class Kind { Continuous, Discrete };
  Kind kind = Kind::Continuous;
  int n = 1;  // dimensions (continuous) or number of actions (discrete)
  double low = -1.0;
  double high = 1.0;

  bool operator==(const ActionSpace&) const = default;
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool terminated = false;  // task-defined end
  bool truncated = false;   // time limit
  std::map<std::string, double> info;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::string id() const = 0;
  virtual int observation_dim() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual int max_episode_steps() const = 0;

  std::vector<double> reset(std::uint64_t seed) {
    steps_ = 0;
    done_ = false;
    started_ = true;
    return do_reset(seed);
  }

  StepResult step(const Action& action) {
    if (!started_) throw std::logic_error(id() + ": step() before reset()");
    if (done_) throw std::logic_error(id() + ": step() after episode end; call reset()");
    StepResult r = do_step(action);
    ++steps_;
    if (!r.terminated && steps_ >= max_episode_steps()) r.truncated = true;
    done_ = r.terminated || r.truncated;
    return r;
  }

  int elapsed_steps() const { return steps_; }

 protected:
  virtual std::vector<double> do_reset(std::uint64_t seed) = 0;
  virtual StepResult do_step(const Action& action) = 0;

 private:
  int steps_ = 0;
  bool done_ = false;
  bool started_ = false;
};

// Continuous mountain car with the classic-control constants.
class MountainCarContinuous final : public Env {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPosition = 0.45;
  static constexpr double kPower = 0.0015;
  static constexpr double kGravity = 0.0025;
  static constexpr int kMaxSteps = 999;

  std::string id() const override { return "mountain_car_continuous"; }
  int observation_dim() const override { return 2; }
  ActionSpace action_space() const override { return {ActionSpace::Kind::Continuous, 1, -1.0, 1.0}; }
  int max_episode_steps() const override { return kMaxSteps; }

  double position() const { return position_; }
  double velocity() const { return velocity_; }

  // Places the car at an explicit state; the episode counter is reset.
  std::vector<double> reset_to(double position, double velocity) {
    reset(0);
    position_ = position;
    velocity_ = velocity;
    return {position_, velocity_};
  }

 protected:
  std::vector<double> do_reset(std::uint64_t seed) override {
    Rng rng(seed);
    position_ = rng.uniform(-0.6, -0.4);
    velocity_ = 0.0;
    return {position_, velocity_};
  }

  StepResult do_step(const Action& action) override {
    if (action.size() != 1) throw std::invalid_argument("mountain_car_continuous: action must be 1-D");
    const double force = std::clamp(action[0], -1.0, 1.0);
    velocity_ += force * kPower - kGravity * std::cos(3.0 * position_);
    velocity_ = std::clamp(velocity_, -kMaxSpeed, kMaxSpeed);
    position_ += velocity_;
    position_ = std::clamp(position_, kMinPosition, kMaxPosition);
    if (position_ == kMinPosition && velocity_ < 0.0) velocity_ = 0.0;

    StepResult r;
    r.terminated = position_ >= kGoalPosition;
    r.reward = -0.1 * force * force + (r.terminated ? 100.0 : 0.0);
    r.obs = {position_, velocity_};
    return r;
  }

 private:
  double position_ = -0.5;
  double velocity_ = 0.0;
};

// Point-mass 2-D lander with a finite fuel tank. Actions: 0 noop, 1 main
// engine (upward thrust), 2 left (thrust toward -x), 3 right (thrust toward +x).
class SparseLander final : public Env {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 9.8;
  static constexpr double kMainThrust = 15.0;
  static constexpr double kSideThrust = 4.0;
  static constexpr double kInitialFuel = 600.0;
  static constexpr double kMainFuelCost = 3.0;
  static constexpr double kSideFuelCost = 1.0;
  static constexpr double kStartHeight = 10.0;
  static constexpr double kPadHalfWidth = 0.5;
  static constexpr double kSafeSpeed = 1.0;
  static constexpr double kBoundsX = 5.0;
  static constexpr int kMaxSteps = 1000;

  enum Command : int { kNoop = 0, kMain = 1, kLeft = 2, kRight = 3 };

  struct State {
    double x = 0.0, y = kStartHeight, vx = 0.0, vy = 0.0;
    double fuel = kInitialFuel;
  };

  std::string id() const override { return "sparse_lander"; }
  int observation_dim() const override { return 5; }
  ActionSpace action_space() const override { return {ActionSpace::Kind::Discrete, 4, 0.0, 3.0}; }
  int max_episode_steps() const override { return kMaxSteps; }

  const State& state() const { return state_; }

  std::vector<double> reset_to(const State& s) {
    reset(0);
    state_ = s;
    return observe();
  }

 protected:
  std::vector<double> do_reset(std::uint64_t seed) override {
    Rng rng(seed);
    state_ = State{};
    state_.x = rng.uniform(-1.0, 1.0);
    state_.vx = rng.uniform(-0.5, 0.5);
    state_.vy = rng.uniform(-0.5, 0.5);
    return observe();
  }

  StepResult do_step(const Action& action) override {
    int command = category_index(action, 4);
    if (state_.fuel <= 0.0) command = kNoop;  // dry tank: engines dead

    double ax = 0.0, ay = -kGravity;
    if (command == kMain) {
      ay += kMainThrust;
      state_.fuel = std::max(0.0, state_.fuel - kMainFuelCost);
    } else if (command == kLeft || command == kRight) {
      ax = command == kLeft ? -kSideThrust : kSideThrust;
      state_.fuel = std::max(0.0, state_.fuel - kSideFuelCost);
    }
    state_.vx += ax * kDt;
    state_.vy += ay * kDt;
    state_.x += state_.vx * kDt;
    state_.y += state_.vy * kDt;

    StepResult r;
    r.reward = -0.3 * (std::abs(state_.x) + std::abs(state_.vx) + std::abs(state_.vy)) * kDt -
               (command == kMain ? 0.03 : 0.0);
    if (state_.y <= 0.0) {
      const bool safe = std::abs(state_.x) <= kPadHalfWidth && std::abs(state_.vy) <= kSafeSpeed &&
                        std::abs(state_.vx) <= kSafeSpeed;
      r.terminated = true;
      r.reward += safe ? 100.0 : -100.0;
      r.info["landed"] = safe ? 1.0 : 0.0;
      r.info["ground_contact"] = 1.0;
    } else if (std::abs(state_.x) > kBoundsX) {
      r.terminated = true;
      r.reward -= 100.0;
      r.info["landed"] = 0.0;
      r.info["ground_contact"] = 0.0;
    }
    r.info["fuel"] = state_.fuel;
    r.obs = observe();
    return r;
  }

 private:
  std::vector<double> observe() const {
    return {state_.x, state_.y, state_.vx, state_.vy, state_.fuel / kInitialFuel};
  }

  State state_;
};

inline std::unique_ptr<Env> make_env(std::string_view env_id) {
  if (env_id == "mountain_car_continuous") return std::make_unique<MountainCarContinuous>();
  if (env_id == "sparse_lander") return std::make_unique<SparseLander>();
  throw std::invalid_argument("unknown environment id: " + std::string(env_id));
}

inline HeadKind head_for(const ActionSpace& space) {
  return space.kind == ActionSpace::Kind::Continuous ? HeadKind::DiagGaussian : HeadKind::Categorical;
}

}  // namespace poem
