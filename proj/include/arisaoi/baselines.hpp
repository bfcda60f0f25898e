#pragma once

// Reference controllers: random walk, hovering greedy, and an exact
// backward-induction oracle for short fixed activation traces.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "arisaoi/env.hpp"
#include "arisaoi/policy.hpp"

namespace arisaoi {

enum class PolicyKind { random_walk, hovering_greedy, dp_oracle, trained_ppo };

std::string to_string(PolicyKind kind);
/// Throws std::invalid_argument on unknown names.
PolicyKind parse_policy_kind(const std::string& name);

Action random_walk_action(std::size_t num_devices, std::mt19937_64& rng);

/// Lowest reachable altitude maximizing the number of devices whose aligned
/// SNR meets the threshold.
double greedy_target_altitude(const Environment& env);

/// Oldest device among those feasible at the current altitude (all devices
/// when none is feasible); ties go to the lowest index.
std::size_t greedy_schedule(const EnvState& state, double snr_threshold);

/// One d_max step toward `target`, hover once within half a step of it.
AltitudeMove move_toward(double current, double target, double d_max);

class RandomWalkPolicy : public Policy {
 public:
  std::string name() const override { return "random_walk"; }
  void begin_episode(const Environment& env, std::uint64_t episode_seed) override;
  Action act(const Environment& env) override;

 private:
  std::mt19937_64 rng_;
};

class HoveringGreedyPolicy : public Policy {
 public:
  std::string name() const override { return "hovering_greedy"; }
  void begin_episode(const Environment& env, std::uint64_t episode_seed) override;
  Action act(const Environment& env) override;
  double target_altitude() const { return target_; }

 private:
  double target_ = 0.0;
};

/// Plays back a fixed action sequence (e.g. an oracle realization).
class ReplayPolicy : public Policy {
 public:
  explicit ReplayPolicy(std::vector<Action> actions, std::string name = "dp_oracle")
      : actions_(std::move(actions)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  void begin_episode(const Environment&, std::uint64_t) override { next_ = 0; }
  Action act(const Environment& env) override;

 private:
  std::vector<Action> actions_;
  std::string name_;
  std::size_t next_ = 0;
};

struct DpOptions {
  int aoi_cap = 1 << 20;            // effective cap is min(horizon, aoi_cap)
  double state_budget = 5e7;        // max (slot, altitude, AoI) states considered
  std::uint64_t episode_seed = 0;   // only LoS angles depend on it; aligned SNR does not
};

struct DpResult {
  double optimal_esa = 0.0;
  std::vector<Action> actions;
  std::size_t states_visited = 0;
};

class StateBudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minimum ESA over all schedule/altitude sequences for a fixed activation
/// trace, by memoized backward induction over (slot, altitude, capped AoI).
DpResult dp_oracle(const NetworkConfig& config, const DpOptions& options = {});

}  // namespace arisaoi
