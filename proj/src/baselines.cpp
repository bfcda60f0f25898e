#include "arisaoi/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace arisaoi {

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::random_walk: return "random_walk";
    case PolicyKind::hovering_greedy: return "hovering_greedy";
    case PolicyKind::dp_oracle: return "dp_oracle";
    case PolicyKind::trained_ppo: return "trained_ppo";
  }
  return "unknown";
}

PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "random_walk") return PolicyKind::random_walk;
  if (name == "hovering_greedy") return PolicyKind::hovering_greedy;
  if (name == "dp_oracle") return PolicyKind::dp_oracle;
  if (name == "trained_ppo" || name == "ppo") return PolicyKind::trained_ppo;
  throw std::invalid_argument("unknown policy '" + name + "'");
}

Action random_walk_action(std::size_t num_devices, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> device(0, num_devices - 1);
  std::uniform_int_distribution<int> move(0, kNumAltitudeMoves - 1);
  const auto s = device(rng);
  return {s, static_cast<AltitudeMove>(move(rng))};
}

double greedy_target_altitude(const Environment& env) {
  const double threshold = env.config().channel.snr_threshold;
  double best_h = env.config().h_start;
  long best_count = -1;
  for (double h : env.reachable_altitudes()) {
    const auto snrs = env.aligned_snrs_at(h);
    const long count = (snrs.array() >= threshold).count();
    if (count > best_count) {
      best_count = count;
      best_h = h;
    }
  }
  return best_h;
}

std::size_t greedy_schedule(const EnvState& state, double snr_threshold) {
  const bool any_feasible = (state.aligned_snr.array() >= snr_threshold).any();
  Eigen::Index best = -1;
  for (Eigen::Index i = 0; i < state.aoi.size(); ++i) {
    if (any_feasible && state.aligned_snr[i] < snr_threshold) continue;
    if (best < 0 || state.aoi[i] > state.aoi[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

AltitudeMove move_toward(double current, double target, double d_max) {
  if (target > current + 0.5 * d_max) return AltitudeMove::up;
  if (target < current - 0.5 * d_max) return AltitudeMove::down;
  return AltitudeMove::hover;
}

void RandomWalkPolicy::begin_episode(const Environment&, std::uint64_t episode_seed) {
  rng_.seed(derive_seed(episode_seed, 0x3a1c));
}

Action RandomWalkPolicy::act(const Environment& env) { return random_walk_action(env.num_devices(), rng_); }

void HoveringGreedyPolicy::begin_episode(const Environment& env, std::uint64_t) {
  target_ = greedy_target_altitude(env);
}

Action HoveringGreedyPolicy::act(const Environment& env) {
  const auto& s = env.state();
  return {greedy_schedule(s, env.config().channel.snr_threshold),
          move_toward(s.altitude, target_, env.config().d_max)};
}

Action ReplayPolicy::act(const Environment&) {
  if (next_ >= actions_.size()) throw std::out_of_range("ReplayPolicy: action sequence exhausted");
  return actions_[next_++];
}

DpResult dp_oracle(const NetworkConfig& config, const DpOptions& options) {
  if (config.activation.kind != ActivationKind::fixed_trace)
    throw std::invalid_argument("dp_oracle: requires a fixed activation trace");
  Environment env(config);
  env.reset(options.episode_seed);

  const int horizon = config.horizon;
  const auto m = static_cast<int>(config.num_devices());
  const std::vector<double> grid = env.reachable_altitudes();
  const auto g_count = static_cast<int>(grid.size());
  const int cap = std::max(1, std::min(horizon, options.aoi_cap));
  const double base = cap + 1;

  const double state_space = static_cast<double>(horizon) * g_count * std::pow(base, m);
  if (state_space > options.state_budget)
    throw StateBudgetExceeded("dp_oracle: state space of " + std::to_string(state_space) +
                              " exceeds the configured budget");

  int start = 0;
  for (int g = 0; g < g_count; ++g)
    if (std::abs(grid[static_cast<std::size_t>(g)] - config.h_start) <
        std::abs(grid[static_cast<std::size_t>(start)] - config.h_start))
      start = g;

  std::vector<std::vector<std::uint8_t>> feasible(static_cast<std::size_t>(g_count));
  for (int g = 0; g < g_count; ++g) {
    const auto snrs = env.aligned_snrs_at(grid[static_cast<std::size_t>(g)]);
    for (int i = 0; i < m; ++i)
      feasible[static_cast<std::size_t>(g)].push_back(snrs[i] >= config.channel.snr_threshold ? 1 : 0);
  }

  auto next_grid = [&](int g, AltitudeMove move) {
    if (move == AltitudeMove::up) return g + 1 < g_count ? g + 1 : g;
    if (move == AltitudeMove::down) return g > 0 ? g - 1 : g;
    return g;
  };
  auto encode = [&](int slot, int g, const std::vector<int>& aoi) {
    std::uint64_t code = static_cast<std::uint64_t>(slot) * static_cast<std::uint64_t>(g_count) +
                         static_cast<std::uint64_t>(g);
    for (int a : aoi) code = code * static_cast<std::uint64_t>(cap + 1) + static_cast<std::uint64_t>(a);
    return code;
  };
  auto transition = [&](int slot, int g, const std::vector<int>& aoi, std::size_t sched) {
    std::vector<int> next(aoi);
    const bool delivered = config.activation.trace(static_cast<Eigen::Index>(sched), slot) != 0 &&
                           feasible[static_cast<std::size_t>(g)][sched] != 0;
    for (auto& a : next) a = std::min(a + 1, cap);
    if (delivered) next[sched] = 1;
    return next;
  };

  std::unordered_map<std::uint64_t, double> memo;
  std::function<double(int, int, const std::vector<int>&)> value = [&](int slot, int g,
                                                                       const std::vector<int>& aoi) {
    if (slot == horizon) return 0.0;
    const auto key = encode(slot, g, aoi);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < static_cast<std::size_t>(m); ++s) {
      const auto next = transition(slot, g, aoi, s);
      double cost = 0.0;
      for (int a : next) cost += a;
      for (int mv = 0; mv < kNumAltitudeMoves; ++mv) {
        const double total = cost + value(slot + 1, next_grid(g, static_cast<AltitudeMove>(mv)), next);
        best = std::min(best, total);
      }
    }
    memo.emplace(key, best);
    return best;
  };

  DpResult result;
  std::vector<int> aoi(static_cast<std::size_t>(m), 0);
  const double total = value(0, start, aoi);
  result.optimal_esa = total / (static_cast<double>(horizon) * m);

  int g = start;
  for (int slot = 0; slot < horizon; ++slot) {
    const double target = value(slot, g, aoi);
    bool found = false;
    for (std::size_t s = 0; s < static_cast<std::size_t>(m) && !found; ++s) {
      const auto next = transition(slot, g, aoi, s);
      double cost = 0.0;
      for (int a : next) cost += a;
      for (int mv = 0; mv < kNumAltitudeMoves && !found; ++mv) {
        const int ng = next_grid(g, static_cast<AltitudeMove>(mv));
        if (cost + value(slot + 1, ng, next) == target) {
          result.actions.push_back({s, static_cast<AltitudeMove>(mv)});
          aoi = next;
          g = ng;
          found = true;
        }
      }
    }
    if (!found) throw std::logic_error("dp_oracle: failed to reconstruct optimal actions");
  }
  result.states_visited = memo.size();
  return result;
}

}  // namespace arisaoi
