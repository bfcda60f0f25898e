#pragma once

#include <cstdint>
#include <string>

#include "arisaoi/env.hpp"

namespace arisaoi {

/// A controller choosing (schedule, altitude move) each slot. The environment
/// aligns the RIS to the scheduled device itself.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// Called right after `env.reset`; stochastic policies reseed from `episode_seed`.
  virtual void begin_episode(const Environment& env, std::uint64_t episode_seed) = 0;
  virtual Action act(const Environment& env) = 0;
};

}  // namespace arisaoi
