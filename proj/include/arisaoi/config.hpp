#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "arisaoi/channel.hpp"

namespace arisaoi {

/// Invalid configuration; `key()` names the offending config key path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

enum class ActivationKind { iid_bernoulli, fixed_trace };

using ActivationTrace = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ActivationSpec {
  ActivationKind kind = ActivationKind::iid_bernoulli;
  std::vector<double> probs;  // iid_bernoulli: one per device
  ActivationTrace trace;      // fixed_trace: devices x horizon
};

struct NetworkConfig {
  std::vector<Position3> devices;
  Position3 bs{2000.0, 500.0, 25.0};
  Planar uav_xy{250.0, 250.0};
  ChannelParams channel;
  double h_min = 10.0;
  double h_max = 1000.0;
  double h_start = 100.0;
  double d_max = 10.0;  // max vertical travel per slot
  int horizon = 120;
  ActivationSpec activation;
  std::uint64_t seed = 1;

  double altitude_penalty = 1.0;
  double snr_feature_cap = 10.0;
  bool redraw_los_per_slot = false;

  std::size_t num_devices() const { return devices.size(); }
};

/// Throws ConfigError on the first violated invariant.
void validate(const NetworkConfig& config);

/// Devices uniformly over the square [0, area]^2 at ground level.
std::vector<Position3> random_layout(std::size_t num_devices, double area_size, std::uint64_t seed);

/// Per-device activation probabilities drawn from Uniform(0, 1).
std::vector<double> random_activation_probs(std::size_t num_devices, std::uint64_t seed);

/// Default constants with a random layout and random Bernoulli activation.
NetworkConfig default_network_config(std::size_t num_devices, std::uint64_t layout_seed);

/// Stateless 64-bit mixer used to derive independent stream seeds.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

}  // namespace arisaoi
