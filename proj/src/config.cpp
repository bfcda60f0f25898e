#include "arisaoi/config.hpp"

#include <cmath>
#include <random>

namespace arisaoi {

namespace {

bool finite3(const Position3& p) { return p.allFinite(); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  // splitmix64 finalizer over the combined word
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void validate(const NetworkConfig& c) {
  if (c.devices.empty()) throw ConfigError("network.num_devices", "at least one device required");
  for (std::size_t i = 0; i < c.devices.size(); ++i) {
    if (!finite3(c.devices[i]) || c.devices[i].z() < 0)
      throw ConfigError("network.devices", "device " + std::to_string(i) + " has invalid coordinates");
  }
  if (!finite3(c.bs) || c.bs.z() < 0) throw ConfigError("network.bs_z_m", "invalid base station position");
  if (!c.uav_xy.allFinite()) throw ConfigError("network.uav_x_m", "invalid UAV planar position");

  const auto& ch = c.channel;
  if (!(ch.gamma0 > 0)) throw ConfigError("network.ref_gain_db", "must map to a positive gain");
  if (!(ch.path_loss_exponent > 0)) throw ConfigError("network.path_loss_exponent", "must be positive");
  if (!(ch.rician_k1 > 0)) throw ConfigError("network.rician_k1_db", "must map to a positive factor");
  if (!(ch.rician_k2 > 0)) throw ConfigError("network.rician_k2_db", "must map to a positive factor");
  if (!(ch.tx_power > 0)) throw ConfigError("network.tx_power_dbm", "must map to a positive power");
  if (!(ch.noise_power > 0)) throw ConfigError("network.noise_power_dbm", "must map to a positive power");
  if (ch.num_elements < 1) throw ConfigError("network.num_elements", "must be >= 1");
  if (!(ch.snr_threshold > 0)) throw ConfigError("network.snr_threshold_db", "must map to a positive ratio");

  if (!(c.h_min > 0)) throw ConfigError("network.h_min_m", "minimum altitude must be positive");
  if (!(c.h_min < c.h_start && c.h_start <= c.h_max))
    throw ConfigError("network.h_max_m",
                      "altitude range constraint h_min <= H_U <= h_max requires h_min < h_start <= h_max");
  if (!(c.d_max > 0)) throw ConfigError("network.d_max_m", "per-slot vertical travel must be positive");
  if (c.horizon < 1) throw ConfigError("network.horizon", "horizon must be >= 1");
  if (!(c.altitude_penalty >= 0)) throw ConfigError("network.altitude_penalty", "must be non-negative");
  if (!(c.snr_feature_cap > 0)) throw ConfigError("network.snr_feature_cap", "must be positive");

  const auto m = c.devices.size();
  switch (c.activation.kind) {
    case ActivationKind::iid_bernoulli:
      if (c.activation.probs.size() != m)
        throw ConfigError("network.activation_probs", "need one probability per device");
      for (double p : c.activation.probs)
        if (!(p >= 0 && p <= 1)) throw ConfigError("network.activation_probs", "probabilities must lie in [0, 1]");
      if (c.activation.trace.size() != 0)
        throw ConfigError("network.activation_trace", "trace given for iid_bernoulli activation");
      break;
    case ActivationKind::fixed_trace:
      if (c.activation.trace.rows() != static_cast<Eigen::Index>(m) ||
          c.activation.trace.cols() != c.horizon)
        throw ConfigError("network.activation_trace", "trace must be num_devices x horizon");
      if ((c.activation.trace.array() > 1).any())
        throw ConfigError("network.activation_trace", "trace entries must be 0 or 1");
      if (!c.activation.probs.empty())
        throw ConfigError("network.activation_probs", "probabilities given for fixed_trace activation");
      break;
  }
}

std::vector<Position3> random_layout(std::size_t num_devices, double area_size, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x1a70));
  std::uniform_real_distribution<double> coord(0.0, area_size);
  std::vector<Position3> devices;
  devices.reserve(num_devices);
  for (std::size_t i = 0; i < num_devices; ++i) {
    const double x = coord(rng);
    const double y = coord(rng);
    devices.emplace_back(x, y, 0.0);
  }
  return devices;
}

std::vector<double> random_activation_probs(std::size_t num_devices, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0xac71));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> probs(num_devices);
  for (auto& p : probs) p = unit(rng);
  return probs;
}

NetworkConfig default_network_config(std::size_t num_devices, std::uint64_t layout_seed) {
  NetworkConfig c;
  c.devices = random_layout(num_devices, 500.0, layout_seed);
  c.activation.kind = ActivationKind::iid_bernoulli;
  c.activation.probs = random_activation_probs(num_devices, layout_seed);
  c.seed = layout_seed;
  return c;
}

}  // namespace arisaoi
