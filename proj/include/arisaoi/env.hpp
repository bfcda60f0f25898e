#pragma once

// Discrete-time aerial-RIS relaying MDP with per-device Age of Information.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "arisaoi/config.hpp"

namespace arisaoi {

enum class AltitudeMove : std::uint8_t { up = 0, down = 1, hover = 2 };
inline constexpr int kNumAltitudeMoves = 3;

struct Action {
  std::size_t schedule = 0;
  AltitudeMove altitude_move = AltitudeMove::hover;

  bool operator==(const Action&) const = default;
};

struct EnvState {
  Eigen::VectorXi aoi;
  Eigen::VectorXd aligned_snr;  // at `altitude`, RIS aligned per device
  double altitude = 0.0;
  int slot = 0;

  bool operator==(const EnvState& other) const {
    return aoi == other.aoi && aligned_snr == other.aligned_snr && altitude == other.altitude &&
           slot == other.slot;
  }
};

struct StepOutcome {
  EnvState next_state;
  double reward = 0.0;
  bool delivered = false;
  bool altitude_violation = false;
  bool done = false;
  bool active = false;          // activation of the scheduled device this slot
  double scheduled_snr = 0.0;   // aligned SNR of the scheduled device at decision time
};

/// Fixed LoS angle vectors (psi_i, omega_i) of every device.
struct LosAngles {
  std::vector<Angles> device;
  std::vector<Angles> bs;
};

LosAngles draw_los_angles(std::size_t num_devices, int num_elements, std::mt19937_64& rng);

Eigen::VectorXd compute_aligned_snrs(double altitude, const NetworkConfig& config,
                                     const LosAngles& los);

/// One AoI slot in place. Returns whether the scheduled device delivered.
bool advance_aoi(Eigen::Ref<Eigen::VectorXi> aoi, std::size_t scheduled, bool active, double snr,
                 double snr_threshold);

/// Mean of every A_i[n] in one episode's recorded AoI vectors.
double esa(std::span<const Eigen::VectorXi> aoi_trace);

/// Policy features in [0, 1]: AoI / N, capped SNR margin, normalized altitude.
Eigen::VectorXd observe(const EnvState& state, const NetworkConfig& config);

inline Eigen::Index observation_size(std::size_t num_devices) {
  return static_cast<Eigen::Index>(2 * num_devices + 1);
}

class Environment {
 public:
  explicit Environment(NetworkConfig config);

  const EnvState& reset(std::uint64_t episode_seed);
  StepOutcome step(const Action& action);

  const EnvState& state() const { return state_; }
  bool done() const { return state_.slot >= config_.horizon; }
  bool started() const { return started_; }
  const NetworkConfig& config() const { return config_; }
  const LosAngles& los_angles() const { return los_; }
  std::size_t num_devices() const { return config_.num_devices(); }

  /// Activation realization G_i[slot] of the current episode.
  bool active(std::size_t device, int slot) const { return activation_(device, slot) != 0; }

  Eigen::VectorXd aligned_snrs_at(double altitude) const {
    return compute_aligned_snrs(altitude, config_, los_);
  }

  /// Running sum of A_i[n] over devices and completed slots.
  double episode_aoi_sum() const { return aoi_sum_; }
  double episode_esa() const;

  /// Altitudes h_start + k * d_max inside [h_min, h_max], ascending.
  std::vector<double> reachable_altitudes() const;

 private:
  NetworkConfig config_;
  EnvState state_;
  LosAngles los_;
  ActivationTrace activation_;
  std::mt19937_64 rng_;
  double aoi_sum_ = 0.0;
  bool started_ = false;
};

struct TraceRow {
  int slot = 0;
  double altitude = 0.0;
  std::size_t scheduled = 0;
  bool active = false;
  double snr_db = 0.0;
  bool delivered = false;
  Eigen::VectorXi aoi;
  double reward = 0.0;
};

TraceRow make_trace_row(const EnvState& before, const Action& action, const StepOutcome& outcome);

/// Columns: slot, altitude, scheduled, active, snr_db, delivered, aoi_0..aoi_{M-1}, reward
void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows);

}  // namespace arisaoi
