#pragma once

// Geometry, path loss, LoS-only Rician fading and RIS phase alignment for a
// single IoT device -> aerial RIS -> base station link.
//
// Everything here is a pure function of its arguments and operates in linear
// units. Conversions from dB/dBm happen once when a config is loaded.

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

#include <Eigen/Core>

namespace arisaoi {

template <typename Scalar>
using Position3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using PlanarT = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using AnglesT = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using Position3 = Position3T<double>;
using Planar = PlanarT<double>;
using Angles = AnglesT<double>;

template <typename Scalar>
struct BasicChannelParams {
  Scalar gamma0 = Scalar(0.01);            // power gain at 1 m
  Scalar path_loss_exponent = Scalar(2.3);
  Scalar rician_k1 = Scalar(6.309573444801933);  // device -> UAV
  Scalar rician_k2 = Scalar(6.309573444801933);  // UAV -> BS
  Scalar tx_power = Scalar(0.1);           // W
  Scalar noise_power = Scalar(1e-14);      // W
  int num_elements = 128;
  Scalar snr_threshold = Scalar(1);

  bool valid() const {
    return gamma0 > 0 && path_loss_exponent > 0 && rician_k1 > 0 && rician_k2 > 0 &&
           tx_power > 0 && noise_power > 0 && num_elements >= 1 && snr_threshold > 0;
  }
};

using ChannelParams = BasicChannelParams<double>;

/// Phases applied by the RIS plus the fixed LoS angles of both hops.
template <typename Scalar>
struct BasicPhaseProfile {
  AnglesT<Scalar> phases;
  AnglesT<Scalar> los_angles_device;
  AnglesT<Scalar> los_angles_bs;
};

using PhaseProfile = BasicPhaseProfile<double>;

template <typename Scalar>
Scalar wrap_angle(Scalar angle) {
  constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  Scalar wrapped = std::fmod(angle, two_pi);
  if (wrapped < 0) wrapped += two_pi;
  // fmod of a value just below a multiple of 2pi can round up to 2pi.
  if (wrapped >= two_pi) wrapped = 0;
  return wrapped;
}

template <typename Scalar>
Scalar distance_device_to_uav(const Position3T<Scalar>& device, const PlanarT<Scalar>& uav_xy,
                              Scalar altitude) {
  const Scalar dx = device.x() - uav_xy.x();
  const Scalar dy = device.y() - uav_xy.y();
  return std::sqrt(dx * dx + dy * dy + altitude * altitude);
}

template <typename Scalar>
Scalar distance_uav_to_bs(const Position3T<Scalar>& bs, const PlanarT<Scalar>& uav_xy,
                          Scalar altitude) {
  const Scalar dx = bs.x() - uav_xy.x();
  const Scalar dy = bs.y() - uav_xy.y();
  const Scalar dz = bs.z() - altitude;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// sqrt(gamma0 * d^-eta); the large-scale amplitude of one hop.
template <typename Scalar>
Scalar path_loss_amplitude(Scalar distance, const BasicChannelParams<Scalar>& params) {
  if (!(distance > 0)) throw std::domain_error("path_loss_amplitude: distance must be positive");
  return std::sqrt(params.gamma0 * std::pow(distance, -params.path_loss_exponent));
}

template <typename Scalar>
Scalar rician_los_scale(Scalar k_factor) {
  return std::sqrt(k_factor / (k_factor + Scalar(1)));
}

/// Per-element phases that co-phase every reflected path: (psi_f + omega_f) mod 2pi.
template <typename Scalar>
AnglesT<Scalar> optimal_phases(const AnglesT<Scalar>& los_angles_device,
                               const AnglesT<Scalar>& los_angles_bs) {
  if (los_angles_device.size() != los_angles_bs.size())
    throw std::invalid_argument("optimal_phases: angle vectors differ in length");
  return (los_angles_device + los_angles_bs).unaryExpr([](Scalar a) { return wrap_angle(a); });
}

/// Complex end-to-end gain h_iU^H * Phi * h_US of the cascaded two-hop link.
template <typename Scalar>
std::complex<Scalar> cascaded_gain(const BasicPhaseProfile<Scalar>& profile, Scalar d_device,
                                   Scalar d_bs, const BasicChannelParams<Scalar>& params) {
  const auto f = profile.phases.size();
  if (profile.los_angles_device.size() != f || profile.los_angles_bs.size() != f)
    throw std::invalid_argument("cascaded_gain: phase profile vectors differ in length");
  const Scalar amplitude = rician_los_scale(params.rician_k1) * rician_los_scale(params.rician_k2) *
                           path_loss_amplitude(d_device, params) *
                           path_loss_amplitude(d_bs, params);
  std::complex<Scalar> phasor_sum{0, 0};
  for (Eigen::Index k = 0; k < f; ++k) {
    const Scalar residual =
        profile.phases[k] - profile.los_angles_device[k] - profile.los_angles_bs[k];
    phasor_sum += std::polar(Scalar(1), residual);
  }
  return amplitude * phasor_sum;
}

template <typename Scalar>
Scalar snr(const std::complex<Scalar>& gain, const BasicChannelParams<Scalar>& params) {
  return params.tx_power * std::norm(gain) / params.noise_power;
}

/// SNR of one device with the RIS aligned to it.
template <typename Scalar>
Scalar aligned_snr(const AnglesT<Scalar>& los_angles_device, const AnglesT<Scalar>& los_angles_bs,
                   Scalar d_device, Scalar d_bs, const BasicChannelParams<Scalar>& params) {
  BasicPhaseProfile<Scalar> profile{optimal_phases(los_angles_device, los_angles_bs),
                                    los_angles_device, los_angles_bs};
  return snr(cascaded_gain(profile, d_device, d_bs, params), params);
}

}  // namespace arisaoi
