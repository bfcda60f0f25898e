#include "arisaoi/env.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "arisaoi/units.hpp"

namespace arisaoi {

LosAngles draw_los_angles(std::size_t num_devices, int num_elements, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  LosAngles los;
  los.device.reserve(num_devices);
  los.bs.reserve(num_devices);
  for (std::size_t i = 0; i < num_devices; ++i) {
    Angles psi(num_elements), omega(num_elements);
    for (int f = 0; f < num_elements; ++f) psi[f] = angle(rng);
    for (int f = 0; f < num_elements; ++f) omega[f] = angle(rng);
    los.device.push_back(std::move(psi));
    los.bs.push_back(std::move(omega));
  }
  return los;
}

Eigen::VectorXd compute_aligned_snrs(double altitude, const NetworkConfig& config,
                                     const LosAngles& los) {
  const auto m = config.num_devices();
  const double d_bs = distance_uav_to_bs(config.bs, config.uav_xy, altitude);
  Eigen::VectorXd out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double d_dev = distance_device_to_uav(config.devices[i], config.uav_xy, altitude);
    out[i] = aligned_snr(los.device[i], los.bs[i], d_dev, d_bs, config.channel);
  }
  return out;
}

bool advance_aoi(Eigen::Ref<Eigen::VectorXi> aoi, std::size_t scheduled, bool active, double snr,
                 double snr_threshold) {
  const bool delivered = active && snr >= snr_threshold;
  aoi.array() += 1;
  if (delivered) aoi[static_cast<Eigen::Index>(scheduled)] = 1;
  return delivered;
}

double esa(std::span<const Eigen::VectorXi> aoi_trace) {
  if (aoi_trace.empty()) throw std::invalid_argument("esa: empty trajectory");
  double sum = 0.0;
  Eigen::Index count = 0;
  for (const auto& a : aoi_trace) {
    sum += a.cast<double>().sum();
    count += a.size();
  }
  if (count == 0) throw std::invalid_argument("esa: no devices");
  return sum / static_cast<double>(count);
}

Eigen::VectorXd observe(const EnvState& state, const NetworkConfig& config) {
  const auto m = static_cast<Eigen::Index>(config.num_devices());
  const double cap = config.snr_feature_cap;
  Eigen::VectorXd features(2 * m + 1);
  features.head(m) = state.aoi.cast<double>() / static_cast<double>(config.horizon);
  features.segment(m, m) =
      (state.aligned_snr.array() / config.channel.snr_threshold).min(cap).matrix() / cap;
  features[2 * m] = (state.altitude - config.h_min) / (config.h_max - config.h_min);
  return features;
}

Environment::Environment(NetworkConfig config) : config_(std::move(config)) {
  validate(config_);
}

const EnvState& Environment::reset(std::uint64_t episode_seed) {
  // Separate streams: the activation realization must not depend on F.
  const std::uint64_t episode = derive_seed(config_.seed, episode_seed);
  rng_.seed(derive_seed(episode, 0xa9));
  const auto m = config_.num_devices();
  los_ = draw_los_angles(m, config_.channel.num_elements, rng_);

  if (config_.activation.kind == ActivationKind::fixed_trace) {
    activation_ = config_.activation.trace;
  } else {
    std::mt19937_64 activation_rng(derive_seed(episode, 0xac));
    activation_.resize(static_cast<Eigen::Index>(m), config_.horizon);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int n = 0; n < config_.horizon; ++n)
      for (std::size_t i = 0; i < m; ++i)
        activation_(static_cast<Eigen::Index>(i), n) =
            unit(activation_rng) < config_.activation.probs[i] ? 1 : 0;
  }

  state_.aoi = Eigen::VectorXi::Zero(static_cast<Eigen::Index>(m));
  state_.altitude = config_.h_start;
  state_.slot = 0;
  state_.aligned_snr = compute_aligned_snrs(state_.altitude, config_, los_);
  aoi_sum_ = 0.0;
  started_ = true;
  return state_;
}

StepOutcome Environment::step(const Action& action) {
  if (!started_) throw std::logic_error("Environment::step called before reset");
  if (done()) throw std::logic_error("Environment::step called on a finished episode");
  if (action.schedule >= num_devices()) throw std::out_of_range("Environment::step: schedule index out of range");

  StepOutcome out;
  const auto sched = static_cast<Eigen::Index>(action.schedule);
  out.active = active(action.schedule, state_.slot);
  out.scheduled_snr = state_.aligned_snr[sched];

  double tentative = state_.altitude;
  switch (action.altitude_move) {
    case AltitudeMove::up: tentative += config_.d_max; break;
    case AltitudeMove::down: tentative -= config_.d_max; break;
    case AltitudeMove::hover: break;
  }
  const double tol = 1e-9 * config_.d_max;
  if (tentative < config_.h_min - tol || tentative > config_.h_max + tol) {
    out.altitude_violation = true;
    tentative = state_.altitude;
  }
  tentative = std::clamp(tentative, config_.h_min, config_.h_max);

  out.delivered = advance_aoi(state_.aoi, action.schedule, out.active, out.scheduled_snr,
                              config_.channel.snr_threshold);
  const double mean_aoi = state_.aoi.cast<double>().mean();
  aoi_sum_ += state_.aoi.cast<double>().sum();
  out.reward = -mean_aoi - (out.altitude_violation ? config_.altitude_penalty : 0.0);

  if (config_.redraw_los_per_slot)
    los_ = draw_los_angles(num_devices(), config_.channel.num_elements, rng_);
  state_.altitude = tentative;
  state_.slot += 1;
  state_.aligned_snr = compute_aligned_snrs(state_.altitude, config_, los_);
  out.done = done();
  out.next_state = state_;
  return out;
}

double Environment::episode_esa() const {
  if (state_.slot == 0) throw std::logic_error("episode_esa: no slots completed");
  return aoi_sum_ / (static_cast<double>(state_.slot) * static_cast<double>(num_devices()));
}

std::vector<double> Environment::reachable_altitudes() const {
  const double tol = 1e-9 * config_.d_max;
  const auto below = static_cast<long>(std::floor((config_.h_start - config_.h_min) / config_.d_max + 1e-9));
  const auto above = static_cast<long>(std::floor((config_.h_max - config_.h_start) / config_.d_max + 1e-9));
  std::vector<double> grid;
  for (long k = -below; k <= above; ++k) {
    const double h = config_.h_start + static_cast<double>(k) * config_.d_max;
    if (h >= config_.h_min - tol && h <= config_.h_max + tol)
      grid.push_back(std::clamp(h, config_.h_min, config_.h_max));
  }
  return grid;
}

TraceRow make_trace_row(const EnvState& before, const Action& action, const StepOutcome& outcome) {
  TraceRow row;
  row.slot = before.slot;
  row.altitude = before.altitude;
  row.scheduled = action.schedule;
  row.active = outcome.active;
  row.snr_db = linear_to_db(outcome.scheduled_snr);
  row.delivered = outcome.delivered;
  row.aoi = outcome.next_state.aoi;
  row.reward = outcome.reward;
  return row;
}

void write_trace_csv(std::ostream& out, std::span<const TraceRow> rows) {
  const auto m = rows.empty() ? 0 : rows.front().aoi.size();
  out << "slot,altitude,scheduled,active,snr_db,delivered";
  for (Eigen::Index i = 0; i < m; ++i) out << ",aoi_" << i;
  out << ",reward\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.slot << ',' << r.altitude << ',' << r.scheduled << ',' << (r.active ? 1 : 0) << ','
        << r.snr_db << ',' << (r.delivered ? 1 : 0);
    for (Eigen::Index i = 0; i < r.aoi.size(); ++i) out << ',' << r.aoi[i];
    out << ',' << r.reward << '\n';
  }
}

}  // namespace arisaoi
