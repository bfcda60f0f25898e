#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"

#include "arisaoi/env.hpp"

using namespace arisaoi;

namespace {

// Devices clustered under the UAV (feasible at every altitude of the default
// grid near h_start) with a fixed activation trace given as strings.
NetworkConfig traced(const std::vector<std::string>& rows) {
  NetworkConfig c;
  c.horizon = static_cast<int>(rows.front().size());
  c.activation.kind = ActivationKind::fixed_trace;
  c.activation.trace.resize(static_cast<Eigen::Index>(rows.size()), c.horizon);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    c.devices.emplace_back(250.0 + 5.0 * static_cast<double>(i), 250.0, 0.0);
    for (int n = 0; n < c.horizon; ++n)
      c.activation.trace(static_cast<Eigen::Index>(i), n) = rows[i][static_cast<std::size_t>(n)] == '1' ? 1 : 0;
  }
  return c;
}

NetworkConfig bernoulli(std::vector<double> probs, int horizon = 120) {
  NetworkConfig c;
  for (std::size_t i = 0; i < probs.size(); ++i) c.devices.emplace_back(100.0 + 60.0 * static_cast<double>(i), 300.0, 0.0);
  c.activation.probs = std::move(probs);
  c.horizon = horizon;
  return c;
}

}  // namespace

TEST_CASE("reset") {
  Environment env(bernoulli({0.5, 0.2, 0.9}));
  const auto& s = env.reset(3);
  CHECK(s.altitude == 100.0);
  CHECK(s.aoi == Eigen::VectorXi::Zero(3));
  CHECK(s.slot == 0);
  CHECK(s.aligned_snr.size() == 3);
  CHECK_FALSE(env.done());

  SUBCASE("same seed reproduces the state bit for bit") {
    const EnvState first = env.state();
    const auto los = env.los_angles();
    env.step({0, AltitudeMove::up});
    env.reset(3);
    CHECK(env.state() == first);
    for (std::size_t i = 0; i < 3; ++i) CHECK((env.los_angles().device[i] == los.device[i]).all());
  }
  SUBCASE("different seeds draw different LoS angles") {
    const auto los = env.los_angles();
    env.reset(4);
    CHECK_FALSE((env.los_angles().device[0] == los.device[0]).all());
  }
}

TEST_CASE("aligned SNRs") {
  SUBCASE("device under the UAV, BS overhead: best at the lowest altitude") {
    NetworkConfig c = bernoulli({1.0});
    c.devices = {Position3(250, 250, 0)};
    c.bs = Position3(250, 250, 2000);
    Environment env(c);
    env.reset(0);
    // Grid-search oracle on the closed form (h * (H_bs - h))^-eta.
    double best_h = -1, best_metric = -1;
    for (double h : env.reachable_altitudes()) {
      const double metric = std::pow(h * (2000.0 - h), -c.channel.path_loss_exponent);
      if (metric > best_metric) {
        best_metric = metric;
        best_h = h;
      }
    }
    double arg = -1, top = -1;
    for (double h : env.reachable_altitudes()) {
      const double s = env.aligned_snrs_at(h)[0];
      if (s > top) {
        top = s;
        arg = h;
      }
    }
    CHECK(arg == best_h);
    CHECK(arg == c.h_min);
  }
  SUBCASE("doubling F multiplies every entry by four") {
    NetworkConfig c = bernoulli({0.5, 0.5, 0.5});
    Environment a(c);
    c.channel.num_elements *= 2;
    Environment b(c);
    a.reset(1);
    b.reset(1);
    for (double h : {10.0, 100.0, 730.0}) {
      const Eigen::VectorXd ratio = b.aligned_snrs_at(h).array() / a.aligned_snrs_at(h).array();
      for (double r : ratio) CHECK(r == doctest::Approx(4.0).epsilon(1e-12));
    }
  }
  SUBCASE("one entry per device") {
    Environment env(bernoulli({0.1, 0.2, 0.3}));
    env.reset(0);
    CHECK(env.aligned_snrs_at(50.0).size() == 3);
  }
}

TEST_CASE("AoI update") {
  Eigen::VectorXi a(1);
  a << 5;
  CHECK(advance_aoi(a, 0, true, 2.0, 1.0));
  CHECK(a[0] == 1);
  a << 5;
  CHECK_FALSE(advance_aoi(a, 0, false, 2.0, 1.0));
  CHECK(a[0] == 6);
  a << 5;
  CHECK_FALSE(advance_aoi(a, 0, true, 0.5, 1.0));
  CHECK(a[0] == 6);
  a << 5;
  CHECK(advance_aoi(a, 0, true, 1.0, 1.0));  // threshold is inclusive
  CHECK(a[0] == 1);
}

TEST_CASE("step examples") {
  SUBCASE("delivery resets the age, inactivity grows it") {
    Environment env(traced({"0000010"}));
    env.reset(0);
    for (int k = 0; k < 5; ++k) env.step({0, AltitudeMove::hover});
    CHECK(env.state().aoi[0] == 5);
    auto out = env.step({0, AltitudeMove::hover});
    CHECK(out.delivered);
    CHECK(out.next_state.aoi[0] == 1);
    out = env.step({0, AltitudeMove::hover});
    CHECK_FALSE(out.delivered);
    CHECK(out.next_state.aoi[0] == 2);
    CHECK(out.done);
  }
  SUBCASE("two devices, hand-evaluated reward") {
    // slot 5: device 0 delivers; slot 6: device 1 inactive -> A = [2, 7]
    Environment env(traced({"00000101", "00000000"}));
    env.reset(0);
    for (int k = 0; k < 5; ++k) env.step({1, AltitudeMove::hover});
    env.step({0, AltitudeMove::hover});
    env.step({1, AltitudeMove::hover});
    CHECK(env.state().aoi == (Eigen::VectorXi(2) << 2, 7).finished());
    const auto out = env.step({0, AltitudeMove::hover});
    CHECK(out.next_state.aoi == (Eigen::VectorXi(2) << 1, 8).finished());
    CHECK(out.reward == -4.5);
  }
  SUBCASE("moving past h_max is cancelled and penalized") {
    NetworkConfig c = traced({"0000"});
    c.h_max = 100.0;
    c.h_start = 100.0;
    c.altitude_penalty = 1.0;
    Environment env(c);
    env.reset(0);
    const auto out = env.step({0, AltitudeMove::up});
    CHECK(out.altitude_violation);
    CHECK(out.next_state.altitude == 100.0);
    CHECK(out.reward == -1.0 - 1.0);
  }
  SUBCASE("moving below h_min is cancelled too") {
    NetworkConfig c = traced({"0000"});
    c.h_min = 95.0;
    Environment env(c);
    env.reset(0);
    const auto out = env.step({0, AltitudeMove::down});
    CHECK(out.altitude_violation);
    CHECK(out.next_state.altitude == 100.0);
  }
  SUBCASE("legal moves change the altitude by exactly d_max") {
    Environment env(traced({"0000"}));
    env.reset(0);
    CHECK(env.step({0, AltitudeMove::up}).next_state.altitude == 110.0);
    CHECK(env.step({0, AltitudeMove::down}).next_state.altitude == 100.0);
    CHECK(env.step({0, AltitudeMove::down}).next_state.altitude == 90.0);
    CHECK(env.step({0, AltitudeMove::hover}).next_state.altitude == 90.0);
  }
  SUBCASE("delivery uses the SNR at the altitude the slot started from") {
    // Device just inside the feasible range at 100 m but not at 110 m.
    NetworkConfig c = traced({"11"});
    double r = 0;
    for (; r < 400; r += 0.5) {
      c.devices[0] = Position3(250 + r, 250, 0);
      Environment e(c);
      e.reset(0);
      if (e.aligned_snrs_at(110.0)[0] < 1.0) break;
    }
    Environment env(c);
    env.reset(0);
    REQUIRE(env.state().aligned_snr[0] >= 1.0);
    const auto out = env.step({0, AltitudeMove::up});
    CHECK(out.delivered);
    CHECK(out.next_state.aligned_snr[0] < 1.0);
  }
}

TEST_CASE("step errors") {
  Environment env(traced({"01"}));
  CHECK_THROWS_AS(env.step({0, AltitudeMove::hover}), std::logic_error);
  env.reset(0);
  CHECK_THROWS_AS(env.step({1, AltitudeMove::hover}), std::out_of_range);
  env.step({0, AltitudeMove::hover});
  env.step({0, AltitudeMove::hover});
  CHECK(env.done());
  CHECK_THROWS_AS(env.step({0, AltitudeMove::hover}), std::logic_error);
}

TEST_CASE("ESA") {
  std::vector<Eigen::VectorXi> zeros(4, Eigen::VectorXi::Zero(3));
  CHECK(esa(zeros) == 0.0);
  std::vector<Eigen::VectorXi> never{Eigen::VectorXi::Constant(1, 1), Eigen::VectorXi::Constant(1, 2),
                                     Eigen::VectorXi::Constant(1, 3)};
  CHECK(esa(never) == 2.0);
  std::vector<Eigen::VectorXi> always(3, Eigen::VectorXi::Constant(1, 1));
  CHECK(esa(always) == 1.0);
  CHECK_THROWS(esa(std::vector<Eigen::VectorXi>{}));

  SUBCASE("environment bookkeeping agrees") {
    Environment env(traced({"000", "111"}));
    env.reset(0);
    std::vector<Eigen::VectorXi> trace;
    for (int k = 0; k < 3; ++k) trace.push_back(env.step({1, AltitudeMove::hover}).next_state.aoi);
    // device 0: 1,2,3 ; device 1: 1,1,1
    CHECK(env.episode_esa() == 1.5);
    CHECK(esa(trace) == 1.5);
  }
}

TEST_CASE("observation features") {
  NetworkConfig c = bernoulli({0.5, 0.5});
  Environment env(c);
  env.reset(0);
  Eigen::VectorXd f = observe(env.state(), c);
  CHECK(f.size() == 5);
  CHECK(f.head(2).isZero());

  EnvState s = env.state();
  s.altitude = c.h_min;
  CHECK(observe(s, c)[4] == 0.0);
  s.altitude = c.h_max;
  CHECK(observe(s, c)[4] == 1.0);

  s.aligned_snr << c.channel.snr_threshold, 1e9;
  s.aoi << 60, 120;
  f = observe(s, c);
  CHECK(f[2] == doctest::Approx(0.1));
  CHECK(f[3] == 1.0);
  CHECK(f[0] == 0.5);
  CHECK(f[1] == 1.0);
}

TEST_CASE("trajectory invariants under random actions") {
  NetworkConfig c = bernoulli({0.3, 0.8, 0.55, 1.0}, 60);
  c.h_max = 140.0;
  c.h_min = 60.0;
  c.altitude_penalty = 0.0;  // keeps the reward/ESA identity exact even with violations
  Environment env(c);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> dev(0, 3);
  std::uniform_int_distribution<int> mv(0, 2);
  for (int episode = 0; episode < 30; ++episode) {
    env.reset(static_cast<std::uint64_t>(episode));
    double reward_sum = 0.0;
    while (!env.done()) {
      const EnvState before = env.state();
      const Action a{dev(rng), static_cast<AltitudeMove>(mv(rng))};
      const bool active = env.active(a.schedule, before.slot);
      const auto out = env.step(a);
      const auto& after = out.next_state;
      reward_sum += out.reward;
      for (Eigen::Index i = 0; i < 4; ++i) {
        const bool reset = static_cast<std::size_t>(i) == a.schedule && active &&
                           before.aligned_snr[i] >= c.channel.snr_threshold;
        CHECK(after.aoi[i] == (reset ? 1 : before.aoi[i] + 1));
        CHECK(after.aoi[i] <= after.slot + 1);
        CHECK(after.aligned_snr[i] >= 0.0);
      }
      CHECK(after.altitude >= c.h_min);
      CHECK(after.altitude <= c.h_max);
      CHECK(std::abs(after.altitude - before.altitude) <= c.d_max);
      CHECK(out.done == (after.slot == c.horizon));
    }
    CHECK(-reward_sum / c.horizon == doctest::Approx(env.episode_esa()).epsilon(1e-12));
  }
}

TEST_CASE("activation process") {
  SUBCASE("Bernoulli frequencies") {
    Environment env(bernoulli({0.2, 0.7}, 5000));
    env.reset(1);
    double on[2] = {0, 0};
    for (int n = 0; n < 5000; ++n)
      for (std::size_t i = 0; i < 2; ++i) on[i] += env.active(i, n);
    CHECK(on[0] / 5000 == doctest::Approx(0.2).epsilon(0.15));
    CHECK(on[1] / 5000 == doctest::Approx(0.7).epsilon(0.05));
  }
  SUBCASE("realization does not depend on the RIS size") {
    NetworkConfig c = bernoulli({0.5, 0.5, 0.5});
    Environment a(c);
    c.channel.num_elements = 16;
    Environment b(c);
    a.reset(7);
    b.reset(7);
    for (int n = 0; n < c.horizon; ++n)
      for (std::size_t i = 0; i < 3; ++i) CHECK(a.active(i, n) == b.active(i, n));
  }
  SUBCASE("fixed traces are used verbatim") {
    Environment env(traced({"1001", "0110"}));
    env.reset(123);
    CHECK(env.active(0, 0));
    CHECK_FALSE(env.active(0, 1));
    CHECK(env.active(1, 2));
    CHECK_FALSE(env.active(1, 3));
  }
}

TEST_CASE("per-slot LoS redraw keeps the aligned SNR") {
  NetworkConfig c = bernoulli({0.5});
  c.redraw_los_per_slot = true;
  Environment env(c);
  env.reset(2);
  const auto before = env.los_angles().device[0];
  const double snr0 = env.state().aligned_snr[0];
  env.step({0, AltitudeMove::hover});
  CHECK_FALSE((env.los_angles().device[0] == before).all());
  CHECK(env.state().aligned_snr[0] == doctest::Approx(snr0).epsilon(1e-12));
}

TEST_CASE("config validation") {
  auto key_of = [](const NetworkConfig& c) {
    try {
      validate(c);
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string();
  };
  NetworkConfig ok = bernoulli({0.5});
  CHECK(key_of(ok).empty());

  NetworkConfig c = ok;
  c.h_max = 5;
  CHECK(key_of(c) == "network.h_max_m");
  c = ok;
  c.h_start = c.h_min;
  CHECK_FALSE(key_of(c).empty());
  c = ok;
  c.d_max = 0;
  CHECK(key_of(c) == "network.d_max_m");
  c = ok;
  c.devices.clear();
  c.activation.probs.clear();
  CHECK(key_of(c) == "network.num_devices");
  c = ok;
  c.activation.probs = {1.5};
  CHECK(key_of(c) == "network.activation_probs");
  c = traced({"0101"});
  c.horizon = 5;
  CHECK(key_of(c) == "network.activation_trace");
  CHECK_THROWS_AS(Environment{c}, ConfigError);
}

TEST_CASE("reachable altitude grid") {
  NetworkConfig c = bernoulli({0.5});
  c.h_min = 10;
  c.h_max = 45;
  c.h_start = 27;
  Environment env(c);
  CHECK(env.reachable_altitudes() == std::vector<double>{17.0, 27.0, 37.0});
}

TEST_CASE("trace CSV") {
  Environment env(traced({"11", "00"}));
  env.reset(0);
  std::vector<TraceRow> rows;
  while (!env.done()) {
    const EnvState before = env.state();
    const Action a{0, AltitudeMove::hover};
    rows.push_back(make_trace_row(before, a, env.step(a)));
  }
  std::ostringstream out;
  write_trace_csv(out, rows);
  std::istringstream in(out.str());
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "slot,altitude,scheduled,active,snr_db,delivered,aoi_0,aoi_1,reward");
  CHECK(first.rfind("0,100,0,1,", 0) == 0);
  CHECK(first.ends_with(",1,1,1,-1"));
}
