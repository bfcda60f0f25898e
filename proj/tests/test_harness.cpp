#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

#include "doctest.h"

#include "arisaoi/harness.hpp"
#include "arisaoi/units.hpp"

using namespace arisaoi;
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

pt::ptree ini(const std::string& text) {
  std::istringstream in(text);
  pt::ptree t;
  pt::read_ini(in, t);
  return t;
}

std::string error_key(const std::string& text, std::vector<std::string> overrides = {}) {
  try {
    resolve_config(ini(text), overrides);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return {};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(ARISAOI_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("defaults are the paper's scenario") {
  const auto rc = default_config();
  const auto& n = rc.network;
  CHECK(n.horizon == 120);
  CHECK(n.channel.tx_power == doctest::Approx(0.1));
  CHECK(n.channel.path_loss_exponent == 2.3);
  CHECK(n.channel.gamma0 == doctest::Approx(0.01));
  CHECK(n.channel.noise_power == doctest::Approx(1e-14));
  CHECK(n.channel.snr_threshold == doctest::Approx(1.0));
  CHECK(n.channel.rician_k1 == doctest::Approx(std::pow(10.0, 0.8)));
  CHECK(n.channel.rician_k2 == doctest::Approx(std::pow(10.0, 0.8)));
  CHECK(n.h_start == 100);
  CHECK(n.h_min == 10);
  CHECK(n.h_max == 1000);
  CHECK(n.d_max == 10);
  CHECK(n.uav_xy == Planar(250, 250));
  CHECK(n.bs == Position3(2000, 500, 25));
  for (const auto& d : n.devices) {
    CHECK(d.x() >= 0);
    CHECK(d.x() <= 500);
    CHECK(d.y() >= 0);
    CHECK(d.y() <= 500);
  }
  const auto& p = rc.ppo;
  CHECK(p.learning_rate == 0.001);
  CHECK(p.discount == 0.9);
  CHECK(p.clip_epsilon == 0.2);
  CHECK(p.rollout_length == 240);
  CHECK(p.hidden == std::vector<Eigen::Index>{64, 64, 64});
  CHECK(p.value_coef == 0.5);
  CHECK(p.entropy_coef == 0.01);
  CHECK(p.total_samples == 48000);
  CHECK(rc.experiment.episodes_per_point == 50);
}

TEST_CASE("unit conversions") {
  CHECK(dbm_to_watts(20.0) == doctest::Approx(0.1));
  CHECK(watts_to_dbm(dbm_to_watts(20.0)) == doctest::Approx(20.0));
  CHECK(linear_to_db(db_to_linear(-20.0)) == doctest::Approx(-20.0));
}

TEST_CASE("config validation") {
  CHECK(error_key("[network]\nh_max_m = 5\n") == "network.h_max_m");
  CHECK(error_key("", {"network.h_max_m=5"}) == "network.h_max_m");
  CHECK(error_key("[network]\ncolour = blue\n") == "network.colour");
  CHECK(error_key("[ppo]\nclip_epsilon = 1.5\n") == "ppo.clip_epsilon");
  CHECK(error_key("[ppo]\nlearning_rate = fast\n") == "ppo.learning_rate");
  CHECK(error_key("", {"no_equals_sign"}) != "");
  CHECK(error_key("[network]\nactivation = fixed_trace\n") == "network.activation_trace");
  CHECK(error_key("[network]\nnum_devices = 3\ndevices = 1,2;3,4\n") == "network.num_devices");
  CHECK(error_key("[experiment]\npolicies = random_walk,oracle\n") != "");
  CHECK(error_key("[experiment]\nseeds = \n") != "");
  CHECK(error_key("[network]\nh_max_m = 500\n").empty());
}

TEST_CASE("explicit layouts and traces") {
  const auto rc = resolve_config(ini("[network]\ndevices = 250,260;240,230\nactivation = fixed_trace\n"
                                     "activation_trace = 1010;0101\nhorizon = 4\n"));
  CHECK(rc.network.num_devices() == 2);
  CHECK(rc.network.devices[1] == Position3(240, 230, 0));
  CHECK(rc.network.activation.kind == ActivationKind::fixed_trace);
  CHECK(rc.network.activation.trace(0, 2) == 1);
  CHECK(rc.network.activation.trace(1, 2) == 0);
}

TEST_CASE("resolved dump round-trips") {
  const auto rc = resolve_config(ini("[network]\nnum_devices = 4\ntx_power_dbm = 17\n[ppo]\nhidden = 32,16\n"),
                                 std::vector<std::string>{"experiment.seeds=3,4,5"});
  std::ostringstream out;
  dump_config(rc, out);
  const auto back = resolve_config(ini(out.str()));
  std::ostringstream again;
  dump_config(back, again);
  CHECK(out.str() == again.str());
  CHECK(back.network.num_devices() == 4);
  CHECK(back.network.devices == rc.network.devices);
  CHECK(back.network.activation.probs == rc.network.activation.probs);
  CHECK(back.network.channel.tx_power == rc.network.channel.tx_power);
  CHECK(back.ppo.hidden == std::vector<Eigen::Index>{32, 16});
  CHECK(back.experiment.seeds == std::vector<std::uint64_t>{3, 4, 5});

  const auto path = scratch("dump") / "resolved.ini";
  std::ofstream(path) << out.str();
  CHECK(load_config(path).network.devices == rc.network.devices);
  CHECK_THROWS_AS(load_config(scratch("dump") / "missing.ini"), ConfigError);
}

TEST_CASE("policy evaluation") {
  NetworkConfig never;
  never.devices = {Position3(250, 250, 0)};
  never.activation.probs = {0.0};
  const std::uint64_t seeds[] = {1, 2};

  SUBCASE("never delivering, N = 120: ESA 60.5") {
    RandomWalkPolicy rw;
    const auto r = evaluate_policy(rw, never, 3, seeds);
    CHECK(r.mean_esa == 60.5);
    CHECK(r.std_esa == 0.0);
    CHECK(r.episode_esa.size() == 6);
    CHECK(r.per_device_age[0] == 60.5);
  }
  SUBCASE("always delivering: ESA 1") {
    NetworkConfig always = never;
    always.activation.probs = {1.0};
    HoveringGreedyPolicy g;
    const auto r = evaluate_policy(g, always, 2, seeds);
    CHECK(r.mean_esa == 1.0);
    CHECK(r.mean_reward == -1.0);
  }
  SUBCASE("fixed trace and deterministic policy: zero spread") {
    NetworkConfig c = never;
    c.devices = {Position3(250, 250, 0), Position3(260, 240, 0)};
    c.horizon = 6;
    c.activation.kind = ActivationKind::fixed_trace;
    c.activation.probs.clear();
    c.activation.trace.resize(2, 6);
    c.activation.trace << 1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 0, 1;
    HoveringGreedyPolicy g;
    const auto r = evaluate_policy(g, c, 5, seeds);
    CHECK(r.std_esa == 0.0);
    std::vector<TraceRow> trace;
    evaluate_policy(g, c, 1, std::span(seeds, 1), &trace);
    CHECK(trace.size() == 6);
    // per-device ages are the row means of the recorded AoI vectors
    double a0 = 0;
    for (const auto& row : trace) a0 += row.aoi[0];
    CHECK(r.per_device_age[0] == doctest::Approx(a0 / 6));
  }
  SUBCASE("nothing to evaluate") {
    RandomWalkPolicy rw;
    CHECK_THROWS(evaluate_policy(rw, never, 0, seeds));
  }
}

TEST_CASE("metrics rows") {
  std::vector<MetricsRow> rows{
      {"exp, quoted", "random_walk", "3", 1, 10.25, -10.5, Eigen::Vector3d(1.5, 2.0, 3.25)},
      {"exp, quoted", "random_walk", "3", 2, 12.0, -12.25, Eigen::Vector3d(2.5, 4.0, 1.75)},
      {"exp, quoted", "hovering_greedy", "3", 1, 1.0 / 3.0, -1.0 / 3.0, std::nullopt},
  };
  std::stringstream csv;
  write_metrics_header(csv);
  for (const auto& r : rows) write_metrics_row(csv, r);
  const auto back = read_metrics_csv(csv);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back[k].experiment == rows[k].experiment);
    CHECK(back[k].policy == rows[k].policy);
    CHECK(back[k].seed == rows[k].seed);
    CHECK(back[k].esa == rows[k].esa);
    CHECK(back[k].mean_reward == rows[k].mean_reward);
    CHECK(back[k].per_device_ages.has_value() == rows[k].per_device_ages.has_value());
  }
  CHECK(*back[1].per_device_ages == *rows[1].per_device_ages);

  const auto points = aggregate(back);
  REQUIRE(points.size() == 2);
  CHECK(points[0].policy == "random_walk");
  CHECK(points[0].count == 2);
  CHECK(points[0].mean_esa == (10.25 + 12.0) / 2);
  CHECK(points[0].std_esa == doctest::Approx(std::sqrt(2 * 0.875 * 0.875)));
  CHECK(points[0].mean_device_age.isApprox(Eigen::Vector3d(2.0, 3.0, 2.5)));
  CHECK(points[1].count == 1);
  CHECK(points[1].std_esa == 0.0);

  std::istringstream bad("header\na,b,c\n");
  CHECK_THROWS(read_metrics_csv(bad));
}

TEST_CASE("sweep points") {
  SUBCASE("device count and per-seed redraw") {
    auto rc = default_config();
    const auto a = network_for_point(rc, "3", 1), b = network_for_point(rc, "3", 2);
    CHECK(a.num_devices() == 3);
    CHECK(a.devices != b.devices);
    CHECK(network_for_point(rc, "3", 1).devices == a.devices);
    CHECK(network_for_point(rc, "8", 1).num_devices() == 8);
  }
  SUBCASE("elements and power") {
    auto rc = resolve_config(ini("[experiment]\nsweep = num_elements_and_power\nsweep_values = 32,64:10\n"));
    const auto a = network_for_point(rc, "32", 1);
    CHECK(a.channel.num_elements == 32);
    CHECK(a.channel.tx_power == doctest::Approx(0.1));
    const auto b = network_for_point(rc, "64:10", 1);
    CHECK(b.channel.num_elements == 64);
    CHECK(b.channel.tx_power == doctest::Approx(0.01));
    CHECK(a.devices == b.devices);
    CHECK_THROWS_AS(network_for_point(rc, "64:10:3", 1), ConfigError);
  }
  SUBCASE("doubling F never shrinks the feasible (device, altitude) set") {
    auto rc = resolve_config(ini("[experiment]\nsweep = num_elements_and_power\n"));
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      long previous = -1;
      for (const char* f : {"16", "32", "64", "128"}) {
        Environment env(network_for_point(rc, f, seed));
        env.reset(seed);
        long count = 0;
        for (double h : env.reachable_altitudes())
          count += (env.aligned_snrs_at(h).array() >= env.config().channel.snr_threshold).count();
        CHECK(count >= previous);
        previous = count;
      }
    }
  }
  SUBCASE("explicit layouts cannot sweep the device count") {
    auto rc = resolve_config(ini("[network]\ndevices = 250,250;260,260\n"));
    CHECK_THROWS_AS(network_for_point(rc, "3", 1), ConfigError);
  }
}

TEST_CASE("random walk ages grow with the number of devices") {
  auto rc = default_config();
  double esa3 = 0, esa5 = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const std::uint64_t s[] = {seed};
    RandomWalkPolicy rw;
    esa3 += evaluate_policy(rw, network_for_point(rc, "3", seed), 5, s).mean_esa;
    esa5 += evaluate_policy(rw, network_for_point(rc, "5", seed), 5, s).mean_esa;
  }
  CHECK(esa5 >= esa3);
}

TEST_CASE("experiment runs") {
  SUBCASE("baselines: rows, plot data, resume") {
    const auto dir = scratch("sweep");
    auto rc = resolve_config(ini("[network]\nhorizon = 30\n[experiment]\nname = small\nsweep_values = 2,3\n"
                                 "seeds = 1,2\nepisodes_per_point = 2\npolicies = random_walk,hovering_greedy\n"),
                             std::vector<std::string>{"experiment.output_dir=" + dir.string()});
    const auto first = run_experiment(rc);
    CHECK(first.computed == 8);
    CHECK(first.skipped == 0);
    CHECK(count_lines(dir / "metrics.csv") == 9);
    CHECK(count_lines(dir / "plot_small.csv") == 5);

    // plot means recompute from the rows
    std::ifstream plot(dir / "plot_small.csv");
    std::string line;
    std::getline(plot, line);
    const auto points = aggregate(first.rows);
    for (const auto& p : points) {
      double sum = 0;
      int n = 0;
      for (const auto& r : first.rows)
        if (r.policy == p.policy && r.sweep_value == p.sweep_value) {
          sum += r.esa;
          ++n;
        }
      CHECK(p.mean_esa == doctest::Approx(sum / n).epsilon(1e-15));
    }

    const auto again = run_experiment(rc);
    CHECK(again.computed == 0);
    CHECK(again.skipped == 8);
    CHECK(count_lines(dir / "metrics.csv") == 9);

    // drop the last two rows: only they are recomputed, bit for bit
    std::vector<std::string> lines;
    {
      std::ifstream in(dir / "metrics.csv");
      for (std::string l; std::getline(in, l);) lines.push_back(l);
    }
    {
      std::ofstream out(dir / "metrics.csv");
      for (std::size_t k = 0; k + 2 < lines.size(); ++k) out << lines[k] << '\n';
    }
    const auto resumed = run_experiment(rc);
    CHECK(resumed.computed == 2);
    CHECK(resumed.skipped == 6);
    std::vector<std::string> after;
    {
      std::ifstream in(dir / "metrics.csv");
      for (std::string l; std::getline(in, l);) after.push_back(l);
    }
    CHECK(after == lines);

    // several workers, same rows
    const auto dir2 = scratch("sweep_jobs");
    auto rc2 = rc;
    rc2.experiment.output_dir = dir2;
    rc2.experiment.jobs = 3;
    const auto parallel = run_experiment(rc2);
    REQUIRE(parallel.rows.size() == first.rows.size());
    for (std::size_t k = 0; k < first.rows.size(); ++k) {
      CHECK(parallel.rows[k].esa == first.rows[k].esa);
      CHECK(parallel.rows[k].policy == first.rows[k].policy);
    }
  }
  SUBCASE("per-device ages file") {
    const auto dir = scratch("ages");
    auto rc = resolve_config(ini("[network]\nhorizon = 20\n[experiment]\nname = ages\nsweep = per_device_age\n"
                                 "sweep_values = 4\nepisodes_per_point = 1\npolicies = random_walk\n"),
                             std::vector<std::string>{"experiment.output_dir=" + dir.string()});
    run_experiment(rc);
    CHECK(count_lines(dir / "plot_ages_per_device.csv") == 5);
  }
  SUBCASE("convergence curve with a monotone sample counter") {
    const auto dir = scratch("curve");
    auto rc = resolve_config(
        ini("[network]\nnum_devices = 2\nhorizon = 20\n[ppo]\ntotal_samples = 120\nrollout_length = 40\n"
            "minibatch_size = 20\nhidden = 8\n[experiment]\nname = conv\nsweep = convergence\nsweep_values = base\n"
            "episodes_per_point = 1\npolicies = trained_ppo\n"),
        std::vector<std::string>{"experiment.output_dir=" + dir.string()});
    run_experiment(rc);
    std::ifstream in(dir / "curve_base_seed1.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line.starts_with("iteration,samples,"));
    long last = 0;
    int rows = 0;
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      const long samples = std::stol(line.substr(comma + 1));
      CHECK(samples > last);
      last = samples;
      ++rows;
    }
    CHECK(rows == 3);
    CHECK(last == 120);
  }
}
