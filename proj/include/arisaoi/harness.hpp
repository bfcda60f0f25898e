#pragma once

// Config ingestion, policy evaluation and sweep orchestration.
//
// Config files are INI with [network], [ppo] and [experiment] sections; see
// README.md for the key list and units. Every key has a default, so an empty
// file resolves to the reference scenario.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "arisaoi/baselines.hpp"
#include "arisaoi/config.hpp"
#include "arisaoi/env.hpp"
#include "arisaoi/ppo.hpp"

namespace arisaoi {

enum class SweepKind { convergence, num_devices, per_device_age, num_elements_and_power };

std::string to_string(SweepKind kind);

struct ExperimentSpec {
  std::string name = "experiment";
  SweepKind sweep = SweepKind::num_devices;
  std::vector<std::string> sweep_values{"3", "5", "8"};
  int episodes_per_point = 50;
  std::vector<std::uint64_t> seeds{1};
  std::vector<PolicyKind> policies{PolicyKind::random_walk, PolicyKind::hovering_greedy,
                                   PolicyKind::trained_ppo};
  std::filesystem::path output_dir = "out";
  int jobs = 1;
  bool stochastic_eval = false;
  int dp_aoi_cap = 1 << 20;
};

struct ResolvedConfig {
  NetworkConfig network;
  PpoConfig ppo;
  ExperimentSpec experiment;
  boost::property_tree::ptree tree;  // every key, defaults filled in, original units
};

/// Reads an INI file and applies `section.key=value` overrides on top.
ResolvedConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});
ResolvedConfig resolve_config(const boost::property_tree::ptree& user,
                              std::span<const std::string> overrides = {});
ResolvedConfig default_config();

/// INI dump of the resolved tree; loading it reproduces the same config.
void dump_config(const ResolvedConfig& config, std::ostream& out);

/// Network of one sweep point. Random layouts and activation probabilities
/// are redrawn per seed; the sweep value sets M, or "F[:P_dBm]" for
/// num_elements_and_power.
NetworkConfig network_for_point(const ResolvedConfig& config, const std::string& sweep_value,
                                std::uint64_t seed);

/// Seed of evaluation episode `episode` under experiment seed `seed`.
std::uint64_t evaluation_episode_seed(std::uint64_t seed, int episode);

struct EvaluationResult {
  double mean_esa = 0.0;
  double std_esa = 0.0;  // sample standard deviation across episodes
  double mean_reward = 0.0;
  Eigen::VectorXd per_device_age;  // (1/N) sum_n A_i[n], averaged over episodes
  std::vector<double> episode_esa;
};

EvaluationResult evaluate_policy(Policy& policy, const NetworkConfig& network, int episodes,
                                 std::span<const std::uint64_t> seeds,
                                 std::vector<TraceRow>* trace = nullptr);

/// Baseline instance for a network; trained_ppo is built via `train` instead.
std::unique_ptr<Policy> make_baseline(PolicyKind kind, const NetworkConfig& network, int dp_aoi_cap);

struct MetricsRow {
  std::string experiment;
  std::string policy;
  std::string sweep_value;
  std::uint64_t seed = 0;
  double esa = 0.0;
  double mean_reward = 0.0;
  std::optional<Eigen::VectorXd> per_device_ages;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

struct PlotPoint {
  std::string policy;
  std::string sweep_value;
  std::size_t count = 0;
  double mean_esa = 0.0;
  double std_esa = 0.0;
  Eigen::VectorXd mean_device_age;
};

/// Mean and sample std of ESA per (policy, sweep value), in first-seen order.
std::vector<PlotPoint> aggregate(std::span<const MetricsRow> rows);

struct ExperimentOutcome {
  std::vector<MetricsRow> rows;  // includes rows resumed from an existing metrics file
  std::size_t computed = 0;
  std::size_t skipped = 0;
};

/// Runs every (sweep value, seed, policy) point, appending rows to
/// `<output_dir>/metrics.csv` as they finish and writing plot-data files at
/// the end. Points already present in metrics.csv are skipped.
ExperimentOutcome run_experiment(const ResolvedConfig& config, std::ostream* log = nullptr);

}  // namespace arisaoi
