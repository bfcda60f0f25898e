// arisaoi: train / evaluate / sweep / oracle / dump-config.
// Exit codes: 0 ok, 1 config or usage error, 2 runtime abort.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arisaoi/baselines.hpp"
#include "arisaoi/harness.hpp"
#include "arisaoi/ppo.hpp"

using namespace arisaoi;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeAbort = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string policy = "trained_ppo";
  std::string checkpoint;
  std::vector<std::string> overrides;
};

ResolvedConfig resolve(const Options& o) {
  std::vector<std::string> overrides = o.overrides;
  if (!o.out.empty()) overrides.push_back("experiment.output_dir=" + o.out);
  if (o.seed) overrides.push_back("experiment.seeds=" + std::to_string(*o.seed));
  return o.config.empty() ? resolve_config({}, overrides) : load_config(o.config, overrides);
}

fs::path output_dir(const ResolvedConfig& rc) {
  fs::create_directories(rc.experiment.output_dir);
  return rc.experiment.output_dir;
}

std::uint64_t run_seed(const Options& o, const ResolvedConfig& rc) {
  return o.seed ? *o.seed : rc.experiment.seeds.front();
}

int cmd_train(const Options& o) {
  const auto rc = resolve(o);
  const auto dir = output_dir(rc);
  PpoConfig ppo = rc.ppo;
  if (o.seed) ppo.seed = *o.seed;
  std::ofstream curve(dir / "training.csv");
  write_training_header(curve);
  const int iterations = training_iterations(ppo);
  const auto result = train(ppo, rc.network, [&](const TrainingRow& row) {
    write_training_row(curve, row);
    curve.flush();
    if ((row.iteration + 1) % 20 == 0 || row.iteration + 1 == iterations)
      std::cerr << "iteration " << row.iteration + 1 << '/' << iterations << " esa " << row.esa << '\n';
  });
  const auto path = o.checkpoint.empty() ? dir / "checkpoint.txt" : fs::path(o.checkpoint);
  save_checkpoint(path, result.checkpoint);
  std::cout << "checkpoint " << path.string() << '\n';
  return kOk;
}

int cmd_evaluate(const Options& o) {
  const auto rc = resolve(o);
  const auto dir = output_dir(rc);
  PolicyKind kind;
  try {
    kind = parse_policy_kind(o.policy);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("--policy", e.what());
  }
  std::unique_ptr<Policy> policy;
  if (kind == PolicyKind::trained_ppo) {
    const auto path = o.checkpoint.empty() ? dir / "checkpoint.txt" : fs::path(o.checkpoint);
    policy = std::make_unique<PpoPolicy>(load_checkpoint(path), rc.experiment.stochastic_eval);
  } else {
    policy = make_baseline(kind, rc.network, rc.experiment.dp_aoi_cap);
  }
  const std::uint64_t seeds[] = {run_seed(o, rc)};
  std::vector<TraceRow> trace;
  const auto result = evaluate_policy(*policy, rc.network, rc.experiment.episodes_per_point, seeds, &trace);
  std::ofstream trace_out(dir / ("trace_" + policy->name() + ".csv"));
  write_trace_csv(trace_out, trace);

  MetricsRow row{rc.experiment.name, policy->name(), "", seeds[0], result.mean_esa, result.mean_reward,
                 result.per_device_age};
  write_metrics_header(std::cout);
  write_metrics_row(std::cout, row);
  return kOk;
}

int cmd_sweep(const Options& o) {
  const auto rc = resolve(o);
  const auto outcome = run_experiment(rc, &std::cerr);
  std::cout << "computed " << outcome.computed << " points, skipped " << outcome.skipped << " already in "
            << (rc.experiment.output_dir / "metrics.csv").string() << '\n';
  return kOk;
}

int cmd_oracle(const Options& o) {
  const auto rc = resolve(o);
  if (rc.network.activation.kind != ActivationKind::fixed_trace)
    throw ConfigError("network.activation", "the oracle needs activation = fixed_trace");
  const auto dir = output_dir(rc);
  DpOptions options;
  options.aoi_cap = rc.experiment.dp_aoi_cap;
  options.episode_seed = run_seed(o, rc);
  const auto start = std::chrono::steady_clock::now();
  const auto result = dp_oracle(rc.network, options);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  std::ofstream csv(dir / "oracle.csv");
  csv << "instance_id,optimal_esa,runtime_ms\n" << rc.experiment.name << ',' << std::setprecision(17)
      << result.optimal_esa << ',' << ms << '\n';

  Environment env(rc.network);
  env.reset(options.episode_seed);
  std::vector<TraceRow> trace;
  for (const auto& action : result.actions) {
    const EnvState before = env.state();
    trace.push_back(make_trace_row(before, action, env.step(action)));
  }
  std::ofstream trace_out(dir / "trace_dp_oracle.csv");
  write_trace_csv(trace_out, trace);
  std::cout << "optimal_esa " << std::setprecision(17) << result.optimal_esa << " (" << result.states_visited
            << " states, " << ms << " ms)\n";
  return kOk;
}

int cmd_dump_config(const Options& o) {
  dump_config(resolve(o), std::cout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aerial-RIS age-of-information scheduling: training, baselines and sweeps"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "experiment seed");
    sub->add_option("--out", o.out, "output directory (experiment.output_dir)");
    sub->add_option("--override", o.overrides, "section.key=value, repeatable")->take_all();
  };
  auto* train_cmd = app.add_subcommand("train", "train PPO on the configured network");
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate one policy and write its trace");
  auto* sweep_cmd = app.add_subcommand("sweep", "run the configured experiment sweep (resumable)");
  auto* oracle_cmd = app.add_subcommand("oracle", "exact optimum for a fixed activation trace");
  auto* dump_cmd = app.add_subcommand("dump-config", "print the fully resolved config");
  for (auto* sub : {train_cmd, eval_cmd, sweep_cmd, oracle_cmd, dump_cmd}) add_common(sub);
  for (auto* sub : {train_cmd, eval_cmd})
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/checkpoint.txt)");
  eval_cmd->add_option("--policy", o.policy, "random_walk | hovering_greedy | dp_oracle | trained_ppo");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  for (auto* sub : {train_cmd, eval_cmd, sweep_cmd, oracle_cmd, dump_cmd})
    if (sub->parsed() && sub->count("--seed")) o.seed = seed;

  try {
    if (train_cmd->parsed()) return cmd_train(o);
    if (eval_cmd->parsed()) return cmd_evaluate(o);
    if (sweep_cmd->parsed()) return cmd_sweep(o);
    if (oracle_cmd->parsed()) return cmd_oracle(o);
    return cmd_dump_config(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return kRuntimeAbort;
  }
}
