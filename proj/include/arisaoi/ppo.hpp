#pragma once

// Proximal policy optimization for the joint (schedule, altitude) action:
// rollouts under a frozen snapshot, GAE, clipped surrogate, Adam ascent.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "arisaoi/env.hpp"
#include "arisaoi/nn.hpp"
#include "arisaoi/policy.hpp"

namespace arisaoi {

struct PpoConfig {
  int rollout_length = 240;
  int epochs_per_iter = 10;
  int minibatch_size = 60;
  double clip_epsilon = 0.2;
  double discount = 0.9;
  double gae_lambda = 0.95;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 1e-3;
  std::int64_t total_samples = 48000;
  bool advantage_normalization = true;
  std::vector<Eigen::Index> hidden{64, 64, 64};
  // Rewards are multiplied by this before GAE; only the critic's scale changes.
  double reward_scale = 0.01;
  // Global L2 clip on each minibatch gradient; <= 0 disables.
  double max_grad_norm = 0.5;
  int num_envs = 1;
  // Standardize policy inputs with running moments of past rollouts.
  bool normalize_observations = true;
  std::uint64_t seed = 1;
};

/// Throws ConfigError naming the `ppo.*` key on an invalid value.
void validate(const PpoConfig& config);

inline constexpr std::size_t kScheduleHead = 0;
inline constexpr std::size_t kAltitudeHead = 1;
inline constexpr std::size_t kValueHead = 2;

/// Shared tanh trunk with schedule logits (M), altitude logits (3) and a value head.
MlpSpec actor_critic_spec(std::size_t num_devices, const std::vector<Eigen::Index>& hidden);

struct Trajectory {
  struct Segment {
    Eigen::Index begin = 0;
    Eigen::Index length = 0;
    double bootstrap_value = 0.0;
  };

  Eigen::MatrixXd observations;    // raw observe() output, observation_size x T
  Eigen::MatrixXd features;        // network inputs (observations after the input transform)
  Eigen::VectorXi schedule;
  Eigen::VectorXi altitude;
  Eigen::VectorXd log_probs;       // joint, under the snapshot that acted
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  std::vector<std::uint8_t> dones;
  std::vector<Segment> segments;   // one per worker, in worker order
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  std::vector<double> completed_esa;
  std::vector<double> completed_returns;

  Eigen::Index size() const { return rewards.size(); }
};

/// One environment plus the RNG that drives its action sampling and episode seeds.
struct RolloutWorker {
  RolloutWorker(NetworkConfig config, std::uint64_t seed) : env(std::move(config)), rng(seed) {}
  Environment env;
  std::mt19937_64 rng;
  double episode_return = 0.0;
};

/// Per-feature running mean/variance (parallel-merge form).
struct RunningMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd m2;
  double count = 0.0;

  void update(const Eigen::MatrixXd& columns);
  Eigen::VectorXd variance() const;
  /// Standardizing transform; `floor` bounds the variance from below.
  InputTransform transform(double floor = 1e-4, double clip = 5.0) const;
};

/// Collects `length` transitions split across workers; episodes auto-reset.
Trajectory collect_rollout(std::span<RolloutWorker> workers, const Mlp<double>& net,
                           const Eigen::VectorXd& snapshot, int length,
                           const InputTransform& input = {});

/// GAE(gamma, lambda) over one contiguous segment. Returns (advantages, returns).
std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_gae(const Eigen::VectorXd& rewards,
                                                        const Eigen::VectorXd& values,
                                                        std::span<const std::uint8_t> dones,
                                                        double bootstrap_value, double discount,
                                                        double lambda);

/// Fills advantages/returns of every segment with rewards scaled by `reward_scale`.
void finalize_trajectory(Trajectory& trajectory, const PpoConfig& config);

/// Zero mean, unit (population) standard deviation.
Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& advantages);

/// min(r A, clip(r, 1 - eps, 1 + eps) A) with r = exp(new - old).
double clip_objective(double new_log_prob, double old_log_prob, double advantage, double epsilon);

struct ObjectiveBreakdown {
  double objective = 0.0;         // surrogate - value_coef * value_loss + entropy_coef * entropy
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Composite objective on `indices` of the trajectory using its stored
/// advantages; writes the parameter gradient to `grad` when non-null.
ObjectiveBreakdown composite_objective(const Mlp<double>& net, const Eigen::VectorXd& params,
                                       const Trajectory& batch, std::span<const Eigen::Index> indices,
                                       const PpoConfig& config, Eigen::VectorXd* grad);

struct UpdateMetrics {
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

/// Epoch-wise minibatch Adam ascent on a finalized trajectory.
UpdateMetrics ppo_update(const Mlp<double>& net, Eigen::VectorXd& params, AdamState<double>& adam,
                         Trajectory& trajectory, const PpoConfig& config, std::mt19937_64& rng);

struct TrainingRow {
  int iteration = 0;
  std::int64_t samples = 0;
  double mean_reward = 0.0;
  double esa = 0.0;  // NaN when no episode finished during the iteration
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainingRow> curve;
};

int training_iterations(const PpoConfig& config);

TrainResult train(const PpoConfig& config, const NetworkConfig& network,
                  const std::function<void(const TrainingRow&)>& on_iteration = {});

void write_training_header(std::ostream& out);
void write_training_row(std::ostream& out, const TrainingRow& row);

/// Acts with a trained actor-critic; deterministic (per-head argmax) unless `stochastic`.
class PpoPolicy : public Policy {
 public:
  explicit PpoPolicy(Checkpoint checkpoint, bool stochastic = false);
  std::string name() const override { return "trained_ppo"; }
  void begin_episode(const Environment& env, std::uint64_t episode_seed) override;
  Action act(const Environment& env) override;

 private:
  Checkpoint checkpoint_;
  Mlp<double> net_;
  bool stochastic_;
  std::mt19937_64 rng_;
};

}  // namespace arisaoi
