#include "arisaoi/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

namespace arisaoi {

void validate(const PpoConfig& c) {
  if (c.rollout_length < 1) throw ConfigError("ppo.rollout_length", "must be >= 1");
  if (c.epochs_per_iter < 1) throw ConfigError("ppo.epochs", "must be >= 1");
  if (c.minibatch_size < 1) throw ConfigError("ppo.minibatch_size", "must be >= 1");
  if (!(c.clip_epsilon > 0 && c.clip_epsilon < 1)) throw ConfigError("ppo.clip_epsilon", "must lie in (0, 1)");
  if (!(c.discount > 0 && c.discount <= 1)) throw ConfigError("ppo.discount", "must lie in (0, 1]");
  if (!(c.gae_lambda >= 0 && c.gae_lambda <= 1)) throw ConfigError("ppo.gae_lambda", "must lie in [0, 1]");
  if (!(c.value_coef >= 0)) throw ConfigError("ppo.value_coef", "must be non-negative");
  if (!(c.entropy_coef >= 0)) throw ConfigError("ppo.entropy_coef", "must be non-negative");
  if (!(c.learning_rate > 0)) throw ConfigError("ppo.learning_rate", "must be positive");
  if (c.total_samples < 1) throw ConfigError("ppo.total_samples", "must be >= 1");
  if (c.hidden.empty()) throw ConfigError("ppo.hidden", "at least one hidden layer required");
  for (auto w : c.hidden)
    if (w < 1) throw ConfigError("ppo.hidden", "widths must be >= 1");
  if (!(c.reward_scale > 0)) throw ConfigError("ppo.reward_scale", "must be positive");
  if (c.num_envs < 1 || c.num_envs > c.rollout_length)
    throw ConfigError("ppo.num_envs", "must lie in [1, rollout_length]");
}

MlpSpec actor_critic_spec(std::size_t num_devices, const std::vector<Eigen::Index>& hidden) {
  MlpSpec spec;
  spec.input_dim = observation_size(num_devices);
  spec.hidden = hidden;
  spec.activation = Activation::tanh;
  spec.heads = {{"schedule", static_cast<Eigen::Index>(num_devices), HeadKind::categorical_logits},
                {"altitude", kNumAltitudeMoves, HeadKind::categorical_logits},
                {"value", 1, HeadKind::scalar}};
  return spec;
}

void RunningMoments::update(const Eigen::MatrixXd& columns) {
  const auto n = static_cast<double>(columns.cols());
  if (n == 0) return;
  const Eigen::VectorXd batch_mean = columns.rowwise().mean();
  const Eigen::VectorXd batch_m2 = (columns.colwise() - batch_mean).rowwise().squaredNorm();
  if (count == 0) {
    mean = batch_mean;
    m2 = batch_m2;
    count = n;
    return;
  }
  if (batch_mean.size() != mean.size()) throw ShapeError("RunningMoments: dimension changed");
  const double total = count + n;
  const Eigen::VectorXd delta = batch_mean - mean;
  mean += delta * (n / total);
  m2 += batch_m2 + delta.cwiseAbs2() * (count * n / total);
  count = total;
}

Eigen::VectorXd RunningMoments::variance() const {
  if (count == 0) return {};
  return m2 / count;
}

InputTransform RunningMoments::transform(double floor, double clip) const {
  InputTransform t;
  if (count == 0) return t;
  t.shift = mean;
  t.scale = (variance().array() + floor).rsqrt().matrix();
  t.clip = clip;
  return t;
}

Trajectory collect_rollout(std::span<RolloutWorker> workers, const Mlp<double>& net,
                           const Eigen::VectorXd& snapshot, int length, const InputTransform& input) {
  if (workers.empty()) throw std::invalid_argument("collect_rollout: no workers");
  if (length < 1) throw std::invalid_argument("collect_rollout: length must be >= 1");
  const auto obs_dim = net.spec().input_dim;

  Trajectory traj;
  traj.observations.resize(obs_dim, length);
  traj.features.resize(obs_dim, length);
  traj.schedule.resize(length);
  traj.altitude.resize(length);
  traj.log_probs.resize(length);
  traj.rewards.resize(length);
  traj.values.resize(length);
  traj.dones.assign(static_cast<std::size_t>(length), 0);

  const auto num_workers = static_cast<int>(workers.size());
  Eigen::Index t = 0;
  for (int w = 0; w < num_workers; ++w) {
    auto& worker = workers[static_cast<std::size_t>(w)];
    auto& env = worker.env;
    const int steps = length / num_workers + (w < length % num_workers ? 1 : 0);
    Trajectory::Segment segment{t, steps, 0.0};
    for (int s = 0; s < steps; ++s, ++t) {
      if (!env.started() || env.done()) {
        env.reset(worker.rng());
        worker.episode_return = 0.0;
      }
      const Eigen::VectorXd obs = observe(env.state(), env.config());
      const Eigen::VectorXd x = input.apply(obs);
      const auto outs = net.forward(snapshot, x);
      const auto sched = categorical_sample(outs[kScheduleHead].col(0), worker.rng);
      const auto alt = categorical_sample(outs[kAltitudeHead].col(0), worker.rng);
      const Action action{static_cast<std::size_t>(sched.index), static_cast<AltitudeMove>(alt.index)};
      const auto outcome = env.step(action);

      traj.observations.col(t) = obs;
      traj.features.col(t) = x;
      traj.schedule[t] = static_cast<int>(sched.index);
      traj.altitude[t] = static_cast<int>(alt.index);
      traj.log_probs[t] = sched.log_prob + alt.log_prob;
      traj.rewards[t] = outcome.reward;
      traj.values[t] = outs[kValueHead](0, 0);
      traj.dones[static_cast<std::size_t>(t)] = outcome.done ? 1 : 0;
      worker.episode_return += outcome.reward;
      if (outcome.done) {
        traj.completed_esa.push_back(env.episode_esa());
        traj.completed_returns.push_back(worker.episode_return);
      }
    }
    if (!env.done()) {
      const auto outs = net.forward(snapshot, input.apply(observe(env.state(), env.config())));
      segment.bootstrap_value = outs[kValueHead](0, 0);
    }
    traj.segments.push_back(segment);
  }
  return traj;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> compute_gae(const Eigen::VectorXd& rewards,
                                                        const Eigen::VectorXd& values,
                                                        std::span<const std::uint8_t> dones,
                                                        double bootstrap_value, double discount,
                                                        double lambda) {
  const auto n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n)
    throw std::invalid_argument("compute_gae: rewards, values and dones differ in length");
  Eigen::VectorXd advantages(n);
  double next_value = bootstrap_value;
  double next_advantage = 0.0;
  for (Eigen::Index t = n; t-- > 0;) {
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + discount * next_value * live - values[t];
    advantages[t] = delta + discount * lambda * live * next_advantage;
    next_value = values[t];
    next_advantage = advantages[t];
  }
  Eigen::VectorXd returns = advantages + values;
  return {std::move(advantages), std::move(returns)};
}

void finalize_trajectory(Trajectory& traj, const PpoConfig& config) {
  traj.advantages.resize(traj.size());
  traj.returns.resize(traj.size());
  for (const auto& seg : traj.segments) {
    const Eigen::VectorXd rewards = traj.rewards.segment(seg.begin, seg.length) * config.reward_scale;
    const Eigen::VectorXd values = traj.values.segment(seg.begin, seg.length);
    const std::span<const std::uint8_t> dones(traj.dones.data() + seg.begin,
                                              static_cast<std::size_t>(seg.length));
    auto [adv, ret] = compute_gae(rewards, values, dones, seg.bootstrap_value, config.discount,
                                  config.gae_lambda);
    traj.advantages.segment(seg.begin, seg.length) = adv;
    traj.returns.segment(seg.begin, seg.length) = ret;
  }
  if (!traj.advantages.allFinite()) throw NonFiniteError("finalize_trajectory: non-finite advantage");
}

Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& advantages) {
  if (advantages.size() == 0) return advantages;
  const double mean = advantages.mean();
  Eigen::VectorXd centered = advantages.array() - mean;
  const double stddev = std::sqrt(centered.squaredNorm() / static_cast<double>(advantages.size()));
  if (stddev < 1e-12) return centered;
  return centered / stddev;
}

double clip_objective(double new_log_prob, double old_log_prob, double advantage, double epsilon) {
  const double ratio = std::exp(new_log_prob - old_log_prob);
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

ObjectiveBreakdown composite_objective(const Mlp<double>& net, const Eigen::VectorXd& params,
                                       const Trajectory& batch, std::span<const Eigen::Index> indices,
                                       const PpoConfig& config, Eigen::VectorXd* grad) {
  const auto b = static_cast<Eigen::Index>(indices.size());
  if (b == 0) throw std::invalid_argument("composite_objective: empty minibatch");
  const double inv_b = 1.0 / static_cast<double>(b);
  const double eps = config.clip_epsilon;

  Eigen::MatrixXd inputs(batch.features.rows(), b);
  for (Eigen::Index k = 0; k < b; ++k) inputs.col(k) = batch.features.col(indices[static_cast<std::size_t>(k)]);

  Mlp<double>::Tape tape;
  const auto outs = net.forward(params, inputs, &tape);
  const auto& sched_logits = outs[kScheduleHead];
  const auto& alt_logits = outs[kAltitudeHead];

  std::vector<Eigen::MatrixXd> head_grads{Eigen::MatrixXd::Zero(sched_logits.rows(), b),
                                          Eigen::MatrixXd::Zero(alt_logits.rows(), b),
                                          Eigen::MatrixXd::Zero(1, b)};
  ObjectiveBreakdown out;
  for (Eigen::Index k = 0; k < b; ++k) {
    const Eigen::Index t = indices[static_cast<std::size_t>(k)];
    const Eigen::VectorXd lp_s = log_softmax(sched_logits.col(k));
    const Eigen::VectorXd lp_a = log_softmax(alt_logits.col(k));
    const Eigen::VectorXd p_s = lp_s.array().exp();
    const Eigen::VectorXd p_a = lp_a.array().exp();
    const int a_s = batch.schedule[t];
    const int a_a = batch.altitude[t];

    const double log_ratio = lp_s[a_s] + lp_a[a_a] - batch.log_probs[t];
    const double ratio = std::exp(log_ratio);
    const double adv = batch.advantages[t];
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
    out.surrogate += std::min(unclipped, clipped);
    out.clip_fraction += std::abs(ratio - 1.0) > eps ? 1.0 : 0.0;
    out.approx_kl += (ratio - 1.0) - log_ratio;

    const double h_s = -(p_s.array() * lp_s.array()).sum();
    const double h_a = -(p_a.array() * lp_a.array()).sum();
    out.entropy += h_s + h_a;

    const double value_error = outs[kValueHead](0, k) - batch.returns[t];
    out.value_loss += value_error * value_error;

    if (grad) {
      // d surrogate / d log pi: ratio * A unless the clipped branch is the (strict) minimum
      const double coef = unclipped <= clipped ? unclipped * inv_b : 0.0;
      auto gs = head_grads[kScheduleHead].col(k);
      gs = -coef * p_s;
      gs[a_s] += coef;
      gs.array() -= config.entropy_coef * inv_b * p_s.array() * (lp_s.array() + h_s);
      auto ga = head_grads[kAltitudeHead].col(k);
      ga = -coef * p_a;
      ga[a_a] += coef;
      ga.array() -= config.entropy_coef * inv_b * p_a.array() * (lp_a.array() + h_a);
      head_grads[kValueHead](0, k) = -config.value_coef * 2.0 * value_error * inv_b;
    }
  }
  out.surrogate *= inv_b;
  out.clip_fraction *= inv_b;
  out.approx_kl *= inv_b;
  out.entropy *= inv_b;
  out.value_loss *= inv_b;
  out.objective = out.surrogate - config.value_coef * out.value_loss + config.entropy_coef * out.entropy;
  if (!std::isfinite(out.objective)) throw NonFiniteError("composite_objective: non-finite loss");
  if (grad) *grad = net.backward(params, tape, head_grads);
  return out;
}

UpdateMetrics ppo_update(const Mlp<double>& net, Eigen::VectorXd& params, AdamState<double>& adam,
                         Trajectory& traj, const PpoConfig& config, std::mt19937_64& rng) {
  if (traj.advantages.size() != traj.size() || traj.returns.size() != traj.size())
    throw std::logic_error("ppo_update: trajectory not finalized");
  Trajectory working = traj;
  if (config.advantage_normalization) working.advantages = normalize_advantages(traj.advantages);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(traj.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto mb = static_cast<std::size_t>(config.minibatch_size);

  UpdateMetrics metrics;
  int batches = 0;
  Eigen::VectorXd grad;
  for (int epoch = 0; epoch < config.epochs_per_iter; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::size_t len = std::min(mb, order.size() - start);
      const std::span<const Eigen::Index> idx(order.data() + start, len);
      const auto parts = composite_objective(net, params, working, idx, config, &grad);
      if (config.max_grad_norm > 0) {
        const double norm = grad.norm();
        if (norm > config.max_grad_norm) grad *= config.max_grad_norm / norm;
      }
      adam_step(adam, params, grad, /*maximize=*/true);
      metrics.clip_fraction += parts.clip_fraction;
      metrics.approx_kl += parts.approx_kl;
      metrics.policy_loss += -parts.surrogate;
      metrics.value_loss += parts.value_loss;
      metrics.entropy += parts.entropy;
      ++batches;
    }
  }
  const double inv = 1.0 / static_cast<double>(batches);
  metrics.clip_fraction *= inv;
  metrics.approx_kl *= inv;
  metrics.policy_loss *= inv;
  metrics.value_loss *= inv;
  metrics.entropy *= inv;
  return metrics;
}

int training_iterations(const PpoConfig& config) {
  return static_cast<int>((config.total_samples + config.rollout_length - 1) / config.rollout_length);
}

TrainResult train(const PpoConfig& config, const NetworkConfig& network,
                  const std::function<void(const TrainingRow&)>& on_iteration) {
  validate(config);
  validate(network);
  const Mlp<double> net(actor_critic_spec(network.num_devices(), config.hidden));
  const std::uint64_t init_seed = derive_seed(config.seed, 1);
  Eigen::VectorXd params = net.initialize(init_seed);
  auto adam = AdamState<double>::zeros(net.parameter_count(), config.learning_rate);
  std::mt19937_64 update_rng(derive_seed(config.seed, 2));

  std::vector<RolloutWorker> workers;
  workers.reserve(static_cast<std::size_t>(config.num_envs));
  for (int w = 0; w < config.num_envs; ++w)
    workers.emplace_back(network, derive_seed(config.seed, 100 + static_cast<std::uint64_t>(w)));

  TrainResult result;
  RunningMoments moments;
  InputTransform input;
  const int iterations = training_iterations(config);
  std::int64_t samples = 0;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd snapshot = params;
    Trajectory traj = collect_rollout(workers, net, snapshot, config.rollout_length, input);
    finalize_trajectory(traj, config);
    const auto metrics = ppo_update(net, params, adam, traj, config, update_rng);
    samples += traj.size();
    // The next rollout and the final checkpoint see the refreshed statistics.
    if (config.normalize_observations) {
      moments.update(traj.observations);
      input = moments.transform();
    }

    TrainingRow row;
    row.iteration = it;
    row.samples = samples;
    row.mean_reward = traj.rewards.mean();
    row.esa = traj.completed_esa.empty()
                  ? std::numeric_limits<double>::quiet_NaN()
                  : std::accumulate(traj.completed_esa.begin(), traj.completed_esa.end(), 0.0) /
                        static_cast<double>(traj.completed_esa.size());
    row.clip_fraction = metrics.clip_fraction;
    row.approx_kl = metrics.approx_kl;
    row.policy_loss = metrics.policy_loss;
    row.value_loss = metrics.value_loss;
    row.entropy = metrics.entropy;
    result.curve.push_back(row);
    if (on_iteration) on_iteration(row);
  }
  result.checkpoint = Checkpoint{net.spec(), params, input, config.seed, adam.step};
  return result;
}

void write_training_header(std::ostream& out) {
  out << "iteration,samples,mean_reward,esa,clip_fraction,approx_kl,policy_loss,value_loss,entropy\n";
}

void write_training_row(std::ostream& out, const TrainingRow& r) {
  const auto precision = out.precision(17);
  out << r.iteration << ',' << r.samples << ',' << r.mean_reward << ',' << r.esa << ','
      << r.clip_fraction << ',' << r.approx_kl << ',' << r.policy_loss << ',' << r.value_loss << ','
      << r.entropy << '\n';
  out.precision(precision);
}

PpoPolicy::PpoPolicy(Checkpoint checkpoint, bool stochastic)
    : checkpoint_(std::move(checkpoint)), net_(checkpoint_.spec), stochastic_(stochastic) {
  if (checkpoint_.params.size() != net_.parameter_count())
    throw ShapeError("PpoPolicy: checkpoint parameters do not match its spec");
  if (checkpoint_.spec.heads.size() != 3) throw ShapeError("PpoPolicy: expected actor-critic heads");
}

void PpoPolicy::begin_episode(const Environment& env, std::uint64_t episode_seed) {
  if (observation_size(env.num_devices()) != net_.spec().input_dim ||
      static_cast<Eigen::Index>(env.num_devices()) != net_.spec().heads[kScheduleHead].output_dim)
    throw ShapeError("PpoPolicy: network does not match the number of devices");
  rng_.seed(derive_seed(episode_seed, 0x770));
}

Action PpoPolicy::act(const Environment& env) {
  const auto outs = net_.forward(checkpoint_.params, checkpoint_.input.apply(observe(env.state(), env.config())));
  Eigen::Index s = 0, a = 0;
  if (stochastic_) {
    s = categorical_sample(outs[kScheduleHead].col(0), rng_).index;
    a = categorical_sample(outs[kAltitudeHead].col(0), rng_).index;
  } else {
    s = categorical_mode(outs[kScheduleHead].col(0));
    a = categorical_mode(outs[kAltitudeHead].col(0));
  }
  return {static_cast<std::size_t>(s), static_cast<AltitudeMove>(a)};
}

}  // namespace arisaoi
