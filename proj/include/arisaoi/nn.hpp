#pragma once

// Small multilayer perceptron with a shared trunk and several linear heads,
// hand-written reverse mode, and Adam. Parameters live in one flat vector;
// each layer is a row-major weight block followed by its bias.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace arisaoi {

enum class Activation { tanh, identity };
enum class HeadKind { categorical_logits, scalar };

struct HeadSpec {
  std::string name;
  Eigen::Index output_dim = 1;
  HeadKind kind = HeadKind::scalar;

  bool operator==(const HeadSpec&) const = default;
};

struct MlpSpec {
  Eigen::Index input_dim = 1;
  std::vector<Eigen::Index> hidden;
  Activation activation = Activation::tanh;
  std::vector<HeadSpec> heads;

  bool operator==(const MlpSpec&) const = default;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
class Mlp {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using WeightMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstWeightMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using BiasMap = Eigen::Map<Vector>;
  using ConstBiasMap = Eigen::Map<const Vector>;

  /// Post-activation values of the input and every trunk layer, one column per sample.
  struct Tape {
    std::vector<Matrix> activations;
  };

  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    if (spec_.input_dim < 1) throw ShapeError("Mlp: input_dim must be >= 1");
    if (spec_.hidden.empty()) throw ShapeError("Mlp: at least one hidden layer required");
    if (spec_.heads.empty()) throw ShapeError("Mlp: at least one head required");
    Eigen::Index in = spec_.input_dim;
    for (auto width : spec_.hidden) {
      if (width < 1) throw ShapeError("Mlp: hidden widths must be >= 1");
      add_layer(width, in);
      in = width;
    }
    for (const auto& head : spec_.heads) {
      if (head.output_dim < 1) throw ShapeError("Mlp: head output_dim must be >= 1");
      if (head.kind == HeadKind::scalar && head.output_dim != 1)
        throw ShapeError("Mlp: scalar heads have output_dim 1");
      add_layer(head.output_dim, in);
    }
  }

  const MlpSpec& spec() const { return spec_; }
  Eigen::Index parameter_count() const { return parameter_count_; }
  std::size_t num_trunk_layers() const { return spec_.hidden.size(); }
  std::size_t num_layers() const { return layers_.size(); }

  WeightMap weights(Vector& params, std::size_t layer) const {
    const auto& l = layers_.at(layer);
    return WeightMap(params.data() + l.offset, l.rows, l.cols);
  }
  ConstWeightMap weights(const Vector& params, std::size_t layer) const {
    const auto& l = layers_.at(layer);
    return ConstWeightMap(params.data() + l.offset, l.rows, l.cols);
  }
  BiasMap bias(Vector& params, std::size_t layer) const {
    const auto& l = layers_.at(layer);
    return BiasMap(params.data() + l.offset + l.rows * l.cols, l.rows);
  }
  ConstBiasMap bias(const Vector& params, std::size_t layer) const {
    const auto& l = layers_.at(layer);
    return ConstBiasMap(params.data() + l.offset + l.rows * l.cols, l.rows);
  }

  /// Scaled-uniform init with variance gain^2 / fan_in and zero biases.
  /// Gains: sqrt(2) on the trunk, 0.01 on categorical heads, 1 on scalar heads.
  Vector initialize(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    Vector params = Vector::Zero(parameter_count_);
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      Scalar gain = std::sqrt(Scalar(2));
      if (k >= num_trunk_layers()) {
        const auto& head = spec_.heads[k - num_trunk_layers()];
        gain = head.kind == HeadKind::categorical_logits ? Scalar(0.01) : Scalar(1);
      }
      const Scalar limit = gain * std::sqrt(Scalar(3) / static_cast<Scalar>(layers_[k].cols));
      std::uniform_real_distribution<double> dist(-static_cast<double>(limit), static_cast<double>(limit));
      auto w = weights(params, k);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<Scalar>(dist(rng));
    }
    return params;
  }

  /// Head outputs (output_dim x batch) for a batch of column feature vectors.
  std::vector<Matrix> forward(const Vector& params, const Eigen::Ref<const Matrix>& inputs,
                              Tape* tape = nullptr) const {
    check_params(params);
    if (inputs.rows() != spec_.input_dim)
      throw ShapeError("Mlp::forward: feature length does not match input_dim");
    Tape local;
    Tape& t = tape ? *tape : local;
    t.activations.clear();
    t.activations.reserve(num_trunk_layers() + 1);
    t.activations.emplace_back(inputs);
    for (std::size_t k = 0; k < num_trunk_layers(); ++k) {
      Matrix z = weights(params, k) * t.activations.back();
      z.colwise() += bias(params, k);
      if (spec_.activation == Activation::tanh) z = z.array().tanh().matrix();
      t.activations.push_back(std::move(z));
    }
    std::vector<Matrix> outputs;
    outputs.reserve(spec_.heads.size());
    for (std::size_t h = 0; h < spec_.heads.size(); ++h) {
      const auto k = num_trunk_layers() + h;
      Matrix out = weights(params, k) * t.activations.back();
      out.colwise() += bias(params, k);
      outputs.push_back(std::move(out));
    }
    return outputs;
  }

  /// Gradient of sum_h <head_grads[h], outputs[h]> with respect to every parameter.
  Vector backward(const Vector& params, const Tape& tape, const std::vector<Matrix>& head_grads) const {
    check_params(params);
    if (head_grads.size() != spec_.heads.size())
      throw ShapeError("Mlp::backward: one gradient block per head required");
    if (tape.activations.size() != num_trunk_layers() + 1)
      throw ShapeError("Mlp::backward: tape does not match network depth");
    const Eigen::Index batch = tape.activations.front().cols();
    Vector grads = Vector::Zero(parameter_count_);

    const Matrix& top = tape.activations.back();
    Matrix upstream = Matrix::Zero(top.rows(), batch);
    for (std::size_t h = 0; h < spec_.heads.size(); ++h) {
      const auto& g = head_grads[h];
      if (g.rows() != spec_.heads[h].output_dim || g.cols() != batch)
        throw ShapeError("Mlp::backward: head gradient shape mismatch");
      const auto k = num_trunk_layers() + h;
      weights(grads, k).noalias() = g * top.transpose();
      bias(grads, k) = g.rowwise().sum();
      upstream.noalias() += weights(params, k).transpose() * g;
    }
    for (std::size_t k = num_trunk_layers(); k-- > 0;) {
      const Matrix& a = tape.activations[k + 1];
      Matrix dz = spec_.activation == Activation::tanh
                      ? Matrix(upstream.array() * (Scalar(1) - a.array().square()))
                      : upstream;
      weights(grads, k).noalias() = dz * tape.activations[k].transpose();
      bias(grads, k) = dz.rowwise().sum();
      if (k > 0) upstream.noalias() = weights(params, k).transpose() * dz;
    }
    return grads;
  }

  Vector backward(const Vector& params, const Eigen::Ref<const Matrix>& inputs,
                  const std::vector<Matrix>& head_grads) const {
    Tape tape;
    forward(params, inputs, &tape);
    return backward(params, tape, head_grads);
  }

 private:
  struct Layer {
    Eigen::Index rows, cols, offset;
  };

  void add_layer(Eigen::Index rows, Eigen::Index cols) {
    layers_.push_back({rows, cols, parameter_count_});
    parameter_count_ += rows * cols + rows;
  }

  void check_params(const Vector& params) const {
    if (params.size() != parameter_count_) throw ShapeError("Mlp: parameter vector has wrong size");
  }

  MlpSpec spec_;
  std::vector<Layer> layers_;
  Eigen::Index parameter_count_ = 0;
};

// -- categorical heads ------------------------------------------------------

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = logits.maxCoeff();
  return top + std::log((logits.array() - top).exp().sum());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  return (logits.array() - logsumexp(logits)).matrix();
}

template <typename Derived>
typename Derived::Scalar categorical_entropy(const Eigen::MatrixBase<Derived>& logits) {
  const auto logp = log_softmax(logits);
  return -(logp.array().exp() * logp.array()).sum();
}

struct CategoricalSample {
  Eigen::Index index = 0;
  double log_prob = 0.0;
};

/// Inverse-CDF draw from softmax(logits).
template <typename Derived, typename Rng>
CategoricalSample categorical_sample(const Eigen::MatrixBase<Derived>& logits, Rng& rng) {
  const auto logp = log_softmax(logits);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double cumulative = 0.0;
  Eigen::Index pick = logp.size() - 1;
  for (Eigen::Index k = 0; k < logp.size(); ++k) {
    cumulative += std::exp(static_cast<double>(logp[k]));
    if (u < cumulative) {
      pick = k;
      break;
    }
  }
  // Never return a zero-probability index from rounding at the tail.
  while (pick > 0 && !(std::exp(static_cast<double>(logp[pick])) > 0)) --pick;
  return {pick, static_cast<double>(logp[pick])};
}

template <typename Derived>
Eigen::Index categorical_mode(const Eigen::MatrixBase<Derived>& logits) {
  Eigen::Index best = 0;
  logits.maxCoeff(&best);
  return best;
}

// -- Adam -------------------------------------------------------------------

template <typename Scalar>
struct AdamState {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vector first_moment;
  Vector second_moment;
  std::int64_t step = 0;
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);

  static AdamState zeros(Eigen::Index size, Scalar learning_rate) {
    AdamState s;
    s.first_moment = Vector::Zero(size);
    s.second_moment = Vector::Zero(size);
    s.learning_rate = learning_rate;
    return s;
  }
};

/// Bias-corrected Adam. With `maximize` the step ascends the gradient.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& params,
               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& grads, bool maximize) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  if (!grads.allFinite()) throw NonFiniteError("adam_step: non-finite gradient");
  state.step += 1;
  const Scalar sign = maximize ? Scalar(-1) : Scalar(1);
  state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * sign * grads;
  state.second_moment =
      state.beta2 * state.second_moment + (Scalar(1) - state.beta2) * grads.array().square().matrix();
  const auto t = static_cast<Scalar>(state.step);
  const Scalar m_correction = Scalar(1) - std::pow(state.beta1, t);
  const Scalar v_correction = Scalar(1) - std::pow(state.beta2, t);
  params.array() -= state.learning_rate * (state.first_moment.array() / m_correction) /
                    ((state.second_moment.array() / v_correction).sqrt() + state.epsilon);
}

// -- checkpoints ------------------------------------------------------------

/// Affine input standardization applied before the network:
/// clamp((x - shift) * scale, -clip, clip). Empty vectors mean identity.
struct InputTransform {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;
  double clip = 5.0;

  bool identity() const { return shift.size() == 0; }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    if (identity()) return x;
    if (x.size() != shift.size()) throw ShapeError("InputTransform: dimension mismatch");
    return ((x - shift).array() * scale.array()).cwiseMax(-clip).cwiseMin(clip).matrix();
  }
};

struct Checkpoint {
  MlpSpec spec;
  Eigen::VectorXd params;
  InputTransform input;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
};

/// Text checkpoint: a header of `key,value` lines followed by one hex-float
/// parameter per line in layer order (row-major weights, then bias).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

}  // namespace arisaoi
