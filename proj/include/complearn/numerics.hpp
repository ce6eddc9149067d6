#pragma once

// Dense numerics for the fixed per-word graphs: fully connected layers with
// analytic gradients, the masking filter, MSE distance, centroids, the Adam
// optimizer, inverted dropout and a central-difference gradient checker.
//
// Layers are templated on the scalar so the same code runs in float for
// training and in double for gradient checking.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "complearn/errors.hpp"

namespace complearn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Vec32 = Vector<float>;
using Mat32 = Matrix<float>;
using Vec64 = Vector<double>;
using Mat64 = Matrix<double>;

using Rng = std::mt19937_64;

/// Mixes a base seed with a tag into an independent stream seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

bool all_finite(std::span<const float> values);

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Vector<T> sigmoid(const Vector<T>& x) {
  return x.unaryExpr([](T v) { return sigmoid(v); });
}

// ---------------------------------------------------------------------------
// LinearLayer
// ---------------------------------------------------------------------------

template <typename T>
struct LinearLayerT {
  Matrix<T> weights;  // out x in
  Vector<T> bias;
  Matrix<T> grad_weights;
  Vector<T> grad_bias;

  LinearLayerT() = default;
  LinearLayerT(std::size_t in_dim, std::size_t out_dim)
      : weights(Matrix<T>::Zero(out_dim, in_dim)),
        bias(Vector<T>::Zero(out_dim)),
        grad_weights(Matrix<T>::Zero(out_dim, in_dim)),
        grad_bias(Vector<T>::Zero(out_dim)) {}

  /// Weights uniform in +-sqrt(1/in_dim), zero bias.
  static LinearLayerT uniform(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    LinearLayerT layer(in_dim, out_dim);
    const double bound = std::sqrt(1.0 / static_cast<double>(in_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
      layer.weights.data()[i] = static_cast<T>(dist(rng));
    }
    return layer;
  }

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }

  void zero_grad() {
    grad_weights.setZero();
    grad_bias.setZero();
  }

  template <typename U>
  LinearLayerT<U> cast() const {
    LinearLayerT<U> out;
    out.weights = weights.template cast<U>();
    out.bias = bias.template cast<U>();
    out.grad_weights = grad_weights.template cast<U>();
    out.grad_bias = grad_bias.template cast<U>();
    return out;
  }

  bool operator==(const LinearLayerT& other) const {
    return weights == other.weights && bias == other.bias;
  }
};

using LinearLayer = LinearLayerT<float>;

/// out = W x + b
Vec32 linear_forward(const LinearLayer& layer, const Vec32& x);

/// Accumulates parameter gradients and returns W^T grad_out.
Vec32 linear_backward(LinearLayer& layer, const Vec32& x, const Vec32& grad_out);

/// Batched forward; one sample per row of x.
template <typename T>
Matrix<T> linear_forward_batch(const LinearLayerT<T>& layer, const Matrix<T>& x) {
  if (static_cast<std::size_t>(x.cols()) != layer.in_dim()) {
    throw ShapeError("linear_forward: input width " + std::to_string(x.cols()) +
                     " != layer input " + std::to_string(layer.in_dim()));
  }
  Matrix<T> out = x * layer.weights.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

/// Batched backward. Accumulates into the layer's gradient buffers and
/// returns the gradient w.r.t. the input rows.
template <typename T>
Matrix<T> linear_backward_batch(LinearLayerT<T>& layer, const Matrix<T>& x,
                                const Matrix<T>& grad_out) {
  if (static_cast<std::size_t>(x.cols()) != layer.in_dim() ||
      static_cast<std::size_t>(grad_out.cols()) != layer.out_dim() ||
      x.rows() != grad_out.rows()) {
    throw ShapeError("linear_backward: inconsistent shapes");
  }
  layer.grad_weights.noalias() += grad_out.transpose() * x;
  layer.grad_bias += grad_out.colwise().sum().transpose();
  return grad_out * layer.weights;
}

/// Hidden-layer activation used by every network in the library.
template <typename T>
Matrix<T> activate(const Matrix<T>& z) {
  return z.array().tanh().matrix();
}

/// Gradient through the activation given its output.
template <typename T>
Matrix<T> activate_backward(const Matrix<T>& activated, const Matrix<T>& grad_out) {
  return (grad_out.array() * (T(1) - activated.array().square())).matrix();
}

// ---------------------------------------------------------------------------
// Distances, masks, centroids
// ---------------------------------------------------------------------------

/// Mean over dimensions of squared differences, accumulated in double.
double mse_distance(const Vec32& a, const Vec32& b);

/// x * sigmoid(filter_raw)
Vec32 elementwise_mask(const Vec32& filter_raw, const Vec32& x);

/// Gradient of sum(grad_out * mask(filter_raw, x)) w.r.t. filter_raw.
Vec32 elementwise_mask_backward(const Vec32& filter_raw, const Vec32& x, const Vec32& grad_out);

/// Elementwise arithmetic mean, accumulated in double.
Vec32 centroid(std::span<const Vec32> reps);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// A view of one parameter tensor and its gradient buffer.
struct ParamRef {
  std::span<float> value;
  std::span<float> grad;
  float lr_scale = 1.0f;
};

template <typename Derived>
std::span<float> as_span(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class OptimizerState {
 public:
  explicit OptimizerState(AdamConfig config = {}) : config_(config) {}

  /// One Adam update over `params`; gradients are zeroed afterwards.
  /// Throws NumericError (and leaves everything untouched) if any gradient
  /// is non-finite. The parameter list must have the same shapes on every call.
  void step(std::span<const ParamRef> params);

  std::uint64_t step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
};

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

enum class DropoutMode { train, infer };

class DropoutState {
 public:
  DropoutState(float rate, DropoutMode mode, std::uint64_t seed);

  float rate() const { return rate_; }
  DropoutMode mode() const { return mode_; }
  void set_mode(DropoutMode mode) { mode_ = mode; }

  /// Inverted dropout in place. Returns the applied scale mask (all ones in
  /// infer mode) so the caller can backpropagate through it.
  template <typename T>
  Matrix<T> apply(Matrix<T>& activations) {
    Matrix<T> mask = Matrix<T>::Ones(activations.rows(), activations.cols());
    if (mode_ == DropoutMode::infer || rate_ == 0.0f) return mask;
    const T keep_scale = T(1) / (T(1) - static_cast<T>(rate_));
    std::bernoulli_distribution drop(rate_);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = drop(rng_) ? T(0) : keep_scale;
    }
    activations.array() *= mask.array();
    return mask;
  }

 private:
  float rate_;
  DropoutMode mode_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// A scalar function of a flat parameter vector together with its analytic
/// gradient. Both must be deterministic.
struct DifferentiableFunction {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct FiniteDiffOptions {
  double step = 1e-3;
  std::size_t max_coords = 0;  // 0 = every coordinate
  std::uint64_t seed = 0;
};

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

/// max over sampled coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8)
FiniteDiffResult finite_diff_check(const DifferentiableFunction& fn, std::span<const double> params,
                                   const FiniteDiffOptions& options = {});

}  // namespace complearn
