#include "complearn/numerics.hpp"

#include <algorithm>
#include <numeric>

namespace complearn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require_same_dim(const Vec32& a, const Vec32& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(base) ^ h);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return splitmix64(splitmix64(base) ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

Vec32 linear_forward(const LinearLayer& layer, const Vec32& x) {
  if (static_cast<std::size_t>(x.size()) != layer.in_dim()) {
    throw ShapeError("linear_forward: input dim " + std::to_string(x.size()) +
                     " != layer input " + std::to_string(layer.in_dim()));
  }
  return layer.weights * x + layer.bias;
}

Vec32 linear_backward(LinearLayer& layer, const Vec32& x, const Vec32& grad_out) {
  if (static_cast<std::size_t>(x.size()) != layer.in_dim() ||
      static_cast<std::size_t>(grad_out.size()) != layer.out_dim()) {
    throw ShapeError("linear_backward: inconsistent shapes");
  }
  layer.grad_weights.noalias() += grad_out * x.transpose();
  layer.grad_bias += grad_out;
  return layer.weights.transpose() * grad_out;
}

double mse_distance(const Vec32& a, const Vec32& b) {
  require_same_dim(a, b, "mse_distance");
  if (a.size() == 0) throw ShapeError("mse_distance: empty vectors");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

Vec32 elementwise_mask(const Vec32& filter_raw, const Vec32& x) {
  require_same_dim(filter_raw, x, "elementwise_mask");
  return (x.array() * sigmoid(filter_raw).array()).matrix();
}

Vec32 elementwise_mask_backward(const Vec32& filter_raw, const Vec32& x, const Vec32& grad_out) {
  require_same_dim(filter_raw, x, "elementwise_mask_backward");
  require_same_dim(filter_raw, grad_out, "elementwise_mask_backward");
  const Vec32 s = sigmoid(filter_raw);
  return (grad_out.array() * x.array() * s.array() * (1.0f - s.array())).matrix();
}

Vec32 centroid(std::span<const Vec32> reps) {
  if (reps.empty()) throw DomainError("centroid: empty list");
  const Eigen::Index dim = reps.front().size();
  Vec64 sum = Vec64::Zero(dim);
  for (const Vec32& r : reps) {
    if (r.size() != dim) throw ShapeError("centroid: dimension mismatch");
    sum += r.cast<double>();
  }
  return (sum / static_cast<double>(reps.size())).cast<float>();
}

void OptimizerState::step(std::span<const ParamRef> params) {
  for (const ParamRef& p : params) {
    if (p.value.size() != p.grad.size()) throw ShapeError("optimizer_step: value/grad size mismatch");
    if (!all_finite(p.grad)) throw NumericError("optimizer_step: non-finite gradient");
  }
  if (first_moment_.empty()) {
    first_moment_.reserve(params.size());
    second_moment_.reserve(params.size());
    for (const ParamRef& p : params) {
      first_moment_.emplace_back(p.value.size(), 0.0);
      second_moment_.emplace_back(p.value.size(), 0.0);
    }
  } else if (first_moment_.size() != params.size()) {
    throw ShapeError("optimizer_step: parameter list changed between steps");
  }

  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));

  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    auto& m = first_moment_[k];
    auto& v = second_moment_[k];
    if (m.size() != p.value.size()) throw ShapeError("optimizer_step: parameter shape changed");
    const double lr = config_.learning_rate * static_cast<double>(p.lr_scale);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value[i] = static_cast<float>(p.value[i] - lr * m_hat / (std::sqrt(v_hat) + config_.epsilon));
      p.grad[i] = 0.0f;
    }
  }
}

DropoutState::DropoutState(float rate, DropoutMode mode, std::uint64_t seed)
    : rate_(rate), mode_(mode), rng_(seed) {
  if (!(rate >= 0.0f && rate < 1.0f)) throw DomainError("dropout rate must lie in [0, 1)");
}

FiniteDiffResult finite_diff_check(const DifferentiableFunction& fn, std::span<const double> params,
                                   const FiniteDiffOptions& options) {
  const std::vector<double> analytic = fn.gradient(params);
  if (analytic.size() != params.size()) throw ShapeError("finite_diff_check: gradient size mismatch");

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coords != 0 && options.max_coords < coords.size()) {
    Rng rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  std::vector<double> shadow(params.begin(), params.end());
  FiniteDiffResult result;
  for (std::size_t c : coords) {
    const double original = shadow[c];
    shadow[c] = original + options.step;
    const double plus = fn.value(shadow);
    shadow[c] = original - options.step;
    const double minus = fn.value(shadow);
    shadow[c] = original;
    const double central = (plus - minus) / (2.0 * options.step);
    const double denom = std::max({std::abs(analytic[c]), std::abs(central), 1e-8});
    const double err = std::abs(analytic[c] - central) / denom;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_coord = c;
    }
    ++result.coords_checked;
  }
  return result;
}

}  // namespace complearn
