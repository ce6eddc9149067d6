#pragma once

// Controlled baseline heads over the same embeddings, each two fully
// connected layers with a 128-wide hidden layer:
//   linear       one multi-label head with a fixed vocabulary (BCE)
//   multi_attr   one binary head per word (BCE)
//   contrastive  shared projection + per-label vectors, softmax over cosine
//                similarity within each category (temperature 0.07)

#include <string>
#include <vector>

#include "complearn/embedpack.hpp"
#include "complearn/evalsuite.hpp"

namespace complearn {

enum class BaselineKind { linear, multi_attr, contrastive };

std::string_view to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(std::string_view text);

template <typename T>
struct MlpHeadT {
  LinearLayerT<T> first;
  LinearLayerT<T> second;

  static MlpHeadT init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    return {LinearLayerT<T>::uniform(in, hidden, rng), LinearLayerT<T>::uniform(hidden, out, rng)};
  }

  Matrix<T> forward(const Matrix<T>& x, Matrix<T>* hidden_out = nullptr) const {
    Matrix<T> h = activate(linear_forward_batch(first, x));
    Matrix<T> out = linear_forward_batch(second, h);
    if (hidden_out) *hidden_out = std::move(h);
    return out;
  }

  void backward(const Matrix<T>& x, const Matrix<T>& hidden, const Matrix<T>& grad_out) {
    const Matrix<T> grad_h = linear_backward_batch(second, hidden, grad_out);
    linear_backward_batch(first, x, activate_backward(hidden, grad_h));
  }

  void zero_grad() {
    first.zero_grad();
    second.zero_grad();
  }

  template <typename U>
  MlpHeadT<U> cast() const {
    return {first.template cast<U>(), second.template cast<U>()};
  }
};

using MlpHead = MlpHeadT<float>;

/// Mean binary cross-entropy with logits over every (sample, output).
template <typename T>
double bce_objective(MlpHeadT<T>& head, const Matrix<T>& x, const Matrix<T>& targets, bool backprop) {
  Matrix<T> hidden;
  const Matrix<T> logits = head.forward(x, &hidden);
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("bce: target shape mismatch");
  }
  const Mat64 z = logits.template cast<double>();
  const Mat64 y = targets.template cast<double>();
  const double count = static_cast<double>(z.size());
  // log(1 + exp(z)) - y z, stable form
  const Mat64 softplus = z.array().max(0.0) + (-z.array().abs()).exp().log1p();
  const double loss = (softplus.array() - y.array() * z.array()).sum() / count;
  if (backprop) {
    const Mat64 p = z.unaryExpr([](double v) { return sigmoid(v); });
    head.backward(x, hidden, ((p - y) / count).template cast<T>());
  }
  return loss;
}

/// Positives per sample: one label index per category (-1 = none).
/// groups[c] lists the label indices of category c.
template <typename T>
double contrastive_objective(MlpHeadT<T>& projection, Matrix<T>& table, Matrix<T>* grad_table,
                             const Matrix<T>& x, const std::vector<std::vector<int>>& positives,
                             const std::vector<std::vector<int>>& groups, double temperature, bool backprop) {
  Matrix<T> hidden;
  const Matrix<T> z_t = projection.forward(x, &hidden);
  const Mat64 z = z_t.template cast<double>();
  const Mat64 t = table.template cast<double>();
  const Eigen::Index n = z.rows();
  if (static_cast<std::size_t>(n) != positives.size()) throw ShapeError("contrastive: positives size mismatch");

  const Vec64 z_norm = z.rowwise().norm().cwiseMax(1e-12);
  const Vec64 t_norm = t.rowwise().norm().cwiseMax(1e-12);
  const Mat64 z_hat = z.array().colwise() / z_norm.array();
  const Mat64 t_hat = t.array().colwise() / t_norm.array();
  const Mat64 cos = z_hat * t_hat.transpose();

  // d loss / d cos
  Mat64 g_cos = Mat64::Zero(cos.rows(), cos.cols());
  double loss = 0.0;
  std::size_t terms = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < groups.size(); ++c) {
      const int pos = positives[static_cast<std::size_t>(i)][c];
      if (pos < 0) continue;
      const auto& group = groups[c];
      double max_logit = -1e300;
      for (int j : group) max_logit = std::max(max_logit, cos(i, j) / temperature);
      double denom = 0.0;
      for (int j : group) denom += std::exp(cos(i, j) / temperature - max_logit);
      loss += -(cos(i, pos) / temperature - max_logit - std::log(denom));
      ++terms;
      for (int j : group) {
        const double softmax = std::exp(cos(i, j) / temperature - max_logit) / denom;
        g_cos(i, j) += (softmax - (j == pos ? 1.0 : 0.0)) / temperature;
      }
    }
  }
  if (terms == 0) throw DomainError("contrastive: no labeled samples");
  loss /= static_cast<double>(terms);
  g_cos /= static_cast<double>(terms);

  if (backprop) {
    // cos = z_hat . t_hat;  d z_hat / d z = (I - z_hat z_hat^T) / |z|
    const Mat64 g_zhat = g_cos * t_hat;
    const Mat64 g_that = g_cos.transpose() * z_hat;
    const Vec64 zdot = (g_zhat.array() * z_hat.array()).rowwise().sum();
    const Vec64 tdot = (g_that.array() * t_hat.array()).rowwise().sum();
    const Mat64 g_z = ((g_zhat.array() - z_hat.array().colwise() * zdot.array()).colwise() / z_norm.array()).matrix();
    const Mat64 g_t = ((g_that.array() - t_hat.array().colwise() * tdot.array()).colwise() / t_norm.array()).matrix();
    projection.backward(x, hidden, g_z.template cast<T>());
    if (grad_table) *grad_table += g_t.template cast<T>();
  }
  return loss;
}

struct BaselineConfig {
  std::size_t hidden_dim = 128;
  std::size_t projection_dim = 64;
  std::size_t steps = 1500;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double temperature = 0.07;
  std::uint64_t seed = 0;
};

struct BaselineHead {
  BaselineKind kind = BaselineKind::linear;
  std::vector<std::string> vocab;  // fixed at construction
  MlpHead head;                    // linear: out = |vocab|; contrastive: projection
  std::vector<MlpHead> per_word;   // multi_attr
  Mat32 table;                     // contrastive label vectors, |vocab| x projection_dim

  std::size_t output_dim() const { return vocab.size(); }
  /// rows x |vocab| scores, higher = more confident.
  Mat64 scores(const Mat32& rows) const;
};

/// Trains a head on the given records with vocabulary `vocab`. For the
/// linear head `init_first` (if given) seeds the first layer.
BaselineHead train_baseline(BaselineKind kind, const EmbeddingPack& pack, const std::vector<std::size_t>& records,
                            const std::vector<std::string>& vocab, const BaselineConfig& config,
                            const LinearLayer* init_first = nullptr);

/// Throws DomainError if a record carries a label outside the head's
/// vocabulary and the head is linear (its output size cannot grow).
EvalReport eval_baseline(const BaselineHead& head, const EmbeddingPack& pack,
                         const std::vector<std::size_t>& records, std::size_t k = 0);

}  // namespace complearn
