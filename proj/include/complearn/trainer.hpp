#pragma once

// Comparative learning of one word: similarity batches share the word,
// difference batches carry a non-compatible word from the same category.
// The prototype is the centroid of the similarity representations; the loss
// pulls similarity samples onto it and holds difference samples at mean
// distance one:
//
//   loss = loss_s^2 + (1 - loss_d)^2
//
// with loss_s / loss_d the batch-mean MSE distance to the centroid.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "complearn/embedpack.hpp"
#include "complearn/lexicon.hpp"

namespace complearn {

struct TrainConfig {
  std::size_t batch_size = 128;
  double loss_threshold = 0.008;
  std::size_t max_rounds = 200;
  std::size_t epochs = 5;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  // Filter learning-rate multiplier and weight of a penalty on the mean
  // mask value. The penalty is not part of the reported loss.
  double filter_lr_scale = 100.0;
  double filter_sparsity = 1.0;
  // Decoder training.
  std::size_t decoder_rounds = 100;
  float dropout_rate = 0.2f;
  // Concepts trained concurrently inside one epoch.
  std::size_t threads = 1;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// A subset of pack records with label and alignment indexes.
class PackView {
 public:
  PackView(const EmbeddingPack& pack, std::vector<std::size_t> record_indices);
  static PackView of_split(const EmbeddingPack& pack, Split split, std::optional<VocabSide> side = std::nullopt);

  const EmbeddingPack& pack() const { return *pack_; }
  const std::vector<std::size_t>& records() const { return records_; }
  bool empty() const { return records_.empty(); }

  /// Records carrying `word` (empty span if none).
  std::span<const std::size_t> with_label(const std::string& word) const;

  /// Records whose label in `word`'s category exists and differs from `word`.
  std::vector<std::size_t> non_compatible_with(const std::string& word) const;

  /// Records that agree with `record` on every category except the one of
  /// `word`, where they carry a different value than `word`.
  std::vector<std::size_t> aligned_alternatives(std::size_t record, const std::string& word) const;

  /// Records that agree with `record` everywhere except `word`'s category,
  /// where they carry `replacement`.
  std::vector<std::size_t> aligned_with_value(std::size_t record, const std::string& replacement) const;

 private:
  std::string key_without(std::size_t record, std::size_t category) const;

  const EmbeddingPack* pack_;
  std::vector<std::size_t> records_;
  std::map<std::string, std::vector<std::size_t>> by_label_;
  std::vector<std::vector<int>> word_ids_;  // per pack record, per category; -1 = none
  std::vector<std::map<std::string, std::vector<std::size_t>>> buckets_;  // per category
  std::map<std::string, std::pair<std::size_t, int>> word_index_;         // word -> (category, id)
};

struct ComparisonBatchPair {
  std::string target_label;
  std::vector<std::size_t> sim;   // record indices
  std::vector<std::size_t> diff;  // diff[i] is paired with sim[i]
  std::vector<bool> aligned;      // diff[i] differs from sim[i] only in the target category
  std::size_t fallback_count() const;
};

/// Throws DomainError if the view has no sample with, or none
/// non-compatible with, the label.
ComparisonBatchPair assemble_batches(const PackView& view, const std::string& target_label,
                                     std::size_t batch_size, Rng& rng);

/// Running-mean prior for refinement: centroid = (count * rep + sum r) / (count + n).
struct CentroidPrior {
  Vec64 rep;
  double count = 0.0;
};

struct ComparativeTerms {
  double loss = 0.0;
  double loss_s = 0.0;
  double loss_d = 0.0;
  Vec64 centroid;
};

/// Comparative objective on embedding batches. With `backprop` the encoder's
/// gradient buffers receive d loss / d params.
template <typename T>
ComparativeTerms comparative_objective(EncoderT<T>& encoder, const Matrix<T>& sim, const Matrix<T>& diff,
                                          const CentroidPrior* prior, bool backprop) {
  if (sim.rows() == 0 || diff.rows() == 0) throw DomainError("comparative loss: empty batch");
  const Eigen::Index n = sim.rows();
  const Eigen::Index m = diff.rows();
  Matrix<T> x(n + m, sim.cols());
  x.topRows(n) = sim;
  x.bottomRows(m) = diff;
  EncoderCache<T> cache;
  const Mat64 r = encoder.forward(x, backprop ? &cache : nullptr).template cast<double>();
  const auto k = static_cast<double>(r.cols());

  const double weight = prior ? prior->count : 0.0;
  Vec64 sum = r.topRows(n).colwise().sum().transpose();
  if (prior && prior->count > 0.0) sum += prior->count * prior->rep;
  const Vec64 c = sum / (weight + static_cast<double>(n));

  const Mat64 ds = r.topRows(n).rowwise() - c.transpose();
  const Mat64 dd = r.bottomRows(m).rowwise() - c.transpose();
  ComparativeTerms out;
  out.loss_s = ds.squaredNorm() / (static_cast<double>(n) * k);
  out.loss_d = dd.squaredNorm() / (static_cast<double>(m) * k);
  out.loss = out.loss_s * out.loss_s + (1.0 - out.loss_d) * (1.0 - out.loss_d);
  out.centroid = c;

  if (backprop) {
    const double g_s = 2.0 * out.loss_s;
    const double g_d = -2.0 * (1.0 - out.loss_d);
    const double scale_s = 2.0 / (static_cast<double>(n) * k);
    const double scale_d = 2.0 / (static_cast<double>(m) * k);
    const Vec64 grad_c = -(g_s * scale_s) * ds.colwise().sum().transpose() -
                         (g_d * scale_d) * dd.colwise().sum().transpose();
    Mat64 grad_r(n + m, r.cols());
    grad_r.topRows(n) = (g_s * scale_s) * ds;
    grad_r.topRows(n).rowwise() += (grad_c / (weight + static_cast<double>(n))).transpose();
    grad_r.bottomRows(m) = (g_d * scale_d) * dd;
    encoder.backward(cache, grad_r.template cast<T>());
  }
  return out;
}

struct LossResult {
  double loss = 0.0;
  double loss_s = 0.0;
  double loss_d = 0.0;
  Vec32 rep_candidate;
};

LossResult comparative_loss(const ConceptEntry& entry, const ComparisonBatchPair& pair, const EmbeddingPack& pack);

struct TrainStats {
  std::string kind = "concept";  // concept | refine | decoder
  std::string label;
  std::size_t epoch = 0;
  std::size_t rounds = 0;
  double loss = 0.0;
  double loss_s = 0.0;
  double loss_d = 0.0;
  double wall_ms = 0.0;
  std::size_t fallback_pairs = 0;
  bool converged = false;
  std::vector<double> loss_history;
  std::string note;

  /// One JSON object, no trailing newline.
  std::string to_json_line() const;
};

/// Trains `label` on the view until the loss drops below the threshold or
/// max_rounds is reached, then freezes the prototype on a fresh similarity
/// batch. Adds the concept first if the lexicon lacks it. Only this entry
/// is mutated.
TrainStats train_concept(Lexicon& lexicon, const PackView& view, const std::string& label,
                         const TrainConfig& config);
TrainStats train_concept(Lexicon& lexicon, const EmbeddingPack& pack, const std::string& label,
                         const TrainConfig& config);

/// config.epochs passes over `labels` in the given order.
std::vector<TrainStats> train_vocabulary(Lexicon& lexicon, const PackView& view,
                                         const std::vector<std::string>& labels, const TrainConfig& config);
std::vector<TrainStats> train_vocabulary(Lexicon& lexicon, const EmbeddingPack& pack,
                                         const std::vector<std::string>& labels, const TrainConfig& config);

/// Continues training a trained concept on new samples, treating its
/// prototype as a running mean over sample_count earlier representations.
/// A view without samples of the label is a no-op (stats.note explains).
TrainStats refine_concept(Lexicon& lexicon, const PackView& new_samples, const std::string& label,
                          const TrainConfig& config);

}  // namespace complearn
