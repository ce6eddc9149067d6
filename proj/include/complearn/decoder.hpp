#pragma once

// Per-word decoders: Dec_p maps Rep_p back to embedding space so that
//
//   edit:        out_q2p = e_q * (1 - sigmoid(F_q)) + Dec_p(Rep_p)
//   reconstruct: out_p2p = e_p * (1 - sigmoid(F_p)) + Dec_p(Rep_p)
//
// both land on e_p. Filters, encoders and prototypes stay frozen; only the
// decoder of p receives gradient.

#include <string>
#include <vector>

#include "complearn/lexicon.hpp"
#include "complearn/trainer.hpp"

namespace complearn {

struct EditExample {
  Vec32 e_q;
  Vec32 e_p;
  std::string q;
  std::string p;
};

/// Dec_p(Rep_p) in infer mode. Throws DomainError without decoder or rep.
Vec32 decode_rep(const ConceptEntry& entry_p);

/// e_q with q's filtered features removed: e_q * (1 - sigmoid(F_q)).
Vec32 mask_out(const Vec32& e_q, const ConceptEntry& entry_q);

Vec32 edit_embedding(const Vec32& e_q, const ConceptEntry& entry_q, const ConceptEntry& entry_p);
Vec32 reconstruct_embedding(const Vec32& e_p, const ConceptEntry& entry_p);

struct EditBatch {
  std::string p;
  std::vector<std::string> q;       // per pair
  std::vector<std::size_t> p_rows;  // record indices carrying p
  std::vector<std::size_t> q_rows;  // record indices carrying q[i]
  std::vector<bool> aligned;        // q_rows[i] matches p_rows[i] outside p's category
  std::size_t fallback_count() const;
};

/// q is drawn uniformly among the trained lexicon words of p's category that
/// occur in the view. Throws DomainError when no pair can be formed.
EditBatch assemble_edit_batch(const PackView& view, const Lexicon& lexicon, const std::string& p,
                              std::size_t batch_size, Rng& rng);

/// Mean over pairs of Dist(e_p, out_q2p) + Dist(e_p, out_p2p). `kept_q` and
/// `kept_p` are the masked-out inputs (rows aligned with `target`). With
/// `backprop` the decoder's gradient buffers receive d loss / d params.
template <typename T>
double decoder_objective(DecoderT<T>& decoder, const Vector<T>& rep, const Matrix<T>& target,
                         const Matrix<T>& kept_q, const Matrix<T>& kept_p, DropoutState* dropout,
                         bool backprop) {
  const Eigen::Index n = target.rows();
  if (n == 0) throw DomainError("decoder loss: empty batch");
  if (kept_q.rows() != n || kept_p.rows() != n || kept_q.cols() != target.cols() ||
      kept_p.cols() != target.cols()) {
    throw ShapeError("decoder loss: inconsistent batch shapes");
  }
  // One decoder pass per term so every row draws its own dropout mask.
  const Matrix<T> input = rep.transpose().replicate(2 * n, 1);
  DecoderCache<T> cache;
  const Matrix<T> d = decoder.forward(input, dropout, backprop ? &cache : nullptr);
  if (static_cast<Eigen::Index>(decoder.embedding_dim()) != target.cols()) {
    throw ShapeError("decoder loss: decoder width != embedding dim");
  }
  Mat64 diff(2 * n, target.cols());
  diff.topRows(n) = (kept_q + d.topRows(n) - target).template cast<double>();
  diff.bottomRows(n) = (kept_p + d.bottomRows(n) - target).template cast<double>();
  const double scale = static_cast<double>(n) * static_cast<double>(target.cols());
  const double loss = diff.squaredNorm() / scale;
  if (backprop) {
    decoder.backward(cache, ((2.0 / scale) * diff).template cast<T>());
  }
  return loss;
}

/// Trains the decoder of p for config.decoder_rounds rounds. `pass` varies
/// the sampling stream between repeated calls (the vocabulary epoch).
TrainStats train_decoder(Lexicon& lexicon, const PackView& view, const std::string& p, const TrainConfig& config,
                         std::size_t pass = 0);

/// config.epochs passes over `labels`; decoders of distinct words may train
/// concurrently (config.threads).
std::vector<TrainStats> train_decoders(Lexicon& lexicon, const PackView& view, const std::vector<std::string>& labels,
                                       const TrainConfig& config);

}  // namespace complearn
