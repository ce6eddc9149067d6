#include "complearn/decoder.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <thread>

namespace complearn {

namespace {

void require_trained(const ConceptEntry& entry) {
  if (!entry.trained()) throw DomainError("concept '" + entry.label + "' has not been trained");
}

Vec32 keep_mask(const ConceptEntry& entry) {
  return (1.0f - sigmoid(entry.encoder.filter_raw).array()).matrix();
}

}  // namespace

Vec32 decode_rep(const ConceptEntry& entry_p) {
  if (!entry_p.decoder) throw DomainError("concept '" + entry_p.label + "' has no decoder");
  if (!entry_p.rep) throw DomainError("concept '" + entry_p.label + "' has no representation");
  const Mat32 input = entry_p.rep->transpose();
  return entry_p.decoder->forward(input).row(0).transpose();
}

Vec32 mask_out(const Vec32& e_q, const ConceptEntry& entry_q) {
  if (e_q.size() != entry_q.encoder.filter_raw.size()) {
    throw ShapeError("edit: embedding dim " + std::to_string(e_q.size()) + " != concept dim " +
                     std::to_string(entry_q.encoder.filter_raw.size()));
  }
  return (e_q.array() * keep_mask(entry_q).array()).matrix();
}

Vec32 edit_embedding(const Vec32& e_q, const ConceptEntry& entry_q, const ConceptEntry& entry_p) {
  require_trained(entry_q);
  require_trained(entry_p);
  const Vec32 kept = mask_out(e_q, entry_q);
  const Vec32 decoded = decode_rep(entry_p);
  if (decoded.size() != kept.size()) throw ShapeError("edit: decoder width != embedding dim");
  return kept + decoded;
}

Vec32 reconstruct_embedding(const Vec32& e_p, const ConceptEntry& entry_p) {
  return edit_embedding(e_p, entry_p, entry_p);
}

std::size_t EditBatch::fallback_count() const {
  return static_cast<std::size_t>(std::count(aligned.begin(), aligned.end(), false));
}

EditBatch assemble_edit_batch(const PackView& view, const Lexicon& lexicon, const std::string& p,
                              std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw DomainError("edit batch: batch_size must be positive");
  const auto& categories = view.pack().category_map;
  const auto category = categories.category_of(p);
  if (!category) throw DomainError("label '" + p + "' is not in the pack vocabulary");
  const auto positives = view.with_label(p);
  if (positives.empty()) throw DomainError("no valid edit pairs for '" + p + "': label absent from the view");

  std::vector<std::string> partners;
  for (const auto& word : categories.categories()[*categories.category_index(*category)].words) {
    if (word == p || !lexicon.contains(word) || !lexicon.at(word).trained()) continue;
    if (view.with_label(word).empty()) continue;
    partners.push_back(word);
  }
  if (partners.empty()) {
    throw DomainError("no valid edit pairs for '" + p + "': no other trained word of category '" + *category +
                      "' in the view");
  }

  EditBatch batch;
  batch.p = p;
  std::uniform_int_distribution<std::size_t> pick_p(0, positives.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_q(0, partners.size() - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t p_row = positives[pick_p(rng)];
    const std::string& q = partners[pick_q(rng)];
    auto candidates = view.aligned_with_value(p_row, q);
    const bool aligned = !candidates.empty();
    const auto any = view.with_label(q);
    std::size_t q_row = 0;
    if (aligned) {
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      q_row = candidates[pick(rng)];
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, any.size() - 1);
      q_row = any[pick(rng)];
    }
    batch.q.push_back(q);
    batch.p_rows.push_back(p_row);
    batch.q_rows.push_back(q_row);
    batch.aligned.push_back(aligned);
  }
  return batch;
}

TrainStats train_decoder(Lexicon& lexicon, const PackView& view, const std::string& p, const TrainConfig& config,
                         std::size_t pass) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  if (!lexicon.contains(p)) throw DomainError("concept '" + p + "' is not in the lexicon");
  require_trained(lexicon.at(p));
  if (view.pack().dim != lexicon.embedding_dim()) throw ShapeError("decoder: pack dim != lexicon dim");
  lexicon.ensure_decoder(p);
  ConceptEntry& entry = lexicon.at(p);
  Decoder& decoder = *entry.decoder;
  decoder.zero_grad();

  Rng rng(derive_seed(config.seed, "decoder-train:" + p + ":" + std::to_string(pass)));
  DropoutState dropout(config.dropout_rate, DropoutMode::train, rng());
  OptimizerState optimizer(AdamConfig{config.learning_rate});
  std::vector<ParamRef> params;
  for (auto& layer : decoder.layers) {
    params.push_back({as_span(layer.weights), as_span(layer.grad_weights)});
    params.push_back({as_span(layer.bias), as_span(layer.grad_bias)});
  }

  std::map<std::string, Vec32> keep;
  const Vec32 keep_p = keep_mask(entry);
  const Vec32& rep = *entry.rep;

  TrainStats stats;
  stats.kind = "decoder";
  stats.label = p;
  for (std::size_t round = 1; round <= config.decoder_rounds; ++round) {
    const EditBatch batch = assemble_edit_batch(view, lexicon, p, config.batch_size, rng);
    stats.fallback_pairs += batch.fallback_count();
    const Mat32 target = gather_rows<float>(view.pack(), batch.p_rows);
    Mat32 kept_q = gather_rows<float>(view.pack(), batch.q_rows);
    for (Eigen::Index i = 0; i < kept_q.rows(); ++i) {
      const std::string& q = batch.q[static_cast<std::size_t>(i)];
      auto it = keep.find(q);
      if (it == keep.end()) it = keep.emplace(q, keep_mask(lexicon.at(q))).first;
      kept_q.row(i).array() *= it->second.transpose().array();
    }
    const Mat32 kept_p = (target.array().rowwise() * keep_p.transpose().array()).matrix();
    const double loss = decoder_objective(decoder, rep, target, kept_q, kept_p, &dropout, true);
    if (!std::isfinite(loss)) {
      decoder.zero_grad();
      throw NumericError("decoder training for '" + p + "' produced a non-finite loss at round " +
                         std::to_string(round));
    }
    optimizer.step(params);
    stats.rounds = round;
    stats.loss = loss;
    stats.loss_history.push_back(loss);
  }
  stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

std::vector<TrainStats> train_decoders(Lexicon& lexicon, const PackView& view, const std::vector<std::string>& labels,
                                       const TrainConfig& config) {
  config.validate();
  for (const auto& label : labels) {
    if (!lexicon.contains(label)) throw DomainError("concept '" + label + "' is not in the lexicon");
    require_trained(lexicon.at(label));
    lexicon.ensure_decoder(label);
  }
  std::vector<TrainStats> all;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<TrainStats> epoch_stats(labels.size());
    if (config.threads <= 1 || labels.size() <= 1) {
      for (std::size_t i = 0; i < labels.size(); ++i) {
        epoch_stats[i] = train_decoder(lexicon, view, labels[i], config, epoch);
      }
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::exception_ptr> errors(labels.size());
      std::vector<std::thread> workers;
      for (std::size_t w = 0; w < std::min(config.threads, labels.size()); ++w) {
        workers.emplace_back([&] {
          for (std::size_t i = next++; i < labels.size(); i = next++) {
            try {
              epoch_stats[i] = train_decoder(lexicon, view, labels[i], config, epoch);
            } catch (...) {
              errors[i] = std::current_exception();
            }
          }
        });
      }
      for (auto& t : workers) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    for (auto& s : epoch_stats) {
      s.epoch = epoch;
      all.push_back(std::move(s));
    }
  }
  return all;
}

}  // namespace complearn
