#include "complearn/trainer.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace complearn {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(loss_threshold > 0.0 && loss_threshold < 1.0)) throw ConfigError("loss_threshold must lie in (0, 1)");
  if (max_rounds == 0) throw ConfigError("max_rounds must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(filter_lr_scale > 0.0)) throw ConfigError("filter_lr_scale must be positive");
  if (filter_sparsity < 0.0) throw ConfigError("filter_sparsity must be >= 0");
  if (decoder_rounds == 0) throw ConfigError("decoder_rounds must be positive");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (threads == 0) throw ConfigError("threads must be positive");
}

// ---------------------------------------------------------------------------
// PackView
// ---------------------------------------------------------------------------

PackView::PackView(const EmbeddingPack& pack, std::vector<std::size_t> record_indices)
    : pack_(&pack), records_(std::move(record_indices)) {
  const auto& cats = pack.category_map.categories();
  for (std::size_t c = 0; c < cats.size(); ++c) {
    for (std::size_t w = 0; w < cats[c].words.size(); ++w) {
      word_index_.emplace(cats[c].words[w], std::make_pair(c, static_cast<int>(w)));
    }
  }
  word_ids_.assign(pack.records.size(), std::vector<int>(cats.size(), -1));
  buckets_.resize(cats.size());
  for (std::size_t rec : records_) {
    if (rec >= pack.records.size()) throw DomainError("PackView: record index out of range");
    for (const std::string& l : pack.records[rec].labels) {
      by_label_[l].push_back(rec);
      auto it = word_index_.find(l);
      if (it != word_index_.end()) {
        auto& slot = word_ids_[rec][it->second.first];
        // A record with two labels in one category is ambiguous there.
        slot = slot == -1 ? it->second.second : -2;
      }
    }
  }
  for (std::size_t rec : records_) {
    for (std::size_t c = 0; c < cats.size(); ++c) buckets_[c][key_without(rec, c)].push_back(rec);
  }
}

PackView PackView::of_split(const EmbeddingPack& pack, Split split, std::optional<VocabSide> side) {
  return PackView(pack, split_indices(pack, split, side));
}

std::string PackView::key_without(std::size_t record, std::size_t category) const {
  std::string key;
  const auto& ids = word_ids_[record];
  for (std::size_t c = 0; c < ids.size(); ++c) {
    key += c == category ? std::string("*") : std::to_string(ids[c]);
    key += '|';
  }
  return key;
}

std::span<const std::size_t> PackView::with_label(const std::string& word) const {
  auto it = by_label_.find(word);
  if (it == by_label_.end()) return {};
  return it->second;
}

std::vector<std::size_t> PackView::non_compatible_with(const std::string& word) const {
  std::vector<std::size_t> out;
  auto it = word_index_.find(word);
  if (it == word_index_.end()) return out;
  const auto [cat, id] = it->second;
  for (std::size_t rec : records_) {
    const int w = word_ids_[rec][cat];
    if (w >= 0 && w != id) out.push_back(rec);
  }
  return out;
}

std::vector<std::size_t> PackView::aligned_alternatives(std::size_t record, const std::string& word) const {
  std::vector<std::size_t> out;
  auto it = word_index_.find(word);
  if (it == word_index_.end()) return out;
  const auto [cat, id] = it->second;
  auto b = buckets_[cat].find(key_without(record, cat));
  if (b == buckets_[cat].end()) return out;
  for (std::size_t rec : b->second) {
    const int w = word_ids_[rec][cat];
    if (w >= 0 && w != id) out.push_back(rec);
  }
  return out;
}

std::vector<std::size_t> PackView::aligned_with_value(std::size_t record, const std::string& replacement) const {
  std::vector<std::size_t> out;
  auto it = word_index_.find(replacement);
  if (it == word_index_.end()) return out;
  const auto [cat, id] = it->second;
  auto b = buckets_[cat].find(key_without(record, cat));
  if (b == buckets_[cat].end()) return out;
  for (std::size_t rec : b->second) {
    if (word_ids_[rec][cat] == id) out.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batches and loss
// ---------------------------------------------------------------------------

std::size_t ComparisonBatchPair::fallback_count() const {
  return static_cast<std::size_t>(std::count(aligned.begin(), aligned.end(), false));
}

ComparisonBatchPair assemble_batches(const PackView& view, const std::string& target_label, std::size_t batch_size,
                                     Rng& rng) {
  if (batch_size == 0) throw DomainError("assemble_batches: batch_size must be positive");
  const auto positives = view.with_label(target_label);
  if (positives.empty()) throw DomainError("label '" + target_label + "' absent from the training split");
  const auto pool = view.non_compatible_with(target_label);
  if (pool.empty()) throw DomainError("no non-compatible samples for label '" + target_label + "'");

  ComparisonBatchPair pair;
  pair.target_label = target_label;
  pair.sim.reserve(batch_size);
  pair.diff.reserve(batch_size);
  pair.aligned.reserve(batch_size);
  std::uniform_int_distribution<std::size_t> pick_pos(0, positives.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_pool(0, pool.size() - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t s = positives[pick_pos(rng)];
    pair.sim.push_back(s);
    const auto candidates = view.aligned_alternatives(s, target_label);
    if (!candidates.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      pair.diff.push_back(candidates[pick(rng)]);
      pair.aligned.push_back(true);
    } else {
      pair.diff.push_back(pool[pick_pool(rng)]);
      pair.aligned.push_back(false);
    }
  }
  return pair;
}

LossResult comparative_loss(const ConceptEntry& entry, const ComparisonBatchPair& pair, const EmbeddingPack& pack) {
  if (entry.encoder.embedding_dim() != pack.dim) throw ShapeError("comparative_loss: concept dim != pack dim");
  Encoder encoder = entry.encoder;
  const Mat32 sim = gather_rows<float>(pack, pair.sim);
  const Mat32 diff = gather_rows<float>(pack, pair.diff);
  const ComparativeTerms terms = comparative_objective(encoder, sim, diff, nullptr, false);
  if (!std::isfinite(terms.loss)) throw NumericError("comparative_loss: non-finite loss");
  return {terms.loss, terms.loss_s, terms.loss_d, terms.centroid.cast<float>()};
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

std::string TrainStats::to_json_line() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["label"] = label;
  j["epoch"] = epoch;
  j["rounds"] = rounds;
  j["loss"] = loss;
  j["loss_s"] = loss_s;
  j["loss_d"] = loss_d;
  j["wall_ms"] = wall_ms;
  j["fallback_pairs"] = fallback_pairs;
  j["converged"] = converged;
  if (!note.empty()) j["note"] = note;
  return j.dump();
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::vector<ParamRef> encoder_params(Encoder& enc, const TrainConfig& config) {
  return {
      {as_span(enc.filter_raw), as_span(enc.grad_filter), static_cast<float>(config.filter_lr_scale)},
      {as_span(enc.hidden.weights), as_span(enc.hidden.grad_weights)},
      {as_span(enc.hidden.bias), as_span(enc.hidden.grad_bias)},
      {as_span(enc.latent.weights), as_span(enc.latent.grad_weights)},
      {as_span(enc.latent.bias), as_span(enc.latent.grad_bias)},
  };
}

void add_sparsity_gradient(Encoder& enc, double weight) {
  if (weight <= 0.0) return;
  const auto dim = static_cast<double>(enc.filter_raw.size());
  const Vec32 s = sigmoid(enc.filter_raw);
  enc.grad_filter.array() += static_cast<float>(weight / dim) * s.array() * (1.0f - s.array());
}

std::vector<std::size_t> sample_with_replacement(std::span<const std::size_t> from, std::size_t n, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, from.size() - 1);
  std::vector<std::size_t> out(n);
  for (auto& v : out) v = from[pick(rng)];
  return out;
}

std::string describe_failure(const std::string& label, std::size_t round, const ComparativeTerms& t) {
  std::ostringstream os;
  os << "training '" << label << "' produced a non-finite loss at round " << round << " (loss_s=" << t.loss_s
     << ", loss_d=" << t.loss_d << ")";
  return os.str();
}

// Shared loop of train_concept and refine_concept.
TrainStats optimize_concept(ConceptEntry& entry, const PackView& view, const TrainConfig& config,
                            const CentroidPrior* prior, Rng& rng) {
  const auto start = Clock::now();
  TrainStats stats;
  stats.label = entry.label;
  OptimizerState optimizer(AdamConfig{config.learning_rate});
  Encoder& enc = entry.encoder;
  enc.zero_grad();
  const auto params = encoder_params(enc, config);

  for (std::size_t round = 1; round <= config.max_rounds; ++round) {
    const ComparisonBatchPair pair = assemble_batches(view, entry.label, config.batch_size, rng);
    stats.fallback_pairs += pair.fallback_count();
    const Mat32 sim = gather_rows<float>(view.pack(), pair.sim);
    const Mat32 diff = gather_rows<float>(view.pack(), pair.diff);
    const ComparativeTerms terms = comparative_objective(enc, sim, diff, prior, true);
    if (!std::isfinite(terms.loss)) {
      enc.zero_grad();
      throw NumericError(describe_failure(entry.label, round, terms));
    }
    add_sparsity_gradient(enc, config.filter_sparsity);
    optimizer.step(params);

    stats.rounds = round;
    stats.loss = terms.loss;
    stats.loss_s = terms.loss_s;
    stats.loss_d = terms.loss_d;
    stats.loss_history.push_back(terms.loss);
    if (terms.loss < config.loss_threshold) {
      stats.converged = true;
      break;
    }
  }
  entry.trained_rounds += static_cast<std::int64_t>(stats.rounds);
  stats.wall_ms = elapsed_ms(start);
  return stats;
}

Vec64 fresh_similarity_sum(const ConceptEntry& entry, const PackView& view, std::size_t n, Rng& rng) {
  const auto indices = sample_with_replacement(view.with_label(entry.label), n, rng);
  const Mat32 reps = entry.encoder.forward(gather_rows<float>(view.pack(), indices));
  return reps.cast<double>().colwise().sum().transpose();
}

}  // namespace

TrainStats train_concept(Lexicon& lexicon, const PackView& view, const std::string& label, const TrainConfig& config) {
  config.validate();
  const auto category = view.pack().category_map.category_of(label);
  if (!category) throw DomainError("label '" + label + "' is not in the pack vocabulary");
  if (view.pack().dim != lexicon.embedding_dim()) {
    throw ShapeError("pack dim " + std::to_string(view.pack().dim) + " != lexicon dim " +
                     std::to_string(lexicon.embedding_dim()));
  }
  if (view.with_label(label).empty()) throw DomainError("label '" + label + "' absent from the training split");
  if (!lexicon.contains(label)) lexicon.add_concept(label, *category);
  ConceptEntry& entry = lexicon.at(label);

  Rng rng(derive_seed(config.seed, "train:" + label + ":" + std::to_string(entry.trained_rounds)));
  TrainStats stats = optimize_concept(entry, view, config, nullptr, rng);

  const Vec64 sum = fresh_similarity_sum(entry, view, config.batch_size, rng);
  entry.rep = (sum / static_cast<double>(config.batch_size)).cast<float>();
  entry.sample_count = config.batch_size;
  return stats;
}

TrainStats train_concept(Lexicon& lexicon, const EmbeddingPack& pack, const std::string& label,
                         const TrainConfig& config) {
  return train_concept(lexicon, PackView::of_split(pack, Split::train), label, config);
}

std::vector<TrainStats> train_vocabulary(Lexicon& lexicon, const PackView& view,
                                         const std::vector<std::string>& labels, const TrainConfig& config) {
  config.validate();
  for (const std::string& label : labels) {
    const auto category = view.pack().category_map.category_of(label);
    if (!category) throw DomainError("label '" + label + "' is not in the pack vocabulary");
    if (view.with_label(label).empty()) throw DomainError("label '" + label + "' absent from the training split");
    if (!lexicon.contains(label)) lexicon.add_concept(label, *category);
  }

  std::vector<TrainStats> all;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<TrainStats> epoch_stats(labels.size());
    if (config.threads <= 1 || labels.size() <= 1) {
      for (std::size_t i = 0; i < labels.size(); ++i) {
        epoch_stats[i] = train_concept(lexicon, view, labels[i], config);
      }
    } else {
      // Entries are disjoint, so concepts can train side by side; results are
      // identical to the sequential order because every concept owns its RNG.
      std::atomic<std::size_t> next{0};
      std::vector<std::exception_ptr> errors(labels.size());
      std::vector<std::thread> workers;
      const std::size_t n_workers = std::min(config.threads, labels.size());
      for (std::size_t w = 0; w < n_workers; ++w) {
        workers.emplace_back([&] {
          for (std::size_t i = next++; i < labels.size(); i = next++) {
            try {
              epoch_stats[i] = train_concept(lexicon, view, labels[i], config);
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

std::vector<TrainStats> train_vocabulary(Lexicon& lexicon, const EmbeddingPack& pack,
                                         const std::vector<std::string>& labels, const TrainConfig& config) {
  return train_vocabulary(lexicon, PackView::of_split(pack, Split::train), labels, config);
}

TrainStats refine_concept(Lexicon& lexicon, const PackView& new_samples, const std::string& label,
                          const TrainConfig& config) {
  config.validate();
  ConceptEntry& entry = lexicon.at(label);
  if (!entry.trained()) throw DomainError("refine: concept '" + label + "' has not been trained");
  if (new_samples.pack().dim != lexicon.embedding_dim()) throw ShapeError("refine: pack dim != lexicon dim");
  if (new_samples.with_label(label).empty()) {
    TrainStats stats;
    stats.kind = "refine";
    stats.label = label;
    stats.note = "no new samples for '" + label + "'; concept unchanged";
    return stats;
  }

  Rng rng(derive_seed(config.seed, "refine:" + label + ":" + std::to_string(entry.trained_rounds)));
  const CentroidPrior prior{entry.rep->cast<double>(), static_cast<double>(entry.sample_count)};
  TrainStats stats = optimize_concept(entry, new_samples, config, &prior, rng);
  stats.kind = "refine";

  const Vec64 sum = fresh_similarity_sum(entry, new_samples, config.batch_size, rng);
  const double total = prior.count + static_cast<double>(config.batch_size);
  entry.rep = ((prior.count * prior.rep + sum) / total).cast<float>();
  entry.sample_count += config.batch_size;
  return stats;
}

}  // namespace complearn
