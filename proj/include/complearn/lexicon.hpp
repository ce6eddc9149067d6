#pragma once

// The concept memory: label -> {filter, encoder, decoder, prototype}.
//
// Store layout (one directory per lexicon):
//   index.json               version, dims, seed, per-concept file + checksum
//   concepts/<label>-<checksum>.bin
// Concept files are content addressed, so a save only writes concepts that
// changed and the index rename is the single commit point.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "complearn/numerics.hpp"

namespace complearn {

inline constexpr std::size_t kDefaultHiddenDim = 128;
inline constexpr std::size_t kDefaultLatentDim = 16;
inline constexpr std::array<std::size_t, 3> kDecoderHiddenDims = {64, 64, 96};
inline constexpr int kStoreVersion = 1;

// ---------------------------------------------------------------------------
// Filter + encoder graph
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderCache {
  Matrix<T> input;
  Vector<T> mask;
  Matrix<T> masked;
  Matrix<T> hidden;  // after activation
};

/// The word's filter and its two fully connected layers.
template <typename T>
struct EncoderT {
  Vector<T> filter_raw;
  Vector<T> grad_filter;
  LinearLayerT<T> hidden;
  LinearLayerT<T> latent;

  static EncoderT init(std::size_t embedding_dim, std::size_t hidden_dim, std::size_t latent_dim, Rng& rng) {
    EncoderT e;
    e.filter_raw = Vector<T>::Zero(static_cast<Eigen::Index>(embedding_dim));
    e.grad_filter = Vector<T>::Zero(static_cast<Eigen::Index>(embedding_dim));
    e.hidden = LinearLayerT<T>::uniform(embedding_dim, hidden_dim, rng);
    e.latent = LinearLayerT<T>::uniform(hidden_dim, latent_dim, rng);
    return e;
  }

  std::size_t embedding_dim() const { return static_cast<std::size_t>(filter_raw.size()); }
  std::size_t latent_dim() const { return latent.out_dim(); }

  Matrix<T> forward(const Matrix<T>& x, EncoderCache<T>* cache = nullptr) const {
    if (x.cols() != filter_raw.size()) {
      throw ShapeError("encode: embedding dim " + std::to_string(x.cols()) + " != concept dim " +
                       std::to_string(filter_raw.size()));
    }
    Vector<T> mask = sigmoid(filter_raw);
    Matrix<T> masked = (x.array().rowwise() * mask.transpose().array()).matrix();
    Matrix<T> h = activate(linear_forward_batch(hidden, masked));
    Matrix<T> r = linear_forward_batch(latent, h);
    if (cache) {
      cache->input = x;
      cache->mask = std::move(mask);
      cache->masked = std::move(masked);
      cache->hidden = std::move(h);
    }
    return r;
  }

  /// Accumulates gradients of all encoder parameters (filter included).
  void backward(const EncoderCache<T>& cache, const Matrix<T>& grad_latent) {
    Matrix<T> grad_h = linear_backward_batch(latent, cache.hidden, grad_latent);
    Matrix<T> grad_z = activate_backward(cache.hidden, grad_h);
    Matrix<T> grad_masked = linear_backward_batch(hidden, cache.masked, grad_z);
    const Vector<T> through_mask = (grad_masked.array() * cache.input.array()).colwise().sum().transpose();
    grad_filter.array() += through_mask.array() * cache.mask.array() * (T(1) - cache.mask.array());
  }

  void zero_grad() {
    grad_filter.setZero();
    hidden.zero_grad();
    latent.zero_grad();
  }

  template <typename U>
  EncoderT<U> cast() const {
    EncoderT<U> out;
    out.filter_raw = filter_raw.template cast<U>();
    out.grad_filter = grad_filter.template cast<U>();
    out.hidden = hidden.template cast<U>();
    out.latent = latent.template cast<U>();
    return out;
  }
};

using Encoder = EncoderT<float>;

// ---------------------------------------------------------------------------
// Decoder graph: latent -> 64 -> 64 -> 96 -> embedding
// ---------------------------------------------------------------------------

template <typename T>
struct DecoderCache {
  std::array<Matrix<T>, 4> inputs;          // input of each layer (post dropout)
  std::array<Matrix<T>, 3> activated;       // hidden activations before dropout
  std::array<Matrix<T>, 3> dropout_masks;
};

template <typename T>
struct DecoderT {
  std::array<LinearLayerT<T>, 4> layers;

  static DecoderT init(std::size_t latent_dim, std::size_t embedding_dim, Rng& rng) {
    DecoderT d;
    std::size_t in = latent_dim;
    for (std::size_t i = 0; i < 3; ++i) {
      d.layers[i] = LinearLayerT<T>::uniform(in, kDecoderHiddenDims[i], rng);
      in = kDecoderHiddenDims[i];
    }
    d.layers[3] = LinearLayerT<T>::uniform(in, embedding_dim, rng);
    return d;
  }

  std::size_t latent_dim() const { return layers[0].in_dim(); }
  std::size_t embedding_dim() const { return layers[3].out_dim(); }

  /// Dropout after each hidden activation; pass nullptr for inference.
  Matrix<T> forward(const Matrix<T>& input, DropoutState* dropout = nullptr,
                    DecoderCache<T>* cache = nullptr) const {
    Matrix<T> x = input;
    for (std::size_t i = 0; i < 3; ++i) {
      if (cache) cache->inputs[i] = x;
      Matrix<T> h = activate(linear_forward_batch(layers[i], x));
      if (cache) cache->activated[i] = h;
      Matrix<T> mask = dropout ? dropout->apply(h) : Matrix<T>::Ones(h.rows(), h.cols());
      if (cache) cache->dropout_masks[i] = std::move(mask);
      x = std::move(h);
    }
    if (cache) cache->inputs[3] = x;
    return linear_forward_batch(layers[3], x);
  }

  void backward(const DecoderCache<T>& cache, const Matrix<T>& grad_out) {
    Matrix<T> g = linear_backward_batch(layers[3], cache.inputs[3], grad_out);
    for (int i = 2; i >= 0; --i) {
      const auto k = static_cast<std::size_t>(i);
      g = (g.array() * cache.dropout_masks[k].array()).matrix();
      g = activate_backward(cache.activated[k], g);
      g = linear_backward_batch(layers[k], cache.inputs[k], g);
    }
  }

  void zero_grad() {
    for (auto& l : layers) l.zero_grad();
  }

  template <typename U>
  DecoderT<U> cast() const {
    DecoderT<U> out;
    for (std::size_t i = 0; i < layers.size(); ++i) out.layers[i] = layers[i].template cast<U>();
    return out;
  }

  bool operator==(const DecoderT& other) const { return layers == other.layers; }
};

using Decoder = DecoderT<float>;

// ---------------------------------------------------------------------------
// Concept entries and the lexicon
// ---------------------------------------------------------------------------

struct ConceptEntry {
  std::string label;
  std::string category;
  Encoder encoder;
  std::optional<Decoder> decoder;
  std::optional<Vec32> rep;
  std::uint64_t sample_count = 0;
  std::int64_t trained_rounds = 0;

  const Vec32& filter_raw() const { return encoder.filter_raw; }
  bool trained() const { return rep.has_value() && sample_count > 0; }
};

struct LexiconConfig {
  std::size_t embedding_dim = 512;
  std::size_t hidden_dim = kDefaultHiddenDim;
  std::size_t latent_dim = kDefaultLatentDim;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(LexiconConfig config);

  /// Creates a freshly initialized entry; throws DomainError on duplicates.
  ConceptEntry& add_concept(const std::string& label, const std::string& category);

  /// Attaches a freshly initialized decoder if the entry has none.
  Decoder& ensure_decoder(const std::string& label);

  bool contains(const std::string& label) const { return entries_.contains(label); }
  ConceptEntry& at(const std::string& label);
  const ConceptEntry& at(const std::string& label) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, ConceptEntry>& entries() const { return entries_; }
  std::vector<std::string> labels() const;

  const LexiconConfig& config() const { return config_; }
  std::size_t embedding_dim() const { return config_.embedding_dim; }
  std::size_t latent_dim() const { return config_.latent_dim; }

  /// Restores a deserialized entry (store loading).
  void insert_entry(ConceptEntry entry);

 private:
  LexiconConfig config_;
  std::map<std::string, ConceptEntry> entries_;
};

/// r = Enc(mask(F, e)); deterministic.
Vec32 encode(const ConceptEntry& entry, const Vec32& embedding);

template <typename T>
Matrix<T> encode_batch(const ConceptEntry& entry, const Matrix<T>& embeddings) {
  if constexpr (std::is_same_v<T, float>) {
    return entry.encoder.forward(embeddings);
  } else {
    return entry.encoder.template cast<T>().forward(embeddings);
  }
}

std::vector<std::uint8_t> serialize_entry(const ConceptEntry& entry);
ConceptEntry deserialize_entry(std::span<const std::uint8_t> bytes, const std::string& context);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t value);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t entry_hash(const ConceptEntry& entry);
std::uint64_t lexicon_hash(const Lexicon& lexicon);

void save_store(const Lexicon& lexicon, const std::filesystem::path& dir);
Lexicon load_store(const std::filesystem::path& dir);

}  // namespace complearn
