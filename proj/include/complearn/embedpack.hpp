#pragma once

// Embedding packs: labeled embedding rows plus category metadata, the only
// data interface to the learner. Also hosts the synthetic generator whose
// ground truth (owned dimensions and word signatures) backs the oracle tests.
//
// On disk a pack is a directory:
//   manifest.jsonl  header object (magic "EPK1") then one object per record
//   rows.f32        row-major little-endian float32, row_count x dim

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "complearn/numerics.hpp"

namespace complearn {

inline constexpr std::string_view kPackMagic = "EPK1";
inline constexpr int kPackVersion = 1;

enum class Split { train, test_nc, test_v };
enum class VocabSide { known, unknown };
enum class Provenance { real, synthetic };

std::string_view to_string(Split split);
std::string_view to_string(VocabSide side);
std::string_view to_string(Provenance provenance);
Split parse_split(std::string_view text);
VocabSide parse_vocab_side(std::string_view text);
Provenance parse_provenance(std::string_view text);

struct SampleRecord {
  std::string id;
  std::vector<std::string> labels;
  Split split = Split::train;
  VocabSide vocab_side = VocabSide::known;
  std::size_t row_index = 0;

  bool has_label(std::string_view word) const;
  bool operator==(const SampleRecord&) const = default;
};

struct Category {
  std::string name;
  std::vector<std::string> words;
  bool operator==(const Category&) const = default;
};

using LabelPair = std::pair<std::string, std::string>;

class CategoryMap {
 public:
  CategoryMap() = default;
  CategoryMap(std::vector<Category> categories, std::set<std::string> unknown_vocab);

  const std::vector<Category>& categories() const { return categories_; }
  const std::set<std::string>& unknown_vocab() const { return unknown_vocab_; }

  /// Category owning `word`, if any.
  std::optional<std::string> category_of(std::string_view word) const;
  std::optional<std::size_t> category_index(std::string_view category) const;
  bool contains(std::string_view word) const { return category_of(word).has_value(); }

  /// Distinct words of the same category cannot describe one entity.
  bool non_compatible(std::string_view a, std::string_view b) const;

  /// All words, category by category in declaration order.
  std::vector<std::string> vocabulary() const;
  std::vector<std::string> known_vocabulary() const;

  /// Label of `record` in `category`, if it has exactly one there.
  std::optional<std::string> label_in(const SampleRecord& record, std::string_view category) const;

  bool operator==(const CategoryMap& other) const {
    return categories_ == other.categories_ && unknown_vocab_ == other.unknown_vocab_;
  }

 private:
  std::vector<Category> categories_;
  std::set<std::string> unknown_vocab_;
  std::map<std::string, std::string, std::less<>> owner_;
};

/// Ground truth of a synthetic pack.
struct SyntheticTruth {
  std::map<std::string, std::vector<std::size_t>> category_dims;
  std::map<std::string, Vec32> signatures;  // over the owning category's dims, in order
  float noise_sigma = 0.0f;
  float variation_sigma = 0.0f;

  /// The noiseless embedding for a label tuple.
  Vec32 expected_row(const CategoryMap& categories, const std::vector<std::string>& labels,
                     std::size_t dim) const;
  bool operator==(const SyntheticTruth&) const = default;
};

struct EmbeddingPack {
  std::size_t dim = 0;
  Mat32 rows;  // row_count x dim
  std::vector<SampleRecord> records;
  CategoryMap category_map;
  Provenance provenance = Provenance::synthetic;
  std::optional<SyntheticTruth> synthetic_truth;
  std::vector<LabelPair> holdout_pairs;

  std::size_t row_count() const { return static_cast<std::size_t>(rows.rows()); }
  Vec32 row(std::size_t row_index) const { return rows.row(static_cast<Eigen::Index>(row_index)).transpose(); }
  Vec32 record_row(const SampleRecord& record) const { return row(record.row_index); }

  bool operator==(const EmbeddingPack& other) const;
};

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

std::vector<Category> default_categories();
std::vector<LabelPair> default_holdout_pairs();
std::vector<std::string> default_unknown_vocab();

struct SyntheticConfig {
  std::size_t dim = 512;
  std::vector<Category> categories = default_categories();
  std::size_t dims_per_category = 24;
  float noise_sigma = 0.05f;
  float variation_sigma = 0.15f;
  // Table-1 split sizes at quarter scale.
  std::size_t train_count = 1274;
  std::size_t test_nc_count = 311;
  std::size_t test_v_count = 247;
  std::vector<LabelPair> holdout_pairs = default_holdout_pairs();
  std::vector<std::string> unknown_vocab = default_unknown_vocab();
  std::uint64_t seed = 0;
};

/// Throws ConfigError for infeasible configurations.
EmbeddingPack generate_synthetic(const SyntheticConfig& config);

/// Fresh samples from the training distribution of a synthetic pack (same
/// signatures, non-holdout combinations, train noise). All records are
/// marked `train`.
EmbeddingPack generate_holdout(const EmbeddingPack& pack, std::size_t count, std::uint64_t seed);

/// Every label tuple (one word per category) of the pack's category map.
std::vector<std::vector<std::string>> all_label_tuples(const CategoryMap& categories);

bool tuple_has_holdout_pair(const std::vector<std::string>& labels, const std::vector<LabelPair>& pairs);

// ---------------------------------------------------------------------------
// IO, validation, views
// ---------------------------------------------------------------------------

void write_pack(const EmbeddingPack& pack, const std::filesystem::path& dir);
EmbeddingPack read_pack(const std::filesystem::path& dir);

struct Violation {
  std::string record_id;  // empty for pack-level rules
  std::string rule;
};

std::vector<Violation> validate_pack(const EmbeddingPack& pack);

/// Records of `split`, optionally restricted to one vocabulary side.
std::vector<SampleRecord> split_view(const EmbeddingPack& pack, Split split,
                                     std::optional<VocabSide> side = std::nullopt);

/// Indices into pack.records for the same filter.
std::vector<std::size_t> split_indices(const EmbeddingPack& pack, Split split,
                                       std::optional<VocabSide> side = std::nullopt);

/// Gathers the embeddings of the given records into a matrix.
template <typename T>
Matrix<T> gather_rows(const EmbeddingPack& pack, std::span<const std::size_t> record_indices) {
  Matrix<T> out(static_cast<Eigen::Index>(record_indices.size()), static_cast<Eigen::Index>(pack.dim));
  for (std::size_t i = 0; i < record_indices.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(pack.records[record_indices[i]].row_index);
    out.row(static_cast<Eigen::Index>(i)) = pack.rows.row(row).template cast<T>();
  }
  return out;
}

}  // namespace complearn
