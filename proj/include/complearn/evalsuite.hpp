#pragma once

// Evaluation protocols: top-k recognition, continual rounds, composition
// multiple choice and composition editing, plus the acceptance thresholds
// shared by `complearn check` and the acceptance suite.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "complearn/decoder.hpp"
#include "complearn/embedpack.hpp"
#include "complearn/lexicon.hpp"
#include "complearn/trainer.hpp"

namespace complearn {

// ---------------------------------------------------------------------------
// Recognition
// ---------------------------------------------------------------------------

struct RankedLabel {
  std::string label;
  double distance = 0.0;
};

struct RecognitionResult {
  std::string sample_id;
  std::vector<RankedLabel> ranked;  // every concept, ascending (distance, label)
  std::size_t top_k = 3;

  std::vector<std::string> top() const;
};

RecognitionResult recognize_topk(const Lexicon& lexicon, const Vec32& embedding, std::size_t k = 3,
                                 const std::string& sample_id = "");

/// rows x concepts matrix of mse(encode(entry, row), rep); concepts in
/// lexicon.labels() order. Untrained concepts get +inf.
Mat64 distance_matrix(const Lexicon& lexicon, const Mat32& rows);

struct CategoryAccuracy {
  std::string category;
  std::size_t hits = 0;
  std::size_t count = 0;
  double accuracy = 0.0;
  bool operator==(const CategoryAccuracy&) const = default;
};

struct EvalReport {
  std::string name;
  std::string method = "ours";
  std::string split;
  std::string vocab_side = "all";
  std::size_t top_k = 0;
  std::size_t count = 0;
  std::vector<CategoryAccuracy> per_category;
  std::size_t all_hits = 0;
  double all_accuracy = 0.0;
  std::string config_hash;
  std::string lexicon_hash;

  const CategoryAccuracy* category(const std::string& name) const;
  std::string to_json() const;
  static std::string csv_header();
  /// One line per category plus an "all" line.
  std::string to_csv() const;
  bool operator==(const EvalReport&) const = default;
};

/// Ranks `labels` by ascending `cost` (rows aligned with `record_indices`,
/// columns with `labels`), ties broken by label, and scores the top k
/// against the records' labels. k = 0 means one slot per category.
EvalReport score_topk(const EmbeddingPack& pack, const std::vector<std::size_t>& record_indices,
                      const std::vector<std::string>& labels, const Mat64& cost, std::size_t k = 0);

/// Records of several splits (optionally one vocabulary side).
std::vector<std::size_t> records_of(const EmbeddingPack& pack, const std::vector<Split>& splits,
                                    std::optional<VocabSide> side = std::nullopt);

EvalReport eval_recognition(const Lexicon& lexicon, const EmbeddingPack& pack,
                            const std::vector<std::size_t>& record_indices, std::size_t k = 0);
EvalReport eval_recognition(const Lexicon& lexicon, const EmbeddingPack& pack, Split split,
                            std::optional<VocabSide> side = std::nullopt, std::size_t k = 0);

// ---------------------------------------------------------------------------
// Filter selectivity
// ---------------------------------------------------------------------------

struct SelectivityResult {
  std::string label;
  double on_mass = 0.0;   // mean sigmoid(F) over the word's category dims
  double off_mass = 0.0;  // mean elsewhere
  double ratio = 0.0;
};

std::vector<SelectivityResult> filter_selectivity(const Lexicon& lexicon, const EmbeddingPack& pack);

// ---------------------------------------------------------------------------
// Continual protocol
// ---------------------------------------------------------------------------

struct ContinualConfig {
  TrainConfig train;
  LexiconConfig lexicon;
  bool include_full_retrain = true;  // our method on known+unknown (path B)
  bool include_linear = true;
  std::size_t baseline_steps = 1500;
};

struct ContinualResult {
  EvalReport round1_known;
  EvalReport round2_unknown_only_known;
  EvalReport round2_unknown_only_full;
  std::optional<EvalReport> round2_full_known;
  std::optional<EvalReport> round2_full_full;
  std::optional<EvalReport> linear_round1_known;
  std::optional<EvalReport> linear_round2_known;
  std::optional<EvalReport> linear_round2_full;
  bool known_entries_unchanged = false;
  std::size_t known_entries_checked = 0;

  std::string to_json() const;
};

/// Round 1 trains the known vocabulary on the known-side train records.
/// Path A then trains only the unknown words on the unknown-side records;
/// path B trains every word on the whole train split. The linear baseline
/// is rebuilt for the larger vocabulary in round 2. "known" reports cover
/// the known-side test records, "full" reports every test record.
ContinualResult continual_protocol(const EmbeddingPack& pack, const ContinualConfig& config);

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

struct McItem {
  std::string p;
  std::string q;
  std::array<std::size_t, 3> choices{};  // record indices
  std::size_t correct = 0;
};

/// One item: a record matching both words plus one record sharing only p
/// and one sharing only q, in shuffled order. Rows come from train and
/// test_nc. Returns nullopt if the drawn pair has no valid distractors.
std::optional<McItem> draw_mc_item(const EmbeddingPack& pack, const Lexicon& lexicon, Rng& rng);

struct McResult {
  std::size_t runs = 0;
  std::size_t items_per_run = 0;
  std::vector<double> run_accuracy;
  double mean = 0.0;
  double stddev = 0.0;
  std::map<std::string, double> per_category_pair;  // "color+shape" -> accuracy

  std::string to_json() const;
};

/// mental = decode_rep(p) + decode_rep(q); the choice with the smallest MSE
/// to it is the answer. Throws DomainError naming concepts without decoder.
McResult composition_mc(const Lexicon& lexicon, const EmbeddingPack& pack, std::size_t runs,
                        std::size_t items_per_run, std::uint64_t seed);

struct EditEvalResult {
  std::size_t requested = 0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // no row with the edited label tuple
  double mean_ratio = 0.0;
  std::map<std::string, double> per_category;
  std::size_t identity_checked = 0;
  std::size_t identity_mismatches = 0;  // edit(e, p, p) != reconstruct(e, p) bitwise

  std::string to_json() const;
};

/// For each sampled (record, q -> p) within one category: ratio =
/// MSE(edit(e_q, q, p), e_target) / MSE(e_q, e_target) where e_target is
/// the row carrying the edited label tuple closest to e_q. Rows come from
/// train and test_nc.
EditEvalResult composition_edit_eval(const Lexicon& lexicon, const EmbeddingPack& pack, std::size_t n_pairs,
                                     std::uint64_t seed);

/// Copy of `lexicon` whose decoders are freshly initialized from `seed`.
Lexicon with_untrained_decoders(const Lexicon& lexicon, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Acceptance thresholds (single table)
// ---------------------------------------------------------------------------

namespace thresholds {
inline constexpr int kVersion = 1;
inline constexpr double kGradRelError = 1e-4;
inline constexpr std::size_t kGradMinCoords = 100;
inline constexpr double kGradSeconds = 60.0;
inline constexpr double kHoldoutAll = 0.95;
inline constexpr double kNovelAll = 0.85;
inline constexpr double kVariationAll = 0.70;
inline constexpr double kPipelineSeconds = 600.0;
inline constexpr double kSelectivityRatio = 3.0;
inline constexpr double kMaxKnownDrop = 0.10;
inline constexpr std::size_t kOrderingSeeds = 5;
inline constexpr std::size_t kOrderingWins = 4;
inline constexpr double kMcAccuracy = 0.90;
inline constexpr double kMcChance = 0.33;
inline constexpr double kMcChanceTolerance = 0.05;
inline constexpr double kEditZeroNoise = 0.10;
inline constexpr double kEditNoisy = 0.35;
inline constexpr double kLossFormulaTolerance = 1e-6;
}  // namespace thresholds

}  // namespace complearn
