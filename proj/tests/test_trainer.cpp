#include <gtest/gtest.h>

#include <set>

#include "complearn/trainer.hpp"
#include "support.hpp"

using namespace complearn;
using namespace complearn::testing;

namespace {

EmbeddingPack tiny_pack(const Mat32& rows, const std::vector<std::vector<std::string>>& labels) {
  EmbeddingPack pack;
  pack.dim = static_cast<std::size_t>(rows.cols());
  pack.rows = rows;
  pack.category_map = CategoryMap({{"color", {"red", "blue"}}, {"shape", {"cube", "ball"}}}, {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pack.records.push_back({"r" + std::to_string(i), labels[i], Split::train, VocabSide::known, i});
  }
  return pack;
}

// Independent scalar forward pass of one masked sample through the encoder.
std::vector<double> encode_by_hand(const Encoder& e, const Vec32& x) {
  const auto H = e.hidden.out_dim(), K = e.latent.out_dim(), D = e.embedding_dim();
  std::vector<double> h(H), r(K);
  for (std::size_t j = 0; j < H; ++j) {
    double acc = e.hidden.bias[static_cast<Eigen::Index>(j)];
    for (std::size_t i = 0; i < D; ++i) {
      const double mask = 1.0 / (1.0 + std::exp(-static_cast<double>(e.filter_raw[static_cast<Eigen::Index>(i)])));
      acc += e.hidden.weights(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) * mask *
             x[static_cast<Eigen::Index>(i)];
    }
    h[j] = std::tanh(acc);
  }
  for (std::size_t k = 0; k < K; ++k) {
    double acc = e.latent.bias[static_cast<Eigen::Index>(k)];
    for (std::size_t j = 0; j < H; ++j) acc += e.latent.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) * h[j];
    r[k] = acc;
  }
  return r;
}

double mean_sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST(Trainer, LossFormulaMatchesHandComputationOnTwoSampleBatches) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    Mat32 rows(4, 5);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = g(rng);
    const EmbeddingPack pack = tiny_pack(rows, {{"red", "cube"}, {"red", "ball"}, {"blue", "cube"}, {"blue", "ball"}});
    Lexicon lex({.embedding_dim = 5, .hidden_dim = 3, .latent_dim = 2, .seed = seed});
    auto& entry = lex.add_concept("red", "color");
    for (Eigen::Index i = 0; i < 5; ++i) entry.encoder.filter_raw[i] = g(rng);

    ComparisonBatchPair pair{"red", {0, 1}, {2, 3}, {true, true}};
    const LossResult got = comparative_loss(entry, pair, pack);

    std::vector<std::vector<double>> r;
    for (int i = 0; i < 4; ++i) r.push_back(encode_by_hand(entry.encoder, rows.row(i).transpose()));
    std::vector<double> c(2);
    for (int k = 0; k < 2; ++k) c[static_cast<std::size_t>(k)] = (r[0][static_cast<std::size_t>(k)] + r[1][static_cast<std::size_t>(k)]) / 2;
    const double ls = (mean_sq(r[0], c) + mean_sq(r[1], c)) / 2;
    const double ld = (mean_sq(r[2], c) + mean_sq(r[3], c)) / 2;
    const double expected = ls * ls + (1 - ld) * (1 - ld);
    EXPECT_NEAR(got.loss, expected, 1e-6) << seed;
    EXPECT_NEAR(got.loss_s, ls, 1e-6);
    EXPECT_NEAR(got.loss_d, ld, 1e-6);
    EXPECT_NEAR(got.rep_candidate[0], c[0], 1e-5);
  }
}

TEST(Trainer, ComparativeGradientMatchesFiniteDifference) {
  Rng rng(2);
  EncoderT<double> enc = EncoderT<double>::init(12, 6, 4, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < 12; ++i) enc.filter_raw[i] = g(rng);
  Mat64 sim(5, 12), diff(4, 12);
  for (Eigen::Index i = 0; i < sim.size(); ++i) sim.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < diff.size(); ++i) diff.data()[i] = g(rng);
  CentroidPrior prior{Vec64::Random(4), 7.0};

  const std::vector<const CentroidPrior*> priors = {nullptr, &prior};
  for (const CentroidPrior* p : priors) {
    auto value = [&](std::span<const double> flat) {
      EncoderT<double> e = enc;
      blocks_of(e).set(flat);
      return comparative_objective(e, sim, diff, p, false).loss;
    };
    auto gradient = [&](std::span<const double> flat) {
      EncoderT<double> e = enc;
      auto b = blocks_of(e);
      b.set(flat);
      e.zero_grad();
      comparative_objective(e, sim, diff, p, true);
      return b.get(true);
    };
    const auto res = finite_diff_check({value, gradient}, blocks_of(enc).get(false), {.step = 1e-5});
    EXPECT_LT(res.max_rel_error, 1e-6) << (p ? "prior" : "no prior") << " coord " << res.worst_coord;
  }
}

TEST(Trainer, PriorShiftsCentroidAsRunningMean) {
  Rng rng(3);
  EncoderT<double> enc = EncoderT<double>::init(6, 4, 3, rng);
  const Mat64 sim = Mat64::Random(4, 6), diff = Mat64::Random(4, 6);
  const CentroidPrior prior{Vec64::Constant(3, 2.0), 12.0};
  const auto base = comparative_objective(enc, sim, diff, nullptr, false);
  const auto with = comparative_objective(enc, sim, diff, &prior, false);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(with.centroid[k], (12.0 * 2.0 + 4.0 * base.centroid[k]) / 16.0, 1e-12);
}

TEST(Trainer, AlignmentMatchesExhaustiveSearch) {
  const EmbeddingPack pack = small_pack(21);
  const PackView view = PackView::of_split(pack, Split::train);
  const auto& cmap = pack.category_map;
  auto differs_only_in = [&](const SampleRecord& a, const SampleRecord& b, const std::string& cat) {
    for (const auto& c : cmap.categories()) {
      const auto la = cmap.label_in(a, c.name), lb = cmap.label_in(b, c.name);
      if (c.name == cat ? la == lb : la != lb) return false;
    }
    return true;
  };
  Rng rng(1);
  for (const std::string word : {"red", "glass", "cube", "torus_knot"}) {
    const auto cat = *cmap.category_of(word);
    const auto sims = view.with_label(word);
    for (std::size_t s : std::vector<std::size_t>(sims.begin(), sims.begin() + std::min<std::size_t>(sims.size(), 30))) {
      std::set<std::size_t> brute;
      for (std::size_t r : view.records()) {
        if (differs_only_in(pack.records[s], pack.records[r], cat)) brute.insert(r);
      }
      const auto got = view.aligned_alternatives(s, word);
      EXPECT_EQ(std::set<std::size_t>(got.begin(), got.end()), brute) << word;
    }
    const auto pair = assemble_batches(view, word, 64, rng);
    ASSERT_EQ(pair.sim.size(), 64u);
    ASSERT_EQ(pair.diff.size(), 64u);
    for (std::size_t i = 0; i < 64; ++i) {
      const auto& a = pack.records[pair.sim[i]];
      const auto& b = pack.records[pair.diff[i]];
      EXPECT_TRUE(a.has_label(word));
      EXPECT_TRUE(cmap.non_compatible(word, *cmap.label_in(b, cat)));
      EXPECT_EQ(static_cast<bool>(pair.aligned[i]), differs_only_in(a, b, cat));
      if (!pair.aligned[i]) EXPECT_TRUE(view.aligned_alternatives(pair.sim[i], word).empty());
    }
  }
}

TEST(Trainer, BatchesNeedPositivesAndNegatives) {
  const EmbeddingPack pack = small_pack(22);
  const PackView known = PackView::of_split(pack, Split::train, VocabSide::known);
  Rng rng(1);
  EXPECT_THROW(assemble_batches(known, "glass", 8, rng), DomainError);
  EXPECT_THROW(assemble_batches(known, "red", 0, rng), DomainError);
}

TEST(Trainer, StopRuleAndStatsAreConsistent) {
  const EmbeddingPack pack = small_pack(23);
  Lexicon lex({.embedding_dim = pack.dim, .seed = 23});
  TrainConfig tc;
  tc.seed = 23;
  tc.epochs = 2;
  const auto stats = train_vocabulary(lex, pack, {"red", "cube"}, tc);
  ASSERT_EQ(stats.size(), 4u);
  for (const auto& s : stats) {
    EXPECT_GE(s.rounds, 1u);
    EXPECT_LE(s.rounds, tc.max_rounds);
    EXPECT_EQ(s.loss_history.size(), s.rounds);
    EXPECT_EQ(s.loss, s.loss_history.back());
    EXPECT_EQ(s.converged, s.loss < tc.loss_threshold);
    if (s.rounds < tc.max_rounds) EXPECT_TRUE(s.converged);
    for (std::size_t i = 0; i + 1 < s.loss_history.size(); ++i) EXPECT_GE(s.loss_history[i], tc.loss_threshold);
    EXPECT_NE(s.to_json_line().find("\"label\":\"" + s.label + "\""), std::string::npos);
  }
  EXPECT_TRUE(lex.at("red").trained());
  EXPECT_EQ(lex.at("red").sample_count, tc.batch_size);
}

TEST(Trainer, TrainingIsDeterministicAcrossThreadCounts) {
  const EmbeddingPack pack = small_pack(24);
  TrainConfig tc;
  tc.seed = 24;
  tc.epochs = 1;
  Lexicon a({.embedding_dim = pack.dim, .seed = 24});
  Lexicon b({.embedding_dim = pack.dim, .seed = 24});
  const std::vector<std::string> words = {"red", "blue", "cube", "metal", "glass"};
  train_vocabulary(a, pack, words, tc);
  tc.threads = 3;
  train_vocabulary(b, pack, words, tc);
  EXPECT_EQ(lexicon_hash(a), lexicon_hash(b));
}

TEST(Trainer, TrainingUnknownWordsLeavesKnownEntriesUntouched) {
  const EmbeddingPack pack = small_pack(25);
  TrainConfig tc;
  tc.seed = 25;
  tc.epochs = 1;
  Lexicon lex({.embedding_dim = pack.dim, .seed = 25});
  train_vocabulary(lex, PackView::of_split(pack, Split::train, VocabSide::known), {"red", "cube"}, tc);
  const auto red = entry_hash(lex.at("red")), cube = entry_hash(lex.at("cube"));
  train_vocabulary(lex, PackView::of_split(pack, Split::train, VocabSide::unknown), {"glass", "yellow"}, tc);
  EXPECT_EQ(entry_hash(lex.at("red")), red);
  EXPECT_EQ(entry_hash(lex.at("cube")), cube);
}

TEST(Trainer, RefineUpdatesRunningMeanAndCount) {
  const EmbeddingPack pack = small_pack(26);
  TrainConfig tc;
  tc.seed = 26;
  tc.epochs = 1;
  Lexicon lex({.embedding_dim = pack.dim, .seed = 26});
  train_concept(lex, pack, "red", tc);
  const Vec32 old_rep = *lex.at("red").rep;
  const auto old_count = lex.at("red").sample_count;

  // A view whose only red sample is one record makes the fresh batch a known constant.
  std::vector<std::size_t> idx;
  std::size_t red_record = 0;
  bool found = false;
  for (std::size_t i : split_indices(pack, Split::test_v)) {
    const bool red = pack.records[i].has_label("red");
    if (red && !found) {
      red_record = i;
      found = true;
    }
    if (!red || red_record == i) idx.push_back(i);
  }
  const PackView view(pack, idx);
  ASSERT_EQ(view.with_label("red").size(), 1u);
  const auto stats = refine_concept(lex, view, "red", tc);
  EXPECT_EQ(stats.kind, "refine");
  const auto& e = lex.at("red");
  EXPECT_EQ(e.sample_count, old_count + tc.batch_size);
  const Vec64 r = encode(e, pack.record_row(pack.records[red_record])).cast<double>();
  const double c = static_cast<double>(old_count), n = static_cast<double>(tc.batch_size);
  const Vec64 expected = (c * old_rep.cast<double>() + n * r) / (c + n);
  EXPECT_LT((e.rep->cast<double>() - expected).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Trainer, RefineWithoutSamplesIsNoOp) {
  const EmbeddingPack pack = small_pack(27);
  TrainConfig tc;
  tc.seed = 27;
  tc.epochs = 1;
  Lexicon lex({.embedding_dim = pack.dim, .seed = 27});
  train_concept(lex, pack, "glass", tc);
  const auto before = entry_hash(lex.at("glass"));
  const auto stats = refine_concept(lex, PackView::of_split(pack, Split::train, VocabSide::known), "glass", tc);
  EXPECT_FALSE(stats.note.empty());
  EXPECT_EQ(stats.rounds, 0u);
  EXPECT_EQ(entry_hash(lex.at("glass")), before);
  EXPECT_THROW(refine_concept(lex, PackView::of_split(pack, Split::train), "red", tc), DomainError);
}

TEST(Trainer, ConfigValidationRejectsBadValues) {
  TrainConfig tc;
  EXPECT_NO_THROW(tc.validate());
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = {};
  tc.loss_threshold = 0.0;
  EXPECT_THROW(tc.validate(), ConfigError);
  tc = {};
  tc.dropout_rate = 1.0f;
  EXPECT_THROW(tc.validate(), ConfigError);
}
