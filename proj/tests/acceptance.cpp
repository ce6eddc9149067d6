// Acceptance harness: one PASS/FAIL line per criterion. Trained stores shared
// between criteria are cached under --work so reruns skip retraining.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "complearn/decoder.hpp"
#include "complearn/embedpack.hpp"
#include "complearn/evalsuite.hpp"
#include "complearn/lexicon.hpp"
#include "complearn/trainer.hpp"
#include "json.hpp"

using namespace complearn;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

fs::path g_work;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

SyntheticConfig default_synthetic(std::uint64_t seed, float noise) {
  SyntheticConfig c;
  c.seed = seed;
  c.noise_sigma = noise;
  return c;
}

TrainConfig default_train(std::uint64_t seed) {
  TrainConfig t;
  t.seed = seed;
  return t;
}

void train_all(Lexicon& lex, const EmbeddingPack& pack, const TrainConfig& tc) {
  const PackView view = PackView::of_split(pack, Split::train);
  const auto words = pack.category_map.vocabulary();
  train_vocabulary(lex, view, words, tc);
  train_decoders(lex, view, words, tc);
}

/// Default-config lexicon (concepts + decoders) for a pack, cached in the work dir.
Lexicon cached_store(const std::string& name, const EmbeddingPack& pack, std::uint64_t seed) {
  const fs::path dir = g_work / name;
  if (fs::exists(dir / "index.json")) return load_store(dir);
  Lexicon lex({.embedding_dim = pack.dim, .seed = seed});
  train_all(lex, pack, default_train(seed));
  save_store(lex, dir);
  return lex;
}

// --------------------------------------------------------------------------
// 1. Gradient fidelity
// --------------------------------------------------------------------------

template <typename Model, typename Blocks>
FiniteDiffResult check_model(const Model& model, Blocks blocks_of, std::function<double(Model&, bool)> objective,
                             std::size_t coords) {
  auto value = [&](std::span<const double> flat) {
    Model m = model;
    blocks_of(m).set(flat);
    return objective(m, false);
  };
  auto gradient = [&](std::span<const double> flat) {
    Model m = model;
    auto b = blocks_of(m);
    b.set(flat);
    m.zero_grad();
    objective(m, true);
    return b.get(true);
  };
  Model copy = model;
  return finite_diff_check({value, gradient}, blocks_of(copy).get(false),
                           {.step = 1e-3, .max_coords = coords, .seed = 11});
}

struct Blocks {
  std::vector<std::pair<double*, std::size_t>> values, grads;
  template <typename M>
  void add(M& v, M& g) {
    values.emplace_back(v.data(), static_cast<std::size_t>(v.size()));
    grads.emplace_back(g.data(), static_cast<std::size_t>(g.size()));
  }
  void add(LinearLayerT<double>& l) {
    add(l.weights, l.grad_weights);
    add(l.bias, l.grad_bias);
  }
  std::vector<double> get(bool grad) const {
    std::vector<double> out;
    for (const auto& [p, n] : grad ? grads : values) out.insert(out.end(), p, p + n);
    return out;
  }
  void set(std::span<const double> flat) const {
    std::size_t o = 0;
    for (const auto& [p, n] : values) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(o), n, p);
      o += n;
    }
  }
};

Verdict criterion_1() {
  const auto start = Clock::now();
  const EmbeddingPack pack = generate_synthetic(default_synthetic(1, 0.05f));
  Rng rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto train = split_indices(pack, Split::train);
  std::vector<std::size_t> sim_idx(train.begin(), train.begin() + 16), diff_idx(train.begin() + 16, train.begin() + 32);
  const Mat64 sim = gather_rows<double>(pack, sim_idx), diff = gather_rows<double>(pack, diff_idx);

  EncoderT<double> enc = EncoderT<double>::init(pack.dim, kDefaultHiddenDim, kDefaultLatentDim, rng);
  for (Eigen::Index i = 0; i < enc.filter_raw.size(); ++i) enc.filter_raw[i] = g(rng);
  auto enc_blocks = [](EncoderT<double>& e) {
    Blocks b;
    b.add(e.filter_raw, e.grad_filter);
    b.add(e.hidden);
    b.add(e.latent);
    return b;
  };
  const auto comp = check_model<EncoderT<double>>(
      enc, enc_blocks,
      [&](EncoderT<double>& e, bool bp) { return comparative_objective(e, sim, diff, nullptr, bp).loss; }, 300);

  DecoderT<double> dec = DecoderT<double>::init(kDefaultLatentDim, pack.dim, rng);
  Vec64 rep(static_cast<Eigen::Index>(kDefaultLatentDim));
  for (Eigen::Index i = 0; i < rep.size(); ++i) rep[i] = g(rng);
  const Mat64 target = gather_rows<double>(pack, std::vector<std::size_t>(train.begin(), train.begin() + 8));
  const Mat64 kq = 0.5 * gather_rows<double>(pack, std::vector<std::size_t>(train.begin() + 8, train.begin() + 16));
  const Mat64 kp = 0.5 * target;
  auto dec_blocks = [](DecoderT<double>& d) {
    Blocks b;
    for (auto& l : d.layers) b.add(l);
    return b;
  };
  const auto decr = check_model<DecoderT<double>>(
      dec, dec_blocks,
      [&](DecoderT<double>& d, bool bp) {
        DropoutState drop(0.2f, DropoutMode::train, 99);
        return decoder_objective(d, rep, target, kq, kp, &drop, bp);
      },
      300);

  const double secs = seconds_since(start);
  const bool pass = comp.max_rel_error <= thresholds::kGradRelError && decr.max_rel_error <= thresholds::kGradRelError &&
                    comp.coords_checked >= thresholds::kGradMinCoords &&
                    decr.coords_checked >= thresholds::kGradMinCoords && secs <= thresholds::kGradSeconds;
  return {pass, "comparative max rel err " + fmt(comp.max_rel_error) + " over " + std::to_string(comp.coords_checked) +
                    " coords; decoder " + fmt(decr.max_rel_error) + " over " + std::to_string(decr.coords_checked) +
                    " coords; " + fmt(secs, 3) + " s (bounds " + fmt(thresholds::kGradRelError) + ", " +
                    fmt(thresholds::kGradSeconds) + " s)"};
}

// --------------------------------------------------------------------------
// 2. Oracle recognition (fresh, timed)
// --------------------------------------------------------------------------

Verdict criterion_2() {
  const auto start = Clock::now();
  const EmbeddingPack pack = generate_synthetic(default_synthetic(1, 0.05f));
  Lexicon lex({.embedding_dim = pack.dim, .seed = 1});
  train_all(lex, pack, default_train(1));
  const EmbeddingPack holdout = generate_holdout(pack, 500, 1001);
  const double h = eval_recognition(lex, holdout, Split::train).all_accuracy;
  const double nc = eval_recognition(lex, pack, Split::test_nc).all_accuracy;
  const double v = eval_recognition(lex, pack, Split::test_v).all_accuracy;
  const double secs = seconds_since(start);
  save_store(lex, g_work / "default-s1");
  const bool pass = h >= thresholds::kHoldoutAll && nc >= thresholds::kNovelAll && v >= thresholds::kVariationAll &&
                    secs <= thresholds::kPipelineSeconds;
  return {pass, "all-3 top-3 holdout " + fmt(h) + " (>= " + fmt(thresholds::kHoldoutAll) + "), novel " + fmt(nc) +
                    " (>= " + fmt(thresholds::kNovelAll) + "), variation " + fmt(v) + " (>= " +
                    fmt(thresholds::kVariationAll) + "); train+decoders+eval " + fmt(secs, 3) + " s (<= " +
                    fmt(thresholds::kPipelineSeconds) + " s)"};
}

// --------------------------------------------------------------------------
// 3. Filter selectivity
// --------------------------------------------------------------------------

Verdict criterion_3() {
  const EmbeddingPack pack = generate_synthetic(default_synthetic(1, 0.0f));
  const Lexicon lex = cached_store("zero-s1", pack, 1);
  const auto sel = filter_selectivity(lex, pack);
  const auto worst = std::min_element(sel.begin(), sel.end(), [](auto& a, auto& b) { return a.ratio < b.ratio; });
  const bool pass = sel.size() == 23 && worst->ratio >= thresholds::kSelectivityRatio;
  return {pass, std::to_string(sel.size()) + " words; min on/off mass ratio " + fmt(worst->ratio) + " (" +
                    worst->label + "), bound " + fmt(thresholds::kSelectivityRatio)};
}

// --------------------------------------------------------------------------
// 4. Continual isolation and ordering
// --------------------------------------------------------------------------

json continual_seed(std::uint64_t seed) {
  const fs::path cache = g_work / ("continual-s" + std::to_string(seed) + ".json");
  if (fs::exists(cache)) return json::parse(std::ifstream(cache));
  const EmbeddingPack pack = generate_synthetic(default_synthetic(seed, 0.05f));
  ContinualConfig cc;
  cc.train = default_train(seed);
  cc.lexicon.embedding_dim = pack.dim;
  cc.lexicon.seed = seed;
  cc.include_full_retrain = false;
  const ContinualResult r = continual_protocol(pack, cc);
  json j = {{"seed", seed},
            {"unchanged", r.known_entries_unchanged},
            {"checked", r.known_entries_checked},
            {"round1_known", r.round1_known.all_accuracy},
            {"round2_known", r.round2_unknown_only_known.all_accuracy},
            {"ours_full", r.round2_unknown_only_full.all_accuracy},
            {"linear_full", r.linear_round2_full->all_accuracy}};
  fs::create_directories(g_work);
  std::ofstream(cache) << j.dump() << "\n";
  return j;
}

std::vector<json> continual_all() {
  std::vector<json> out;
  for (std::uint64_t s = 1; s <= thresholds::kOrderingSeeds; ++s) out.push_back(continual_seed(s));
  return out;
}

Verdict criterion_4a() {
  bool pass = true;
  std::string detail;
  for (const json& j : continual_all()) {
    pass = pass && j.at("unchanged").get<bool>() && j.at("checked").get<std::size_t>() == 20;
    detail += "seed " + std::to_string(j.at("seed").get<int>()) + ": " +
              (j.at("unchanged").get<bool>() ? "unchanged" : "CHANGED") + " (" +
              std::to_string(j.at("checked").get<std::size_t>()) + " hashed); ";
  }
  return {pass, "known entry hashes after unknown-only round 2: " + detail};
}

Verdict criterion_4b() {
  bool pass = true;
  std::string detail;
  for (const json& j : continual_all()) {
    const double r1 = j.at("round1_known"), r2 = j.at("round2_known");
    pass = pass && r1 - r2 <= thresholds::kMaxKnownDrop;
    detail += fmt(r1, 3) + "->" + fmt(r2, 3) + " ";
  }
  return {pass, "known all-3 round 1 -> round 2 per seed: " + detail + "(max drop " + fmt(thresholds::kMaxKnownDrop) +
                    ")"};
}

Verdict criterion_4c() {
  std::size_t wins = 0;
  std::string detail;
  for (const json& j : continual_all()) {
    const double ours = j.at("ours_full"), lin = j.at("linear_full");
    wins += ours >= lin;
    detail += fmt(ours, 3) + " vs " + fmt(lin, 3) + "; ";
  }
  return {wins >= thresholds::kOrderingWins,
          "full-test all-3, ours unknown-only vs linear retrained on all: " + detail + std::to_string(wins) + "/" +
              std::to_string(thresholds::kOrderingSeeds) + " wins (need " +
              std::to_string(thresholds::kOrderingWins) + ")"};
}

// --------------------------------------------------------------------------
// 5. Composition MC
// --------------------------------------------------------------------------

Verdict criterion_5() {
  const EmbeddingPack pack = generate_synthetic(default_synthetic(1, 0.05f));
  const Lexicon lex = cached_store("default-s1", pack, 1);
  const McResult trained = composition_mc(lex, pack, 15, 100, 7);
  const McResult control = composition_mc(with_untrained_decoders(lex, 7), pack, 15, 100, 7);
  const bool pass = trained.mean >= thresholds::kMcAccuracy &&
                    std::abs(control.mean - thresholds::kMcChance) <= thresholds::kMcChanceTolerance;
  return {pass, "15x100 accuracy " + fmt(trained.mean) + " +- " + fmt(trained.stddev) + " (>= " +
                    fmt(thresholds::kMcAccuracy) + "); untrained control " + fmt(control.mean) + " (within " +
                    fmt(thresholds::kMcChance) + " +- " + fmt(thresholds::kMcChanceTolerance) + ")"};
}

// --------------------------------------------------------------------------
// 6. Edit quality
// --------------------------------------------------------------------------

/// Mean edit ratio of the ground-truth edit (swap in the clean signature),
/// scored exactly like composition_edit_eval: target = nearest row with the edited labels.
double oracle_edit_floor(const EmbeddingPack& pack, std::size_t n, std::uint64_t seed) {
  const auto rows = records_of(pack, {Split::train, Split::test_nc});
  std::map<std::vector<std::string>, std::vector<std::size_t>> by_tuple;
  for (std::size_t r : rows) by_tuple[pack.records[r].labels].push_back(r);
  const auto& truth = *pack.synthetic_truth;
  const auto& cats = pack.category_map.categories();
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_row(0, rows.size() - 1), pick_cat(0, cats.size() - 1);
  double total = 0;
  std::size_t used = 0;
  while (used < n) {
    const auto& rec = pack.records[rows[pick_row(rng)]];
    const auto& cat = cats[pick_cat(rng)];
    const std::string q = *pack.category_map.label_in(rec, cat.name);
    std::uniform_int_distribution<std::size_t> pick_w(0, cat.words.size() - 1);
    const std::string p = cat.words[pick_w(rng)];
    if (p == q) continue;
    auto edited = rec.labels;
    std::replace(edited.begin(), edited.end(), q, p);
    auto it = by_tuple.find(edited);
    if (it == by_tuple.end()) continue;
    const Vec64 eq = pack.record_row(rec).cast<double>();
    double best = std::numeric_limits<double>::infinity();
    Vec64 et;
    for (std::size_t r : it->second) {
      const Vec64 c = pack.record_row(pack.records[r]).cast<double>();
      const double d = (c - eq).squaredNorm();
      if (d < best) {
        best = d;
        et = c;
      }
    }
    Vec64 oracle = eq;
    const auto& dims = truth.category_dims.at(cat.name);
    for (std::size_t i = 0; i < dims.size(); ++i) {
      oracle[static_cast<Eigen::Index>(dims[i])] = truth.signatures.at(p)[static_cast<Eigen::Index>(i)];
    }
    total += (oracle - et).squaredNorm() / best;
    ++used;
  }
  return total / static_cast<double>(n);
}

Verdict criterion_6a() {
  const EmbeddingPack pack = generate_synthetic(default_synthetic(1, 0.0f));
  const EditEvalResult r = composition_edit_eval(cached_store("zero-s1", pack, 1), pack, 500, 7);
  return {r.mean_ratio <= thresholds::kEditZeroNoise,
          "zero-noise mean relative edit error " + fmt(r.mean_ratio) + " over " + std::to_string(r.evaluated) +
              " edits (<= " + fmt(thresholds::kEditZeroNoise) + ")"};
}

Verdict criterion_6b() {
  const EmbeddingPack pack = generate_synthetic(default_synthetic(1, 0.05f));
  const EditEvalResult r = composition_edit_eval(cached_store("default-s1", pack, 1), pack, 500, 7);
  const double floor = oracle_edit_floor(pack, 500, 7);
  return {r.mean_ratio <= thresholds::kEditNoisy,
          "noise 0.05 mean relative edit error " + fmt(r.mean_ratio) + " over " + std::to_string(r.evaluated) +
              " edits (<= " + fmt(thresholds::kEditNoisy) + "); ground-truth edit scores " + fmt(floor) +
              " on the same metric"};
}

Verdict criterion_6c() {
  std::size_t checked = 0, mismatches = 0;
  for (float noise : {0.0f, 0.05f}) {
    const EmbeddingPack pack = generate_synthetic(default_synthetic(1, noise));
    const EditEvalResult r =
        composition_edit_eval(cached_store(noise == 0.0f ? "zero-s1" : "default-s1", pack, 1), pack, 500, 7);
    checked += r.identity_checked;
    mismatches += r.identity_mismatches;
  }
  return {checked > 0 && mismatches == 0, "identity edit vs reconstruction: " + std::to_string(mismatches) +
                                              " bitwise mismatches over " + std::to_string(checked) + " edits"};
}

// --------------------------------------------------------------------------
// 7. Format and determinism
// --------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  const auto fa = files_under(a), fb = files_under(b);
  if (fa != fb) return false;
  for (const auto& f : fa) {
    if (slurp(a / f) != slurp(b / f)) return false;
  }
  return true;
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "complearn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  return code;
}

fs::path only_child(const fs::path& dir) {
  std::vector<fs::path> v;
  for (const auto& e : fs::directory_iterator(dir)) v.push_back(e.path());
  return v.size() == 1 ? v[0] : fs::path();
}

Verdict criterion_7() {
  const fs::path root = g_work / "c7";
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<std::string> issues;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) issues.push_back(what);
  };

  // Pack round trip.
  const EmbeddingPack pack = generate_synthetic(default_synthetic(1, 0.05f));
  write_pack(pack, root / "pack-a");
  const EmbeddingPack back = read_pack(root / "pack-a");
  write_pack(back, root / "pack-b");
  expect(back == pack && same_tree(root / "pack-a", root / "pack-b"), "pack round trip");

  // Store round trip.
  const Lexicon lex = cached_store("default-s1", pack, 1);
  save_store(lex, root / "store-a");
  save_store(load_store(root / "store-a"), root / "store-b");
  expect(same_tree(root / "store-a", root / "store-b"), "store round trip");

  // Two full CLI runs with the same seed.
  std::vector<std::string> reports;
  for (const char* run : {"run1", "run2"}) {
    const fs::path d = root / run;
    auto with = [&](std::vector<std::string> head, std::vector<std::string> tail = {}, const char* out = "out") {
      head.insert(head.end(), {"--pack", (d / "pack").string(), "--store", (d / "store").string(), "--out-dir",
                               (d / out).string(), "--seed", "1"});
      head.insert(head.end(), tail.begin(), tail.end());
      return head;
    };
    expect(run_cli(with({"gen-data"})) == cli::kExitOk, std::string(run) + " gen-data");
    expect(run_cli(with({"train"})) == cli::kExitOk, std::string(run) + " train");
    expect(run_cli(with({"train-decoders"})) == cli::kExitOk, std::string(run) + " train-decoders");
    for (const char* which : {"recognize", "edit"}) {
      fs::remove_all(d / "eval");
      expect(run_cli(with({"eval", which}, {"--set", "edit_pairs=200"}, "eval")) ==
                 cli::kExitOk,
             std::string(run) + " eval " + which);
      const fs::path out = only_child(d / "eval");
      reports.push_back(slurp(out / (std::string(which) + ".json")));
    }
  }
  expect(reports.size() == 4 && !reports[0].empty() && reports[0] == reports[2] && reports[1] == reports[3],
         "same-seed runs produce identical reports");

  // Corrupt fixtures and exit codes.
  const fs::path run1 = root / "run1";
  auto eval_code = [&](const fs::path& pack_dir, const fs::path& store_dir) {
    return run_cli({"eval", "recognize", "--pack", pack_dir.string(), "--store", store_dir.string(), "--out-dir",
                    (root / "scratch").string(), "--seed", "1"});
  };
  fs::copy(run1 / "pack", root / "trunc", fs::copy_options::recursive);
  {
    const std::string rows = slurp(root / "trunc" / "rows.f32");
    std::ofstream(root / "trunc" / "rows.f32", std::ios::binary | std::ios::trunc) << rows.substr(0, rows.size() - 7);
  }
  expect(eval_code(root / "trunc", run1 / "store") == cli::kExitFormat, "truncated rows -> 3");
  fs::copy(run1 / "pack", root / "magic", fs::copy_options::recursive);
  {
    std::string m = slurp(root / "magic" / "manifest.jsonl");
    m.replace(m.find("EPK1"), 4, "EPK0");
    std::ofstream(root / "magic" / "manifest.jsonl", std::ios::binary | std::ios::trunc) << m;
  }
  expect(eval_code(root / "magic", run1 / "store") == cli::kExitFormat, "bad magic -> 3");
  fs::copy(run1 / "store", root / "badstore", fs::copy_options::recursive);
  for (const auto& f : files_under(root / "badstore")) {
    if (f.filename().string().starts_with("red-")) {
      const fs::path path = root / "badstore" / f;
      std::string b = slurp(path);
      b[b.size() / 2] ^= 0x20;
      std::ofstream(path, std::ios::binary | std::ios::trunc) << b;
    }
  }
  expect(eval_code(run1 / "pack", root / "badstore") == cli::kExitFormat, "corrupt concept file -> 3");
  std::ofstream(root / "bad.cfg") << "seed = 1\n";
  expect(run_cli({"train", "--config", (root / "bad.cfg").string()}) == cli::kExitConfig, "config without schema -> 2");
  fs::create_directories(root / "failing");
  std::ofstream(root / "failing" / "compose.json")
      << R"({"noise_sigma":0.05,"trained":{"mean":0.5},"untrained_control":{"mean":0.33}})";
  expect(run_cli({"check", (root / "failing").string()}) == cli::kExitAcceptance, "failing check -> 4");

  std::string detail = "pack/store round trips, same-seed CLI runs (recognize+edit reports), corrupt fixtures";
  if (!issues.empty()) {
    detail += "; failed:";
    for (const auto& i : issues) detail += " [" + i + "]";
  }
  return {issues.empty(), detail};
}

// --------------------------------------------------------------------------
// 8. Loss-formula conformance
// --------------------------------------------------------------------------

Verdict criterion_8() {
  double worst = 0.0;
  const std::size_t cases = 25;
  for (std::uint64_t seed = 1; seed <= cases; ++seed) {
    Rng rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    const std::size_t D = 512;
    EmbeddingPack pack;
    pack.dim = D;
    pack.rows = Mat32(4, D);
    for (Eigen::Index i = 0; i < pack.rows.size(); ++i) pack.rows.data()[i] = g(rng);
    pack.category_map = CategoryMap({{"color", {"red", "blue"}}}, {});
    pack.records = {{"s0", {"red"}, Split::train, VocabSide::known, 0},
                    {"s1", {"red"}, Split::train, VocabSide::known, 1},
                    {"d0", {"blue"}, Split::train, VocabSide::known, 2},
                    {"d1", {"blue"}, Split::train, VocabSide::known, 3}};
    Lexicon lex({.embedding_dim = D, .seed = seed});
    ConceptEntry& e = lex.add_concept("red", "color");
    for (std::size_t i = 0; i < D; ++i) e.encoder.filter_raw[static_cast<Eigen::Index>(i)] = g(rng);
    const LossResult got = comparative_loss(e, {"red", {0, 1}, {2, 3}, {true, true}}, pack);

    // Scalar reference.
    const std::size_t H = e.encoder.hidden.out_dim(), K = e.encoder.latent.out_dim();
    std::vector<std::vector<double>> r(4, std::vector<double>(K));
    for (std::size_t s = 0; s < 4; ++s) {
      std::vector<double> h(H);
      for (std::size_t j = 0; j < H; ++j) {
        double acc = e.encoder.hidden.bias[static_cast<Eigen::Index>(j)];
        for (std::size_t i = 0; i < D; ++i) {
          const double f = e.encoder.filter_raw[static_cast<Eigen::Index>(i)];
          acc += static_cast<double>(e.encoder.hidden.weights(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i))) /
                 (1.0 + std::exp(-f)) * pack.rows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i));
        }
        h[j] = std::tanh(acc);
      }
      for (std::size_t k = 0; k < K; ++k) {
        double acc = e.encoder.latent.bias[static_cast<Eigen::Index>(k)];
        for (std::size_t j = 0; j < H; ++j) {
          acc += static_cast<double>(e.encoder.latent.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))) * h[j];
        }
        r[s][k] = acc;
      }
    }
    double ls = 0, ld = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double c = (r[0][k] + r[1][k]) / 2;
      ls += (std::pow(r[0][k] - c, 2) + std::pow(r[1][k] - c, 2)) / (2.0 * static_cast<double>(K));
      ld += (std::pow(r[2][k] - c, 2) + std::pow(r[3][k] - c, 2)) / (2.0 * static_cast<double>(K));
    }
    const double expected = ls * ls + (1 - ld) * (1 - ld);
    worst = std::max(worst, std::abs(got.loss - expected));
  }
  return {worst <= thresholds::kLossFormulaTolerance,
          std::to_string(cases) + " hand-computed 2-sample batches at dim 512; max |loss - (loss_s^2 + (1-loss_d)^2)| = " +
              fmt(worst) + " (<= " + fmt(thresholds::kLossFormulaTolerance) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<std::string> only;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "criterion ids to run (default: all)");
  app.add_option("--work", work, "cache directory for trained stores");
  CLI11_PARSE(app, argc, argv);
  g_work = work;
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> all = {
      {"1", criterion_1},   {"2", criterion_2},   {"3", criterion_3},   {"4a", criterion_4a},
      {"4b", criterion_4b}, {"4c", criterion_4c}, {"5", criterion_5},   {"6a", criterion_6a},
      {"6b", criterion_6b}, {"6c", criterion_6c}, {"7", criterion_7},   {"8", criterion_8}};
  bool ok = true;
  for (const auto& [id, fn] : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << v.detail << std::endl;
    ok = ok && v.pass;
  }
  return ok ? 0 : 1;
}
