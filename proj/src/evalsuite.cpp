#include "complearn/evalsuite.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "complearn/baselines.hpp"
#include "json.hpp"

namespace complearn {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Recognition
// ---------------------------------------------------------------------------

std::vector<std::string> RecognitionResult::top() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(top_k, ranked.size()); ++i) out.push_back(ranked[i].label);
  return out;
}

Mat64 distance_matrix(const Lexicon& lexicon, const Mat32& rows) {
  if (static_cast<std::size_t>(rows.cols()) != lexicon.embedding_dim()) {
    throw ShapeError("recognize: embedding dim " + std::to_string(rows.cols()) + " != lexicon dim " +
                     std::to_string(lexicon.embedding_dim()));
  }
  Mat64 out(rows.rows(), static_cast<Eigen::Index>(lexicon.size()));
  Eigen::Index col = 0;
  for (const auto& [label, entry] : lexicon.entries()) {
    if (!entry.trained()) {
      out.col(col++).setConstant(std::numeric_limits<double>::infinity());
      continue;
    }
    const Mat64 r = entry.encoder.forward(rows).cast<double>();
    const Vec64 rep = entry.rep->cast<double>();
    out.col(col++) = (r.rowwise() - rep.transpose()).rowwise().squaredNorm() / static_cast<double>(r.cols());
  }
  return out;
}

namespace {

std::vector<std::size_t> rank_row(const Mat64& cost, Eigen::Index row, const std::vector<std::string>& labels) {
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = cost(row, static_cast<Eigen::Index>(a));
    const double cb = cost(row, static_cast<Eigen::Index>(b));
    if (ca != cb) return ca < cb;
    return labels[a] < labels[b];
  });
  return order;
}

}  // namespace

RecognitionResult recognize_topk(const Lexicon& lexicon, const Vec32& embedding, std::size_t k,
                                 const std::string& sample_id) {
  if (lexicon.empty()) throw DomainError("recognize: lexicon is empty");
  const Mat32 rows = embedding.transpose();
  const Mat64 cost = distance_matrix(lexicon, rows);
  const auto labels = lexicon.labels();
  RecognitionResult out;
  out.sample_id = sample_id;
  out.top_k = k;
  for (std::size_t i : rank_row(cost, 0, labels)) {
    out.ranked.push_back({labels[i], cost(0, static_cast<Eigen::Index>(i))});
  }
  return out;
}

const CategoryAccuracy* EvalReport::category(const std::string& name) const {
  for (const auto& c : per_category) {
    if (c.category == name) return &c;
  }
  return nullptr;
}

std::string EvalReport::to_json() const {
  json j;
  j["name"] = name;
  j["method"] = method;
  j["split"] = split;
  j["vocab_side"] = vocab_side;
  j["top_k"] = top_k;
  j["count"] = count;
  json cats = json::array();
  for (const auto& c : per_category) {
    cats.push_back({{"category", c.category}, {"hits", c.hits}, {"count", c.count}, {"accuracy", c.accuracy}});
  }
  j["per_category"] = cats;
  j["all"] = {{"hits", all_hits}, {"count", count}, {"accuracy", all_accuracy}};
  j["config_hash"] = config_hash;
  j["lexicon_hash"] = lexicon_hash;
  return j.dump(2);
}

std::string EvalReport::csv_header() { return "name,method,split,vocab_side,group,hits,count,accuracy"; }

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(6);
  const std::string prefix = name + "," + method + "," + split + "," + vocab_side + ",";
  for (const auto& c : per_category) {
    os << prefix << c.category << "," << c.hits << "," << c.count << "," << c.accuracy << "\n";
  }
  os << prefix << "all," << all_hits << "," << count << "," << all_accuracy << "\n";
  return os.str();
}

EvalReport score_topk(const EmbeddingPack& pack, const std::vector<std::size_t>& record_indices,
                      const std::vector<std::string>& labels, const Mat64& cost, std::size_t k) {
  const auto& cats = pack.category_map.categories();
  if (k == 0) k = cats.size();
  if (cost.rows() != static_cast<Eigen::Index>(record_indices.size()) ||
      cost.cols() != static_cast<Eigen::Index>(labels.size())) {
    throw ShapeError("score_topk: cost matrix shape mismatch");
  }
  EvalReport report;
  report.top_k = k;
  for (const auto& c : cats) report.per_category.push_back({c.name, 0, 0, 0.0});
  for (std::size_t i = 0; i < record_indices.size(); ++i) {
    const SampleRecord& rec = pack.records[record_indices[i]];
    const auto order = rank_row(cost, static_cast<Eigen::Index>(i), labels);
    std::set<std::string> top;
    for (std::size_t r = 0; r < std::min(k, order.size()); ++r) top.insert(labels[order[r]]);
    bool all = !rec.labels.empty();
    for (std::size_t c = 0; c < cats.size(); ++c) {
      const auto truth = pack.category_map.label_in(rec, cats[c].name);
      if (!truth) continue;
      auto& acc = report.per_category[c];
      ++acc.count;
      if (top.contains(*truth)) {
        ++acc.hits;
      } else {
        all = false;
      }
    }
    for (const auto& l : rec.labels) {
      if (!top.contains(l)) all = false;
    }
    ++report.count;
    if (all) ++report.all_hits;
  }
  for (auto& c : report.per_category) {
    c.accuracy = c.count ? static_cast<double>(c.hits) / static_cast<double>(c.count) : 0.0;
  }
  report.all_accuracy = report.count ? static_cast<double>(report.all_hits) / static_cast<double>(report.count) : 0.0;
  return report;
}

std::vector<std::size_t> records_of(const EmbeddingPack& pack, const std::vector<Split>& splits,
                                    std::optional<VocabSide> side) {
  std::vector<std::size_t> out;
  for (Split s : splits) {
    const auto part = split_indices(pack, s, side);
    out.insert(out.end(), part.begin(), part.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

EvalReport eval_recognition(const Lexicon& lexicon, const EmbeddingPack& pack,
                            const std::vector<std::size_t>& record_indices, std::size_t k) {
  if (lexicon.empty()) throw DomainError("recognize: lexicon is empty");
  const Mat64 cost = distance_matrix(lexicon, gather_rows<float>(pack, record_indices));
  EvalReport report = score_topk(pack, record_indices, lexicon.labels(), cost, k);
  report.config_hash = hex64(lexicon.config().config_hash);
  report.lexicon_hash = hex64(lexicon_hash(lexicon));
  return report;
}

EvalReport eval_recognition(const Lexicon& lexicon, const EmbeddingPack& pack, Split split,
                            std::optional<VocabSide> side, std::size_t k) {
  EvalReport report = eval_recognition(lexicon, pack, split_indices(pack, split, side), k);
  report.name = "recognize";
  report.split = std::string(to_string(split));
  report.vocab_side = side ? std::string(to_string(*side)) : "all";
  return report;
}

// ---------------------------------------------------------------------------
// Filter selectivity
// ---------------------------------------------------------------------------

std::vector<SelectivityResult> filter_selectivity(const Lexicon& lexicon, const EmbeddingPack& pack) {
  if (!pack.synthetic_truth) throw DomainError("filter selectivity needs a synthetic pack");
  const auto& truth = *pack.synthetic_truth;
  std::vector<SelectivityResult> out;
  for (const auto& [label, entry] : lexicon.entries()) {
    if (!entry.trained()) continue;
    auto it = truth.category_dims.find(entry.category);
    if (it == truth.category_dims.end()) continue;
    const Vec64 mask = sigmoid(entry.encoder.filter_raw).cast<double>();
    std::vector<bool> owned(static_cast<std::size_t>(mask.size()), false);
    for (std::size_t d : it->second) owned[d] = true;
    double on = 0.0, off = 0.0;
    std::size_t n_on = 0, n_off = 0;
    for (Eigen::Index d = 0; d < mask.size(); ++d) {
      if (owned[static_cast<std::size_t>(d)]) {
        on += mask(d);
        ++n_on;
      } else {
        off += mask(d);
        ++n_off;
      }
    }
    SelectivityResult r;
    r.label = label;
    r.on_mass = n_on ? on / static_cast<double>(n_on) : 0.0;
    r.off_mass = n_off ? off / static_cast<double>(n_off) : 0.0;
    r.ratio = r.off_mass > 0.0 ? r.on_mass / r.off_mass : std::numeric_limits<double>::infinity();
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Continual protocol
// ---------------------------------------------------------------------------

std::string ContinualResult::to_json() const {
  auto parse = [](const EvalReport& r) { return json::parse(r.to_json()); };
  json j;
  j["round1_known"] = parse(round1_known);
  j["round2_unknown_only_known"] = parse(round2_unknown_only_known);
  j["round2_unknown_only_full"] = parse(round2_unknown_only_full);
  if (round2_full_known) j["round2_full_known"] = parse(*round2_full_known);
  if (round2_full_full) j["round2_full_full"] = parse(*round2_full_full);
  if (linear_round1_known) j["linear_round1_known"] = parse(*linear_round1_known);
  if (linear_round2_known) j["linear_round2_known"] = parse(*linear_round2_known);
  if (linear_round2_full) j["linear_round2_full"] = parse(*linear_round2_full);
  j["known_entries_unchanged"] = known_entries_unchanged;
  j["known_entries_checked"] = known_entries_checked;
  return j.dump(2);
}

namespace {

EvalReport named(EvalReport r, std::string name, std::string split, std::string side) {
  r.name = std::move(name);
  r.split = std::move(split);
  r.vocab_side = std::move(side);
  return r;
}

}  // namespace

ContinualResult continual_protocol(const EmbeddingPack& pack, const ContinualConfig& config) {
  const auto& cmap = pack.category_map;
  if (cmap.unknown_vocab().empty()) throw DomainError("continual protocol needs unknown vocabulary");
  const auto known_vocab = cmap.known_vocabulary();
  std::vector<std::string> unknown_vocab;
  for (const auto& w : cmap.vocabulary()) {
    if (cmap.unknown_vocab().contains(w)) unknown_vocab.push_back(w);
  }
  const auto known_train = split_indices(pack, Split::train, VocabSide::known);
  const auto unknown_train = split_indices(pack, Split::train, VocabSide::unknown);
  if (known_train.empty() || unknown_train.empty()) throw DomainError("continual protocol: missing vocab sides");
  const auto all_train = split_indices(pack, Split::train);
  const auto test_known = records_of(pack, {Split::test_nc, Split::test_v}, VocabSide::known);
  const auto test_full = records_of(pack, {Split::test_nc, Split::test_v});
  const std::string test_name = "test_nc+test_v";

  ContinualResult res;
  Lexicon round1(config.lexicon);
  train_vocabulary(round1, PackView(pack, known_train), known_vocab, config.train);
  res.round1_known = named(eval_recognition(round1, pack, test_known), "round1", test_name, "known");

  std::map<std::string, std::uint64_t> before;
  for (const auto& [label, entry] : round1.entries()) before[label] = entry_hash(entry);
  Lexicon path_a = round1;
  train_vocabulary(path_a, PackView(pack, unknown_train), unknown_vocab, config.train);
  res.known_entries_unchanged = true;
  for (const auto& [label, hash] : before) {
    ++res.known_entries_checked;
    if (entry_hash(path_a.at(label)) != hash) res.known_entries_unchanged = false;
  }
  res.round2_unknown_only_known =
      named(eval_recognition(path_a, pack, test_known), "round2_unknown_only", test_name, "known");
  res.round2_unknown_only_full =
      named(eval_recognition(path_a, pack, test_full), "round2_unknown_only", test_name, "all");

  if (config.include_full_retrain) {
    Lexicon path_b = round1;
    train_vocabulary(path_b, PackView(pack, all_train), cmap.vocabulary(), config.train);
    res.round2_full_known = named(eval_recognition(path_b, pack, test_known), "round2_full", test_name, "known");
    res.round2_full_full = named(eval_recognition(path_b, pack, test_full), "round2_full", test_name, "all");
  }

  if (config.include_linear) {
    BaselineConfig bc;
    bc.steps = config.baseline_steps;
    bc.learning_rate = config.train.learning_rate;
    bc.batch_size = config.train.batch_size;
    bc.seed = derive_seed(config.train.seed, "continual:linear:1");
    const BaselineHead lin1 = train_baseline(BaselineKind::linear, pack, known_train, known_vocab, bc);
    res.linear_round1_known = named(eval_baseline(lin1, pack, test_known), "round1", test_name, "known");
    bc.seed = derive_seed(config.train.seed, "continual:linear:2");
    const BaselineHead lin2 =
        train_baseline(BaselineKind::linear, pack, all_train, cmap.vocabulary(), bc, &lin1.head.first);
    res.linear_round2_known = named(eval_baseline(lin2, pack, test_known), "round2_full", test_name, "known");
    res.linear_round2_full = named(eval_baseline(lin2, pack, test_full), "round2_full", test_name, "all");
  }
  return res;
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

namespace {

bool has_decoder(const Lexicon& lexicon, const std::string& word) {
  return lexicon.contains(word) && lexicon.at(word).decoder && lexicon.at(word).trained();
}

std::vector<std::size_t> composition_rows(const EmbeddingPack& pack) {
  return records_of(pack, {Split::train, Split::test_nc});
}

template <typename Pred>
std::optional<std::size_t> pick_where(const EmbeddingPack& pack, const std::vector<std::size_t>& pool, Pred pred,
                                      Rng& rng) {
  std::vector<std::size_t> hits;
  for (std::size_t r : pool) {
    if (pred(pack.records[r])) hits.push_back(r);
  }
  if (hits.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, hits.size() - 1);
  return hits[pick(rng)];
}

std::optional<McItem> draw_item_from(const EmbeddingPack& pack, const Lexicon& lexicon,
                                     const std::vector<std::size_t>& pool, Rng& rng) {
  const auto& cmap = pack.category_map;
  const auto& cats = cmap.categories();
  if (cats.size() < 2 || pool.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick_rec(0, pool.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_cat(0, cats.size() - 1);
  const std::size_t base = pool[pick_rec(rng)];
  std::size_t c1 = pick_cat(rng);
  std::size_t c2 = pick_cat(rng);
  while (c2 == c1) c2 = pick_cat(rng);
  if (c1 > c2) std::swap(c1, c2);
  const auto& rec = pack.records[base];
  const auto p = cmap.label_in(rec, cats[c1].name);
  const auto q = cmap.label_in(rec, cats[c2].name);
  if (!p || !q || !has_decoder(lexicon, *p) || !has_decoder(lexicon, *q)) return std::nullopt;

  const auto only_p = pick_where(pack, pool, [&](const SampleRecord& r) {
    const auto other = cmap.label_in(r, cats[c2].name);
    return r.has_label(*p) && other && *other != *q;
  }, rng);
  const auto only_q = pick_where(pack, pool, [&](const SampleRecord& r) {
    const auto other = cmap.label_in(r, cats[c1].name);
    return r.has_label(*q) && other && *other != *p;
  }, rng);
  if (!only_p || !only_q) return std::nullopt;

  std::array<std::size_t, 3> slots = {base, *only_p, *only_q};
  std::array<std::size_t, 3> perm = {0, 1, 2};
  std::shuffle(perm.begin(), perm.end(), rng);
  McItem item;
  item.p = *p;
  item.q = *q;
  for (std::size_t i = 0; i < 3; ++i) {
    item.choices[i] = slots[perm[i]];
    if (perm[i] == 0) item.correct = i;
  }
  return item;
}

double mse64(const Vec64& a, const Vec64& b) { return (a - b).squaredNorm() / static_cast<double>(a.size()); }

}  // namespace

std::optional<McItem> draw_mc_item(const EmbeddingPack& pack, const Lexicon& lexicon, Rng& rng) {
  return draw_item_from(pack, lexicon, composition_rows(pack), rng);
}

std::string McResult::to_json() const {
  json j;
  j["runs"] = runs;
  j["items_per_run"] = items_per_run;
  j["run_accuracy"] = run_accuracy;
  j["mean"] = mean;
  j["stddev"] = stddev;
  j["per_category_pair"] = per_category_pair;
  return j.dump(2);
}

McResult composition_mc(const Lexicon& lexicon, const EmbeddingPack& pack, std::size_t runs,
                        std::size_t items_per_run, std::uint64_t seed) {
  if (runs == 0 || items_per_run == 0) throw DomainError("composition_mc: runs and items must be positive");
  std::vector<std::string> missing;
  for (const auto& [label, entry] : lexicon.entries()) {
    if (!entry.decoder) missing.push_back(label);
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw DomainError("composition needs decoders; missing for: " + names);
  }
  std::map<std::string, Vec64> decoded;
  for (const auto& [label, entry] : lexicon.entries()) {
    if (entry.trained()) decoded.emplace(label, decode_rep(entry).cast<double>());
  }
  const auto pool = composition_rows(pack);
  const auto& cmap = pack.category_map;

  McResult res;
  res.runs = runs;
  res.items_per_run = items_per_run;
  std::map<std::string, std::pair<std::size_t, std::size_t>> pair_hits;
  for (std::size_t run = 0; run < runs; ++run) {
    Rng rng(derive_seed(seed, "mc-run:" + std::to_string(run)));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < items_per_run; ++i) {
      std::optional<McItem> item;
      for (int attempt = 0; attempt < 1000 && !item; ++attempt) item = draw_item_from(pack, lexicon, pool, rng);
      if (!item) throw DomainError("composition_mc: could not draw a valid item");
      const Vec64 mental = decoded.at(item->p) + decoded.at(item->q);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = mse64(mental, pack.row(pack.records[item->choices[c]].row_index).cast<double>());
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      const bool hit = best == item->correct;
      correct += hit;
      const std::string key = *cmap.category_of(item->p) + "+" + *cmap.category_of(item->q);
      pair_hits[key].first += hit;
      ++pair_hits[key].second;
    }
    res.run_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(items_per_run));
  }
  const double n = static_cast<double>(runs);
  res.mean = std::accumulate(res.run_accuracy.begin(), res.run_accuracy.end(), 0.0) / n;
  double var = 0.0;
  for (double a : res.run_accuracy) var += (a - res.mean) * (a - res.mean);
  res.stddev = runs > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  for (const auto& [key, hc] : pair_hits) {
    res.per_category_pair[key] = static_cast<double>(hc.first) / static_cast<double>(hc.second);
  }
  return res;
}

std::string EditEvalResult::to_json() const {
  json j;
  j["requested"] = requested;
  j["evaluated"] = evaluated;
  j["skipped"] = skipped;
  j["mean_ratio"] = mean_ratio;
  j["per_category"] = per_category;
  j["identity_checked"] = identity_checked;
  j["identity_mismatches"] = identity_mismatches;
  return j.dump(2);
}

EditEvalResult composition_edit_eval(const Lexicon& lexicon, const EmbeddingPack& pack, std::size_t n_pairs,
                                     std::uint64_t seed) {
  const auto& cmap = pack.category_map;
  const auto& cats = cmap.categories();
  const auto pool = composition_rows(pack);
  if (pool.empty()) throw DomainError("edit eval: no rows");

  auto tuple_key = [&](const std::vector<std::string>& labels) {
    std::vector<std::string> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    std::string key;
    for (const auto& l : sorted) key += l + "|";
    return key;
  };
  std::map<std::string, std::vector<std::size_t>> by_tuple;
  for (std::size_t r : pool) by_tuple[tuple_key(pack.records[r].labels)].push_back(r);

  Rng rng(derive_seed(seed, "edit-eval"));
  std::uniform_int_distribution<std::size_t> pick_rec(0, pool.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_cat(0, cats.size() - 1);
  EditEvalResult res;
  res.requested = n_pairs;
  double total = 0.0;
  std::map<std::string, std::pair<double, std::size_t>> per_cat;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    std::size_t rec_index = 0;
    std::string q, p, cat;
    bool drawn = false;
    for (int attempt = 0; attempt < 1000 && !drawn; ++attempt) {
      rec_index = pool[pick_rec(rng)];
      cat = cats[pick_cat(rng)].name;
      const auto label = cmap.label_in(pack.records[rec_index], cat);
      if (!label || !has_decoder(lexicon, *label)) continue;
      std::vector<std::string> targets;
      for (const auto& w : cats[*cmap.category_index(cat)].words) {
        if (w != *label && has_decoder(lexicon, w)) targets.push_back(w);
      }
      if (targets.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick_t(0, targets.size() - 1);
      q = *label;
      p = targets[pick_t(rng)];
      drawn = true;
    }
    if (!drawn) throw DomainError("edit eval: no editable (sample, word) pair");

    const Vec32 e_q = pack.record_row(pack.records[rec_index]);
    const ConceptEntry& entry_q = lexicon.at(q);
    const ConceptEntry& entry_p = lexicon.at(p);
    const Vec32 identity = edit_embedding(e_q, entry_q, entry_q);
    const Vec32 recon = reconstruct_embedding(e_q, entry_q);
    ++res.identity_checked;
    if (std::memcmp(identity.data(), recon.data(), sizeof(float) * static_cast<std::size_t>(identity.size())) != 0) {
      ++res.identity_mismatches;
    }

    std::vector<std::string> edited = pack.records[rec_index].labels;
    std::replace(edited.begin(), edited.end(), q, p);
    auto it = by_tuple.find(tuple_key(edited));
    if (it == by_tuple.end()) {
      ++res.skipped;
      continue;
    }
    const Vec64 eq = e_q.cast<double>();
    std::size_t target = it->second.front();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r : it->second) {
      const double d = mse64(eq, pack.record_row(pack.records[r]).cast<double>());
      if (d < best) {
        best = d;
        target = r;
      }
    }
    const Vec64 et = pack.record_row(pack.records[target]).cast<double>();
    const double denom = mse64(eq, et);
    if (!(denom > 0.0)) {
      ++res.skipped;
      continue;
    }
    const double ratio = mse64(edit_embedding(e_q, entry_q, entry_p).cast<double>(), et) / denom;
    total += ratio;
    ++res.evaluated;
    per_cat[cat].first += ratio;
    ++per_cat[cat].second;
  }
  res.mean_ratio = res.evaluated ? total / static_cast<double>(res.evaluated) : 0.0;
  for (const auto& [cat, sc] : per_cat) res.per_category[cat] = sc.first / static_cast<double>(sc.second);
  return res;
}

Lexicon with_untrained_decoders(const Lexicon& lexicon, std::uint64_t seed) {
  Lexicon out = lexicon;
  for (const auto& label : lexicon.labels()) {
    Rng rng(derive_seed(seed, "untrained-decoder:" + label));
    out.at(label).decoder = Decoder::init(lexicon.latent_dim(), lexicon.embedding_dim(), rng);
  }
  return out;
}

}  // namespace complearn
