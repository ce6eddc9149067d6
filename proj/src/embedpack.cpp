#include "complearn/embedpack.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace complearn {

using nlohmann::json;

namespace {

const char* const kManifestFile = "manifest.jsonl";
const char* const kRowsFile = "rows.f32";

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test_nc: return "test_nc";
    case Split::test_v: return "test_v";
  }
  return "?";
}

std::string_view to_string(VocabSide side) {
  return side == VocabSide::known ? "known" : "unknown";
}

std::string_view to_string(Provenance provenance) {
  return provenance == Provenance::real ? "real" : "synthetic";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test_nc") return Split::test_nc;
  if (text == "test_v") return Split::test_v;
  throw FormatError("split: unknown value '" + std::string(text) + "'");
}

VocabSide parse_vocab_side(std::string_view text) {
  if (text == "known") return VocabSide::known;
  if (text == "unknown") return VocabSide::unknown;
  throw FormatError("vocab_side: unknown value '" + std::string(text) + "'");
}

Provenance parse_provenance(std::string_view text) {
  if (text == "real") return Provenance::real;
  if (text == "synthetic") return Provenance::synthetic;
  throw FormatError("provenance: unknown value '" + std::string(text) + "'");
}

bool SampleRecord::has_label(std::string_view word) const {
  return std::find(labels.begin(), labels.end(), word) != labels.end();
}

// ---------------------------------------------------------------------------
// CategoryMap
// ---------------------------------------------------------------------------

CategoryMap::CategoryMap(std::vector<Category> categories, std::set<std::string> unknown_vocab)
    : categories_(std::move(categories)), unknown_vocab_(std::move(unknown_vocab)) {
  for (const Category& c : categories_) {
    for (const std::string& w : c.words) {
      // First owner wins; validate_pack reports the overlap.
      owner_.emplace(w, c.name);
    }
  }
}

std::optional<std::string> CategoryMap::category_of(std::string_view word) const {
  auto it = owner_.find(word);
  if (it == owner_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> CategoryMap::category_index(std::string_view category) const {
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    if (categories_[i].name == category) return i;
  }
  return std::nullopt;
}

bool CategoryMap::non_compatible(std::string_view a, std::string_view b) const {
  if (a == b) return false;
  auto ca = category_of(a);
  auto cb = category_of(b);
  return ca && cb && *ca == *cb;
}

std::vector<std::string> CategoryMap::vocabulary() const {
  std::vector<std::string> out;
  for (const Category& c : categories_) out.insert(out.end(), c.words.begin(), c.words.end());
  return out;
}

std::vector<std::string> CategoryMap::known_vocabulary() const {
  std::vector<std::string> out;
  for (const std::string& w : vocabulary()) {
    if (!unknown_vocab_.contains(w)) out.push_back(w);
  }
  return out;
}

std::optional<std::string> CategoryMap::label_in(const SampleRecord& record,
                                                 std::string_view category) const {
  std::optional<std::string> found;
  for (const std::string& l : record.labels) {
    auto c = category_of(l);
    if (c && *c == category) {
      if (found) return std::nullopt;
      found = l;
    }
  }
  return found;
}

Vec32 SyntheticTruth::expected_row(const CategoryMap& categories,
                                   const std::vector<std::string>& labels, std::size_t dim) const {
  Vec32 row = Vec32::Zero(static_cast<Eigen::Index>(dim));
  for (const std::string& label : labels) {
    auto cat = categories.category_of(label);
    if (!cat) throw DomainError("expected_row: label '" + label + "' not in vocabulary");
    const auto& dims = category_dims.at(*cat);
    const Vec32& sig = signatures.at(label);
    for (std::size_t i = 0; i < dims.size(); ++i) row[static_cast<Eigen::Index>(dims[i])] += sig[static_cast<Eigen::Index>(i)];
  }
  return row;
}

bool EmbeddingPack::operator==(const EmbeddingPack& other) const {
  if (dim != other.dim || rows.rows() != other.rows.rows() || rows.cols() != other.rows.cols()) return false;
  if (rows.size() != 0 &&
      std::memcmp(rows.data(), other.rows.data(), sizeof(float) * static_cast<std::size_t>(rows.size())) != 0) {
    return false;
  }
  return records == other.records && category_map == other.category_map &&
         provenance == other.provenance && synthetic_truth == other.synthetic_truth &&
         holdout_pairs == other.holdout_pairs;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

std::vector<Category> default_categories() {
  return {
      {"color", {"brown", "green", "blue", "aqua", "purple", "red", "white", "yellow"}},
      {"material", {"rubber", "metal", "plastic", "glass"}},
      {"shape",
       {"cube", "cylinder", "sphere", "cone", "torus", "gear", "sponge", "spot", "teapot", "suzanne",
        "torus_knot"}},
  };
}

std::vector<LabelPair> default_holdout_pairs() {
  return {{"yellow", "cone"}, {"green", "metal"},    {"plastic", "cube"},
          {"purple", "teapot"}, {"red", "metal"},    {"glass", "torus_knot"},
          {"white", "cylinder"}, {"aqua", "rubber"}, {"glass", "sphere"}};
}

std::vector<std::string> default_unknown_vocab() { return {"yellow", "glass", "torus_knot"}; }

std::vector<std::vector<std::string>> all_label_tuples(const CategoryMap& categories) {
  std::vector<std::vector<std::string>> tuples{{}};
  for (const Category& c : categories.categories()) {
    std::vector<std::vector<std::string>> next;
    next.reserve(tuples.size() * c.words.size());
    for (const auto& prefix : tuples) {
      for (const std::string& w : c.words) {
        auto t = prefix;
        t.push_back(w);
        next.push_back(std::move(t));
      }
    }
    tuples = std::move(next);
  }
  return tuples;
}

bool tuple_has_holdout_pair(const std::vector<std::string>& labels, const std::vector<LabelPair>& pairs) {
  auto has = [&](const std::string& w) { return std::find(labels.begin(), labels.end(), w) != labels.end(); };
  return std::any_of(pairs.begin(), pairs.end(),
                     [&](const LabelPair& p) { return has(p.first) && has(p.second); });
}

namespace {

struct SplitPlan {
  Split split;
  std::size_t count;
  float sigma;
  const std::vector<std::vector<std::string>>* tuples;
};

void append_samples(EmbeddingPack& pack, const SyntheticTruth& truth, const SplitPlan& plan,
                    std::vector<Vec32>& rows, Rng& rng) {
  if (plan.count == 0) return;
  std::vector<std::size_t> order(plan.tuples->size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::normal_distribution<double> noise(0.0, plan.sigma > 0.0f ? plan.sigma : 1.0);

  const auto& unknown = pack.category_map.unknown_vocab();
  for (std::size_t i = 0; i < plan.count; ++i) {
    const auto& labels = (*plan.tuples)[order[i % order.size()]];
    Vec32 row = truth.expected_row(pack.category_map, labels, pack.dim);
    if (plan.sigma > 0.0f) {
      for (Eigen::Index d = 0; d < row.size(); ++d) row[d] += static_cast<float>(noise(rng));
    }
    SampleRecord rec;
    std::ostringstream id;
    id << to_string(plan.split) << '-' << std::setw(6) << std::setfill('0') << i;
    rec.id = id.str();
    rec.labels = labels;
    rec.split = plan.split;
    rec.vocab_side = std::any_of(labels.begin(), labels.end(),
                                 [&](const std::string& l) { return unknown.contains(l); })
                         ? VocabSide::unknown
                         : VocabSide::known;
    rec.row_index = rows.size();
    rows.push_back(std::move(row));
    pack.records.push_back(std::move(rec));
  }
}

Mat32 stack_rows(const std::vector<Vec32>& rows, std::size_t dim) {
  Mat32 out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return out;
}

}  // namespace

EmbeddingPack generate_synthetic(const SyntheticConfig& config) {
  if (config.dim == 0) throw ConfigError("dim must be positive");
  if (config.categories.empty()) throw ConfigError("at least one category is required");
  if (config.dims_per_category == 0) throw ConfigError("dims_per_category must be positive");
  if (config.dims_per_category * config.categories.size() > config.dim) {
    throw ConfigError("dims_per_category x categories exceeds dim");
  }
  if (config.noise_sigma < 0.0f || config.variation_sigma < 0.0f) throw ConfigError("noise sigmas must be >= 0");

  std::set<std::string> seen;
  for (const Category& c : config.categories) {
    if (c.words.empty()) throw ConfigError("category '" + c.name + "' has no words");
    for (const std::string& w : c.words) {
      if (!seen.insert(w).second) throw ConfigError("word '" + w + "' appears twice");
    }
  }
  std::set<std::string> unknown(config.unknown_vocab.begin(), config.unknown_vocab.end());
  for (const std::string& w : unknown) {
    if (!seen.contains(w)) throw ConfigError("unknown_vocab word '" + w + "' is not in the vocabulary");
  }

  EmbeddingPack pack;
  pack.dim = config.dim;
  pack.category_map = CategoryMap(config.categories, unknown);
  pack.provenance = Provenance::synthetic;
  pack.holdout_pairs = config.holdout_pairs;

  for (const LabelPair& p : config.holdout_pairs) {
    auto a = pack.category_map.category_of(p.first);
    auto b = pack.category_map.category_of(p.second);
    if (!a || !b) throw ConfigError("holdout pair (" + p.first + ", " + p.second + ") uses unknown words");
    if (*a == *b) throw ConfigError("holdout pair (" + p.first + ", " + p.second + ") is not compatible");
  }

  const auto tuples = all_label_tuples(pack.category_map);
  std::vector<std::vector<std::string>> train_tuples;
  std::vector<std::vector<std::string>> holdout_tuples;
  for (const auto& t : tuples) {
    (tuple_has_holdout_pair(t, config.holdout_pairs) ? holdout_tuples : train_tuples).push_back(t);
  }
  for (const std::string& w : pack.category_map.vocabulary()) {
    bool present = std::any_of(train_tuples.begin(), train_tuples.end(), [&](const auto& t) {
      return std::find(t.begin(), t.end(), w) != t.end();
    });
    if (!present) throw ConfigError("holdout pairs leave no training combination for '" + w + "'");
  }
  if (config.test_nc_count > 0 && holdout_tuples.empty()) {
    throw ConfigError("test_nc_count > 0 but no holdout pairs are configured");
  }

  Rng rng(config.seed);
  SyntheticTruth truth;
  truth.noise_sigma = config.noise_sigma;
  truth.variation_sigma = config.variation_sigma;

  std::vector<std::size_t> all_dims(config.dim);
  std::iota(all_dims.begin(), all_dims.end(), std::size_t{0});
  std::shuffle(all_dims.begin(), all_dims.end(), rng);
  const std::size_t k = config.dims_per_category;
  const double min_separation = 4.0 * config.noise_sigma * std::sqrt(static_cast<double>(k));
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::size_t c = 0; c < config.categories.size(); ++c) {
    std::vector<std::size_t> dims(all_dims.begin() + static_cast<std::ptrdiff_t>(c * k),
                                  all_dims.begin() + static_cast<std::ptrdiff_t>((c + 1) * k));
    std::sort(dims.begin(), dims.end());
    truth.category_dims[config.categories[c].name] = dims;

    std::vector<Vec32> chosen;
    for (const std::string& word : config.categories[c].words) {
      bool accepted = false;
      for (int attempt = 0; attempt < 10000 && !accepted; ++attempt) {
        Vec64 v(static_cast<Eigen::Index>(k));
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(rng);
        const Vec32 sig = (v / v.norm()).cast<float>();
        accepted = std::all_of(chosen.begin(), chosen.end(), [&](const Vec32& o) {
          return (o - sig).cast<double>().norm() >= min_separation && o != sig;
        });
        if (accepted) {
          chosen.push_back(sig);
          truth.signatures[word] = sig;
        }
      }
      if (!accepted) {
        throw ConfigError("cannot place signatures for category '" + config.categories[c].name +
                          "' with the required separation; lower noise_sigma or raise dims_per_category");
      }
    }
  }

  std::vector<Vec32> rows;
  rows.reserve(config.train_count + config.test_nc_count + config.test_v_count);
  append_samples(pack, truth, {Split::train, config.train_count, config.noise_sigma, &train_tuples}, rows, rng);
  append_samples(pack, truth, {Split::test_nc, config.test_nc_count, config.noise_sigma, &holdout_tuples}, rows,
                 rng);
  append_samples(pack, truth, {Split::test_v, config.test_v_count, config.variation_sigma, &tuples}, rows, rng);
  pack.rows = stack_rows(rows, config.dim);
  pack.synthetic_truth = std::move(truth);
  return pack;
}

EmbeddingPack generate_holdout(const EmbeddingPack& pack, std::size_t count, std::uint64_t seed) {
  if (!pack.synthetic_truth) throw DomainError("generate_holdout requires a synthetic pack");
  EmbeddingPack out;
  out.dim = pack.dim;
  out.category_map = pack.category_map;
  out.provenance = Provenance::synthetic;
  out.synthetic_truth = pack.synthetic_truth;
  out.holdout_pairs = pack.holdout_pairs;

  std::vector<std::vector<std::string>> train_tuples;
  for (const auto& t : all_label_tuples(pack.category_map)) {
    if (!tuple_has_holdout_pair(t, pack.holdout_pairs)) train_tuples.push_back(t);
  }
  Rng rng(seed);
  std::vector<Vec32> rows;
  append_samples(out, *pack.synthetic_truth,
                 {Split::train, count, pack.synthetic_truth->noise_sigma, &train_tuples}, rows, rng);
  out.rows = stack_rows(rows, pack.dim);
  return out;
}

// ---------------------------------------------------------------------------
// IO
// ---------------------------------------------------------------------------

namespace {

json header_json(const EmbeddingPack& pack) {
  json h;
  h["magic"] = std::string(kPackMagic);
  h["version"] = kPackVersion;
  h["dim"] = pack.dim;
  h["row_count"] = pack.row_count();
  json cats = json::array();
  for (const Category& c : pack.category_map.categories()) cats.push_back({{"name", c.name}, {"words", c.words}});
  h["categories"] = cats;
  h["unknown_vocab"] = pack.category_map.unknown_vocab();
  h["provenance"] = std::string(to_string(pack.provenance));
  if (!pack.holdout_pairs.empty()) {
    json pairs = json::array();
    for (const auto& p : pack.holdout_pairs) pairs.push_back({p.first, p.second});
    h["holdout_pairs"] = pairs;
  }
  if (pack.synthetic_truth) {
    const SyntheticTruth& t = *pack.synthetic_truth;
    json truth;
    truth["noise_sigma"] = t.noise_sigma;
    truth["variation_sigma"] = t.variation_sigma;
    truth["category_dims"] = t.category_dims;
    json sigs = json::object();
    for (const auto& [word, sig] : t.signatures) sigs[word] = std::vector<float>(sig.data(), sig.data() + sig.size());
    truth["signatures"] = sigs;
    h["synthetic_truth"] = truth;
  }
  return h;
}

template <typename T>
T require_field(const json& obj, const char* field, const std::string& where) {
  if (!obj.contains(field)) throw FormatError(where + ": missing field '" + field + "'");
  try {
    return obj.at(field).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where + ": field '" + field + "' has the wrong type");
  }
}

}  // namespace

void write_pack(const EmbeddingPack& pack, const std::filesystem::path& dir) {
  if (static_cast<std::size_t>(pack.rows.cols()) != pack.dim && pack.rows.rows() != 0) {
    throw FormatError("dim: rows have " + std::to_string(pack.rows.cols()) + " columns, pack declares " +
                      std::to_string(pack.dim));
  }
  if (pack.records.size() != pack.row_count()) {
    throw FormatError("row_count: " + std::to_string(pack.row_count()) + " rows but " +
                      std::to_string(pack.records.size()) + " records");
  }
  std::filesystem::create_directories(dir);

  std::ofstream manifest(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!manifest) throw FormatError("cannot open " + (dir / kManifestFile).string() + " for writing");
  manifest << header_json(pack).dump() << '\n';
  for (const SampleRecord& r : pack.records) {
    json line;
    line["id"] = r.id;
    line["labels"] = r.labels;
    line["split"] = std::string(to_string(r.split));
    line["vocab_side"] = std::string(to_string(r.vocab_side));
    line["row"] = r.row_index;
    manifest << line.dump() << '\n';
  }
  if (!manifest) throw FormatError("failed writing manifest");

  std::ofstream blob(dir / kRowsFile, std::ios::binary | std::ios::trunc);
  if (!blob) throw FormatError("cannot open " + (dir / kRowsFile).string() + " for writing");
  std::vector<std::uint32_t> buffer(static_cast<std::size_t>(pack.rows.size()));
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = to_little_endian(std::bit_cast<std::uint32_t>(pack.rows.data()[i]));
  }
  blob.write(reinterpret_cast<const char*>(buffer.data()),
             static_cast<std::streamsize>(buffer.size() * sizeof(std::uint32_t)));
  if (!blob) throw FormatError("failed writing row data");
}

EmbeddingPack read_pack(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / kManifestFile, std::ios::binary);
  if (!manifest) throw FormatError("manifest: cannot open " + (dir / kManifestFile).string());

  std::string line;
  if (!std::getline(manifest, line)) throw FormatError("manifest: empty file");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception&) {
    throw FormatError("manifest header: not a JSON object");
  }
  const auto magic = require_field<std::string>(h, "magic", "header");
  if (magic != kPackMagic) throw FormatError("magic: expected EPK1, found '" + magic + "'");
  const auto version = require_field<int>(h, "version", "header");
  if (version != kPackVersion) throw FormatError("version: unsupported pack version " + std::to_string(version));

  EmbeddingPack pack;
  pack.dim = require_field<std::size_t>(h, "dim", "header");
  if (pack.dim == 0) throw FormatError("dim: must be positive");
  const auto row_count = require_field<std::size_t>(h, "row_count", "header");

  std::vector<Category> cats;
  for (const json& c : require_field<json>(h, "categories", "header")) {
    cats.push_back({require_field<std::string>(c, "name", "categories"),
                    require_field<std::vector<std::string>>(c, "words", "categories")});
  }
  auto unknown = require_field<std::set<std::string>>(h, "unknown_vocab", "header");
  pack.category_map = CategoryMap(std::move(cats), std::move(unknown));
  pack.provenance = parse_provenance(require_field<std::string>(h, "provenance", "header"));
  if (h.contains("holdout_pairs")) {
    for (const json& p : h["holdout_pairs"]) pack.holdout_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
  }
  if (h.contains("synthetic_truth")) {
    const json& t = h["synthetic_truth"];
    SyntheticTruth truth;
    truth.noise_sigma = require_field<float>(t, "noise_sigma", "synthetic_truth");
    truth.variation_sigma = require_field<float>(t, "variation_sigma", "synthetic_truth");
    truth.category_dims =
        require_field<std::map<std::string, std::vector<std::size_t>>>(t, "category_dims", "synthetic_truth");
    const json sigs = require_field<json>(t, "signatures", "synthetic_truth");
    for (const auto& [word, values] : sigs.items()) {
      auto v = values.get<std::vector<float>>();
      truth.signatures[word] = Eigen::Map<const Vec32>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    pack.synthetic_truth = std::move(truth);
  }

  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "record line " + std::to_string(line_no);
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception&) {
      throw FormatError(where + ": not a JSON object");
    }
    SampleRecord rec;
    rec.id = require_field<std::string>(r, "id", where);
    rec.labels = require_field<std::vector<std::string>>(r, "labels", where);
    rec.split = parse_split(require_field<std::string>(r, "split", where));
    rec.vocab_side = parse_vocab_side(require_field<std::string>(r, "vocab_side", where));
    rec.row_index = require_field<std::size_t>(r, "row", where);
    if (rec.row_index >= row_count) {
      throw FormatError(where + ": row " + std::to_string(rec.row_index) + " out of range for row_count " +
                        std::to_string(row_count));
    }
    pack.records.push_back(std::move(rec));
  }
  if (pack.records.size() != row_count) {
    throw FormatError("row_count: header declares " + std::to_string(row_count) + " rows but manifest lists " +
                      std::to_string(pack.records.size()) + " records");
  }

  const auto blob_path = dir / kRowsFile;
  std::error_code ec;
  const auto blob_size = std::filesystem::file_size(blob_path, ec);
  if (ec) throw FormatError("rows.f32: cannot stat " + blob_path.string());
  const std::uintmax_t expected = static_cast<std::uintmax_t>(row_count) * pack.dim * sizeof(float);
  if (blob_size < expected) {
    throw FormatError("rows.f32: row data shorter than manifest row_count × dim (" + std::to_string(blob_size) +
                      " < " + std::to_string(expected) + " bytes)");
  }
  if (blob_size > expected) {
    throw FormatError("rows.f32: row data longer than manifest row_count × dim (" + std::to_string(blob_size) +
                      " > " + std::to_string(expected) + " bytes)");
  }
  std::ifstream blob(blob_path, std::ios::binary);
  std::vector<std::uint32_t> buffer(row_count * pack.dim);
  blob.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(expected));
  if (!blob) throw FormatError("rows.f32: short read");
  pack.rows.resize(static_cast<Eigen::Index>(row_count), static_cast<Eigen::Index>(pack.dim));
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    pack.rows.data()[i] = std::bit_cast<float>(to_little_endian(buffer[i]));
  }
  return pack;
}

// ---------------------------------------------------------------------------
// Validation and views
// ---------------------------------------------------------------------------

std::vector<Violation> validate_pack(const EmbeddingPack& pack) {
  std::vector<Violation> out;
  const CategoryMap& cm = pack.category_map;

  std::map<std::string, int> word_count;
  for (const Category& c : cm.categories()) {
    for (const std::string& w : c.words) ++word_count[w];
  }
  for (const auto& [w, n] : word_count) {
    if (n > 1) out.push_back({"", "word '" + w + "' appears in more than one category"});
  }
  for (const std::string& w : cm.unknown_vocab()) {
    if (!word_count.contains(w)) out.push_back({"", "unknown_vocab word '" + w + "' is not in any category"});
  }
  if (pack.dim == 0) out.push_back({"", "dim must be positive"});
  if (static_cast<std::size_t>(pack.rows.cols()) != pack.dim) {
    out.push_back({"", "row width " + std::to_string(pack.rows.cols()) + " != dim " + std::to_string(pack.dim)});
  }
  if (pack.records.size() != pack.row_count()) {
    out.push_back({"", "row_count " + std::to_string(pack.row_count()) + " != record count " +
                           std::to_string(pack.records.size())});
  }

  std::vector<int> row_refs(pack.row_count(), 0);
  for (const SampleRecord& r : pack.records) {
    std::map<std::string, int> per_category;
    bool unknown_hit = false;
    for (const std::string& l : r.labels) {
      auto c = cm.category_of(l);
      if (!c) {
        out.push_back({r.id, "label '" + l + "' is not in the pack vocabulary"});
        continue;
      }
      if (++per_category[*c] == 2) out.push_back({r.id, "multiple labels in category " + *c});
      unknown_hit = unknown_hit || cm.unknown_vocab().contains(l);
    }
    const VocabSide expected = unknown_hit ? VocabSide::unknown : VocabSide::known;
    if (r.vocab_side != expected) {
      out.push_back({r.id, "vocab_side should be " + std::string(to_string(expected))});
    }
    if (r.row_index >= pack.row_count()) {
      out.push_back({r.id, "row " + std::to_string(r.row_index) + " out of range"});
    } else {
      ++row_refs[r.row_index];
      if (static_cast<std::size_t>(pack.rows.cols()) == pack.dim) {
        auto row = pack.rows.row(static_cast<Eigen::Index>(r.row_index));
        if (!row.allFinite()) {
          out.push_back({r.id, "row " + std::to_string(r.row_index) + " contains non-finite values"});
        }
      }
    }
  }
  if (pack.records.size() == pack.row_count()) {
    for (std::size_t i = 0; i < row_refs.size(); ++i) {
      if (row_refs[i] != 1) {
        out.push_back({"", "row indices are not a permutation: row " + std::to_string(i) + " referenced " +
                               std::to_string(row_refs[i]) + " times"});
      }
    }
  }

  if (pack.synthetic_truth) {
    const SyntheticTruth& t = *pack.synthetic_truth;
    std::vector<int> owner(pack.dim, 0);
    for (const auto& [cat, dims] : t.category_dims) {
      for (std::size_t d : dims) {
        if (d >= pack.dim) {
          out.push_back({"", "synthetic truth: category " + cat + " owns out-of-range dim " + std::to_string(d)});
        } else if (++owner[d] == 2) {
          out.push_back({"", "synthetic truth: dim " + std::to_string(d) + " owned by more than one category"});
        }
      }
    }
    for (const Category& c : cm.categories()) {
      auto dims_it = t.category_dims.find(c.name);
      if (dims_it == t.category_dims.end()) {
        out.push_back({"", "synthetic truth: no dims for category " + c.name});
        continue;
      }
      const double min_sep = 4.0 * t.noise_sigma * std::sqrt(static_cast<double>(dims_it->second.size()));
      for (std::size_t i = 0; i < c.words.size(); ++i) {
        auto si = t.signatures.find(c.words[i]);
        if (si == t.signatures.end() || static_cast<std::size_t>(si->second.size()) != dims_it->second.size()) {
          out.push_back({"", "synthetic truth: missing or misshaped signature for " + c.words[i]});
          continue;
        }
        for (std::size_t j = 0; j < i; ++j) {
          auto sj = t.signatures.find(c.words[j]);
          if (sj == t.signatures.end() || sj->second.size() != si->second.size()) continue;
          const double sep = (si->second - sj->second).cast<double>().norm();
          if (sep == 0.0 || sep < min_sep) {
            out.push_back({"", "synthetic truth: signatures of " + c.words[j] + " and " + c.words[i] +
                                   " are too close"});
          }
        }
      }
    }
  }
  return out;
}

std::vector<std::size_t> split_indices(const EmbeddingPack& pack, Split split, std::optional<VocabSide> side) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pack.records.size(); ++i) {
    const SampleRecord& r = pack.records[i];
    if (r.split == split && (!side || r.vocab_side == *side)) out.push_back(i);
  }
  return out;
}

std::vector<SampleRecord> split_view(const EmbeddingPack& pack, Split split, std::optional<VocabSide> side) {
  std::vector<SampleRecord> out;
  for (std::size_t i : split_indices(pack, split, side)) out.push_back(pack.records[i]);
  return out;
}

}  // namespace complearn
