#include "complearn/lexicon.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "complearn/embedpack.hpp"
#include "json.hpp"

namespace complearn {

using nlohmann::json;

namespace {

constexpr char kConceptMagic[4] = {'C', 'L', 'C', '1'};
const char* const kIndexFile = "index.json";
const char* const kConceptDir = "concepts";

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void floats(const float* data, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) u32(std::bit_cast<std::uint32_t>(data[i]));
  }
  void layer(const LinearLayer& l) {
    floats(l.weights.data(), l.weights.size());
    floats(l.bias.data(), l.bias.size());
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(float* out, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) out[i] = std::bit_cast<float>(u32());
  }
  LinearLayer layer(std::size_t in, std::size_t out) {
    LinearLayer l(in, out);
    floats(l.weights.data(), l.weights.size());
    floats(l.bias.data(), l.bias.size());
    return l;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(context_ + ": truncated concept file");
  }
  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::string file_stem_for(const std::string& label) {
  std::string out;
  for (unsigned char c : label) {
    if (std::isalnum(c) || c == '_' || c == '-') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[4];
      std::snprintf(buf, sizeof(buf), "%%%02x", c);
      out += buf;
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Lexicon::Lexicon(LexiconConfig config) : config_(config) {
  if (config_.embedding_dim == 0 || config_.hidden_dim == 0 || config_.latent_dim == 0) {
    throw DomainError("lexicon dimensions must be positive");
  }
}

ConceptEntry& Lexicon::add_concept(const std::string& label, const std::string& category) {
  if (label.empty()) throw DomainError("add_concept: empty label");
  if (entries_.contains(label)) throw DomainError("add_concept: duplicate label '" + label + "'");
  Rng rng(derive_seed(config_.seed, "concept:" + label));
  ConceptEntry entry;
  entry.label = label;
  entry.category = category;
  entry.encoder = Encoder::init(config_.embedding_dim, config_.hidden_dim, config_.latent_dim, rng);
  return entries_.emplace(label, std::move(entry)).first->second;
}

Decoder& Lexicon::ensure_decoder(const std::string& label) {
  ConceptEntry& entry = at(label);
  if (!entry.decoder) {
    Rng rng(derive_seed(config_.seed, "decoder:" + label));
    entry.decoder = Decoder::init(config_.latent_dim, config_.embedding_dim, rng);
  }
  return *entry.decoder;
}

ConceptEntry& Lexicon::at(const std::string& label) {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw DomainError("no concept '" + label + "' in lexicon");
  return it->second;
}

const ConceptEntry& Lexicon::at(const std::string& label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw DomainError("no concept '" + label + "' in lexicon");
  return it->second;
}

std::vector<std::string> Lexicon::labels() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [label, _] : entries_) out.push_back(label);
  return out;
}

void Lexicon::insert_entry(ConceptEntry entry) {
  if (entry.encoder.embedding_dim() != config_.embedding_dim || entry.encoder.latent_dim() != config_.latent_dim ||
      entry.encoder.hidden.out_dim() != config_.hidden_dim) {
    throw FormatError("concept '" + entry.label + "': dimensions disagree with the lexicon");
  }
  const std::string label = entry.label;
  if (!entries_.emplace(label, std::move(entry)).second) {
    throw FormatError("concept '" + label + "' listed twice");
  }
}

Vec32 encode(const ConceptEntry& entry, const Vec32& embedding) {
  if (static_cast<std::size_t>(embedding.size()) != entry.encoder.embedding_dim()) {
    throw ShapeError("encode: embedding dim " + std::to_string(embedding.size()) + " != concept dim " +
                     std::to_string(entry.encoder.embedding_dim()));
  }
  Mat32 x = embedding.transpose();
  return entry.encoder.forward(x).row(0).transpose();
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_entry(const ConceptEntry& entry) {
  ByteWriter w;
  for (char c : kConceptMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kStoreVersion);
  w.str(entry.label);
  w.str(entry.category);
  const Encoder& enc = entry.encoder;
  w.u32(static_cast<std::uint32_t>(enc.embedding_dim()));
  w.u32(static_cast<std::uint32_t>(enc.hidden.out_dim()));
  w.u32(static_cast<std::uint32_t>(enc.latent_dim()));
  w.u64(entry.sample_count);
  w.u64(static_cast<std::uint64_t>(entry.trained_rounds));
  w.u8(entry.rep ? 1 : 0);
  w.u8(entry.decoder ? 1 : 0);
  w.floats(enc.filter_raw.data(), enc.filter_raw.size());
  w.layer(enc.hidden);
  w.layer(enc.latent);
  if (entry.rep) w.floats(entry.rep->data(), entry.rep->size());
  if (entry.decoder) {
    for (const LinearLayer& l : entry.decoder->layers) w.layer(l);
  }
  return w.take();
}

ConceptEntry deserialize_entry(std::span<const std::uint8_t> bytes, const std::string& context) {
  ByteReader r(bytes, context);
  for (char c : kConceptMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) throw FormatError(context + ": bad concept magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kStoreVersion) {
    throw FormatError(context + ": unsupported concept version " + std::to_string(version));
  }
  ConceptEntry e;
  e.label = r.str();
  e.category = r.str();
  const std::size_t dim = r.u32();
  const std::size_t hidden = r.u32();
  const std::size_t latent = r.u32();
  e.sample_count = r.u64();
  e.trained_rounds = static_cast<std::int64_t>(r.u64());
  const bool has_rep = r.u8() != 0;
  const bool has_decoder = r.u8() != 0;
  e.encoder.filter_raw.resize(static_cast<Eigen::Index>(dim));
  r.floats(e.encoder.filter_raw.data(), e.encoder.filter_raw.size());
  e.encoder.grad_filter = Vec32::Zero(static_cast<Eigen::Index>(dim));
  e.encoder.hidden = r.layer(dim, hidden);
  e.encoder.latent = r.layer(hidden, latent);
  if (has_rep) {
    Vec32 rep(static_cast<Eigen::Index>(latent));
    r.floats(rep.data(), rep.size());
    e.rep = std::move(rep);
  }
  if (has_decoder) {
    Decoder d;
    std::size_t in = latent;
    for (std::size_t i = 0; i < 3; ++i) {
      d.layers[i] = r.layer(in, kDecoderHiddenDims[i]);
      in = kDecoderHiddenDims[i];
    }
    d.layers[3] = r.layer(in, dim);
    e.decoder = std::move(d);
  }
  if (!r.at_end()) throw FormatError(context + ": trailing bytes in concept file");
  return e;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t entry_hash(const ConceptEntry& entry) { return fnv1a64(serialize_entry(entry)); }

std::uint64_t lexicon_hash(const Lexicon& lexicon) {
  std::vector<std::uint8_t> acc;
  for (const auto& [label, entry] : lexicon.entries()) {
    const std::uint64_t h = entry_hash(entry);
    for (int i = 0; i < 8; ++i) acc.push_back(static_cast<std::uint8_t>(h >> (8 * i)));
  }
  return fnv1a64(acc);
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

void save_store(const Lexicon& lexicon, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / kConceptDir);

  json index;
  index["format"] = "complearn-store";
  index["version"] = kStoreVersion;
  index["embedding_dim"] = lexicon.config().embedding_dim;
  index["hidden_dim"] = lexicon.config().hidden_dim;
  index["latent_dim"] = lexicon.config().latent_dim;
  index["seed"] = lexicon.config().seed;
  index["config_hash"] = hex64(lexicon.config().config_hash);
  json concepts = json::array();
  std::set<std::string> referenced;
  for (const auto& [label, entry] : lexicon.entries()) {
    const auto bytes = serialize_entry(entry);
    const std::uint64_t checksum = fnv1a64(bytes);
    const std::string name = file_stem_for(label) + "-" + hex64(checksum) + ".bin";
    const fs::path path = dir / kConceptDir / name;
    if (!fs::exists(path) || read_file(path) != bytes) write_file_atomic(path, bytes);
    referenced.insert(name);
    concepts.push_back({{"label", label},
                        {"category", entry.category},
                        {"file", std::string(kConceptDir) + "/" + name},
                        {"checksum", hex64(checksum)}});
  }
  index["concepts"] = concepts;
  const std::string text = index.dump(2) + "\n";
  write_file_atomic(dir / kIndexFile, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));

  for (const auto& item : fs::directory_iterator(dir / kConceptDir)) {
    if (!referenced.contains(item.path().filename().string())) fs::remove(item.path());
  }
}

Lexicon load_store(const std::filesystem::path& dir) {
  const auto index_path = dir / kIndexFile;
  if (!std::filesystem::exists(index_path)) throw FormatError("store: missing " + index_path.string());
  json index;
  try {
    const auto bytes = read_file(index_path);
    index = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception&) {
    throw FormatError("store index: not valid JSON");
  }
  if (index.value("format", "") != "complearn-store") throw FormatError("store index: unrecognised format");
  const int version = index.value("version", -1);
  if (version != kStoreVersion) throw FormatError("store index: unsupported version " + std::to_string(version));

  LexiconConfig cfg;
  try {
    cfg.embedding_dim = index.at("embedding_dim").get<std::size_t>();
    cfg.hidden_dim = index.at("hidden_dim").get<std::size_t>();
    cfg.latent_dim = index.at("latent_dim").get<std::size_t>();
    cfg.seed = index.at("seed").get<std::uint64_t>();
    cfg.config_hash = std::stoull(index.at("config_hash").get<std::string>(), nullptr, 16);
  } catch (const std::exception&) {
    throw FormatError("store index: missing or malformed header fields");
  }
  if (!index.contains("concepts") || !index.at("concepts").is_array()) {
    throw FormatError("store index: missing concepts list");
  }
  Lexicon lexicon(cfg);
  for (const json& c : index.at("concepts")) {
    if (!c.contains("label") || !c.contains("file") || !c.contains("checksum")) {
      throw FormatError("store index: malformed concept entry");
    }
    const std::string label = c.at("label").get<std::string>();
    const auto path = dir / c.at("file").get<std::string>();
    if (!std::filesystem::exists(path)) {
      throw FormatError("concept '" + label + "': missing file " + path.string());
    }
    const auto bytes = read_file(path);
    const std::uint64_t expected = std::stoull(c.at("checksum").get<std::string>(), nullptr, 16);
    if (fnv1a64(bytes) != expected) throw FormatError("concept '" + label + "': checksum mismatch");
    ConceptEntry entry = deserialize_entry(bytes, "concept '" + label + "'");
    if (entry.label != label) throw FormatError("concept '" + label + "': file holds '" + entry.label + "'");
    lexicon.insert_entry(std::move(entry));
  }
  return lexicon;
}

}  // namespace complearn
