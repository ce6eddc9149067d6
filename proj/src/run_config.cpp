#include "complearn/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "complearn/lexicon.hpp"

namespace complearn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = {
      "schema_version", "pack", "store", "out_dir", "new_pack", "refine_split", "labels",
      // training
      "seed", "batch_size", "loss_threshold", "max_rounds", "epochs", "learning_rate", "filter_lr_scale",
      "filter_sparsity", "decoder_rounds", "dropout_rate", "threads",
      // synthetic data
      "dim", "dims_per_category", "noise_sigma", "variation_sigma", "train_count", "test_nc_count",
      "test_v_count",
      // evaluation
      "splits", "top_k", "mc_runs", "mc_items", "edit_pairs", "baseline_steps", "eval_seed", "holdout_count",
      "train_side",
  };
  return keys;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool saw_version = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "schema_version") {
      if (value != std::to_string(kConfigSchemaVersion)) {
        throw ConfigError(source + ": unsupported schema_version " + value);
      }
      saw_version = true;
    }
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!saw_version) throw ConfigError(source + ": missing schema_version");
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

std::optional<std::string> RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::uint64_t RunConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + *v + "'");
  }
  return out;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + *v + "'");
  }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + *v + "'");
}

std::string RunConfig::require(const std::string& key) const {
  const auto v = get(key);
  if (!v || v->empty()) throw ConfigError("missing required key '" + key + "'");
  return *v;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.batch_size = get_uint("batch_size", t.batch_size);
  t.loss_threshold = get_double("loss_threshold", t.loss_threshold);
  t.max_rounds = get_uint("max_rounds", t.max_rounds);
  t.epochs = get_uint("epochs", t.epochs);
  t.learning_rate = get_double("learning_rate", t.learning_rate);
  t.seed = get_uint("seed", t.seed);
  t.filter_lr_scale = get_double("filter_lr_scale", t.filter_lr_scale);
  t.filter_sparsity = get_double("filter_sparsity", t.filter_sparsity);
  t.decoder_rounds = get_uint("decoder_rounds", t.decoder_rounds);
  t.dropout_rate = static_cast<float>(get_double("dropout_rate", t.dropout_rate));
  t.threads = get_uint("threads", t.threads);
  t.validate();
  return t;
}

SyntheticConfig RunConfig::synthetic_config() const {
  SyntheticConfig s;
  s.dim = get_uint("dim", s.dim);
  s.dims_per_category = get_uint("dims_per_category", s.dims_per_category);
  s.noise_sigma = static_cast<float>(get_double("noise_sigma", s.noise_sigma));
  s.variation_sigma = static_cast<float>(get_double("variation_sigma", s.variation_sigma));
  s.train_count = get_uint("train_count", s.train_count);
  s.test_nc_count = get_uint("test_nc_count", s.test_nc_count);
  s.test_v_count = get_uint("test_v_count", s.test_v_count);
  s.seed = get_uint("seed", s.seed);
  return s;
}

std::uint64_t RunConfig::training_hash() const {
  const TrainConfig t = train_config();
  std::ostringstream os;
  os.precision(17);
  os << "batch_size=" << t.batch_size << "\nloss_threshold=" << t.loss_threshold << "\nmax_rounds=" << t.max_rounds
     << "\nepochs=" << t.epochs << "\nlearning_rate=" << t.learning_rate << "\nseed=" << t.seed
     << "\nfilter_lr_scale=" << t.filter_lr_scale << "\nfilter_sparsity=" << t.filter_sparsity
     << "\ndecoder_rounds=" << t.decoder_rounds << "\ndropout_rate=" << t.dropout_rate << "\n";
  const std::string text = os.str();
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "schema_version = " << kConfigSchemaVersion << "\n";
  for (const auto& [k, v] : values_) {
    if (k != "schema_version") os << k << " = " << v << "\n";
  }
  return os.str();
}

}  // namespace complearn
