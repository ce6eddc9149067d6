#include "cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "complearn/baselines.hpp"
#include "complearn/decoder.hpp"
#include "complearn/embedpack.hpp"
#include "complearn/evalsuite.hpp"
#include "complearn/lexicon.hpp"
#include "complearn/run_config.hpp"
#include "complearn/trainer.hpp"
#include "json.hpp"

namespace complearn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct LockError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AcceptanceFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class StoreLock {
 public:
  explicit StoreLock(const fs::path& store) : path_(store / ".lock") {
    fs::create_directories(store);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw LockError("store " + store.string() + " is locked (" + path_.string() + " exists)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~StoreLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

struct Context {
  RunConfig config;
  std::string out_dir_flag;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

fs::path make_run_dir(const Context& ctx, const std::string& command) {
  fs::path base = "runs";
  if (const auto v = ctx.config.get("out_dir")) base = *v;
  if (const char* env = std::getenv("COMPLEARN_OUT_DIR"); env && *env) base = env;
  if (!ctx.out_dir_flag.empty()) base = ctx.out_dir_flag;
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  fs::path dir = base / (std::string(stamp) + "-" + command);
  for (int n = 2; fs::exists(dir); ++n) dir = base / (std::string(stamp) + "-" + command + "-" + std::to_string(n));
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << ctx.config.to_text();
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

EmbeddingPack load_valid_pack(const fs::path& path) {
  EmbeddingPack pack = read_pack(path);
  const auto violations = validate_pack(pack);
  if (!violations.empty()) {
    std::string msg = path.string() + ": pack fails validation:";
    for (std::size_t i = 0; i < std::min<std::size_t>(violations.size(), 5); ++i) {
      msg += "\n  " + (violations[i].record_id.empty() ? std::string("<pack>") : violations[i].record_id) + ": " +
             violations[i].rule;
    }
    if (violations.size() > 5) msg += "\n  ... " + std::to_string(violations.size() - 5) + " more";
    throw FormatError(msg);
  }
  return pack;
}

Lexicon open_or_create(const fs::path& store, const EmbeddingPack& pack, const RunConfig& cfg) {
  if (fs::exists(store / "index.json")) {
    Lexicon lex = load_store(store);
    if (lex.embedding_dim() != pack.dim) {
      throw FormatError("store dim " + std::to_string(lex.embedding_dim()) + " != pack dim " +
                        std::to_string(pack.dim));
    }
    return lex;
  }
  LexiconConfig lc;
  lc.embedding_dim = pack.dim;
  lc.seed = std::stoull(cfg.require("seed"));
  lc.config_hash = cfg.training_hash();
  return Lexicon(lc);
}

void append_log(const fs::path& path, const std::vector<TrainStats>& stats) {
  std::ofstream log(path, std::ios::app);
  for (const auto& s : stats) log << s.to_json_line() << "\n";
}

std::optional<VocabSide> train_side(const RunConfig& cfg) {
  const std::string side = cfg.get_string("train_side", "all");
  if (side == "all") return std::nullopt;
  try {
    return parse_vocab_side(side);
  } catch (const std::exception&) {
    throw ConfigError("train_side: expected all, known or unknown, got '" + side + "'");
  }
}

double pack_noise(const EmbeddingPack& pack) {
  return pack.synthetic_truth ? static_cast<double>(pack.synthetic_truth->noise_sigma) : -1.0;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_gen_data(Context& ctx) {
  const RunConfig& cfg = ctx.config;
  const fs::path out = cfg.require("pack");
  const EmbeddingPack pack = generate_synthetic(cfg.synthetic_config());
  write_pack(pack, out);

  std::ostringstream s;
  s << "pack: " << out.string() << "\n";
  s << "dim: " << pack.dim << "\n";
  s << "rows: " << pack.row_count() << "\n";
  s << "vocab: " << pack.category_map.vocabulary().size() << "\n";
  for (const auto& c : pack.category_map.categories()) {
    s << "  " << c.name << " (" << c.words.size() << "):";
    for (const auto& w : c.words) s << " " << w;
    s << "\n";
  }
  s << "unknown vocab: " << pack.category_map.unknown_vocab().size() << ":";
  for (const auto& w : pack.category_map.unknown_vocab()) s << " " << w;
  s << "\n";
  for (Split split : {Split::train, Split::test_nc, Split::test_v}) {
    s << "split " << to_string(split) << ": " << split_indices(pack, split).size() << " (known "
      << split_indices(pack, split, VocabSide::known).size() << ", unknown "
      << split_indices(pack, split, VocabSide::unknown).size() << ")\n";
  }
  s << "holdout pairs:";
  for (const auto& [a, b] : pack.holdout_pairs) s << " " << a << "+" << b;
  s << "\n";
  write_text(out / "summary.txt", s.str());
  *ctx.out << s.str();
  return kExitOk;
}

int cmd_train(Context& ctx) {
  const RunConfig& cfg = ctx.config;
  cfg.require("seed");
  const TrainConfig tc = cfg.train_config();
  const fs::path store = cfg.require("store");
  const EmbeddingPack pack = load_valid_pack(cfg.require("pack"));
  StoreLock lock(store);
  Lexicon lex = open_or_create(store, pack, cfg);
  const auto side = train_side(cfg);
  std::vector<std::string> labels;
  if (const auto l = cfg.get("labels")) {
    labels = split_list(*l);
  } else if (side == VocabSide::known) {
    labels = pack.category_map.known_vocabulary();
  } else if (side == VocabSide::unknown) {
    for (const auto& w : pack.category_map.vocabulary()) {
      if (pack.category_map.unknown_vocab().contains(w)) labels.push_back(w);
    }
  } else {
    labels = pack.category_map.vocabulary();
  }
  const PackView view(pack, split_indices(pack, Split::train, side));
  const auto run_dir = make_run_dir(ctx, "train");
  const auto stats = train_vocabulary(lex, view, labels, tc);
  append_log(run_dir / "train.log", stats);
  save_store(lex, store);
  *ctx.out << "trained " << labels.size() << " concepts x " << tc.epochs << " epochs; store " << store.string()
           << "; run " << run_dir.string() << "\n";
  return kExitOk;
}

int cmd_train_decoders(Context& ctx) {
  const RunConfig& cfg = ctx.config;
  const TrainConfig tc = cfg.train_config();
  const fs::path store = cfg.require("store");
  const EmbeddingPack pack = load_valid_pack(cfg.require("pack"));
  StoreLock lock(store);
  if (!fs::exists(store / "index.json")) throw FormatError("store: missing " + (store / "index.json").string());
  Lexicon lex = load_store(store);
  std::vector<std::string> labels;
  if (const auto l = cfg.get("labels")) {
    labels = split_list(*l);
  } else {
    for (const auto& [label, entry] : lex.entries()) {
      if (entry.trained()) labels.push_back(label);
    }
  }
  const auto run_dir = make_run_dir(ctx, "train-decoders");
  const auto stats = train_decoders(lex, PackView(pack, split_indices(pack, Split::train, train_side(cfg))), labels, tc);
  append_log(run_dir / "train.log", stats);
  save_store(lex, store);
  *ctx.out << "trained " << labels.size() << " decoders; run " << run_dir.string() << "\n";
  return kExitOk;
}

int cmd_refine(Context& ctx) {
  const RunConfig& cfg = ctx.config;
  const TrainConfig tc = cfg.train_config();
  const fs::path store = cfg.require("store");
  const EmbeddingPack pack = load_valid_pack(cfg.require("new_pack"));
  StoreLock lock(store);
  if (!fs::exists(store / "index.json")) throw FormatError("store: missing " + (store / "index.json").string());
  Lexicon lex = load_store(store);
  const std::string split_name = cfg.get_string("refine_split", "train");
  Split split;
  try {
    split = parse_split(split_name);
  } catch (const std::exception&) {
    throw ConfigError("refine_split: unknown split '" + split_name + "'");
  }
  const PackView view(pack, split_indices(pack, split, train_side(cfg)));
  std::vector<std::string> labels = cfg.get("labels") ? split_list(*cfg.get("labels")) : lex.labels();
  const auto run_dir = make_run_dir(ctx, "refine");
  std::vector<TrainStats> stats;
  for (const auto& label : labels) {
    stats.push_back(refine_concept(lex, view, label, tc));
    if (!stats.back().note.empty()) *ctx.err << "warning: " << stats.back().note << "\n";
  }
  append_log(run_dir / "train.log", stats);
  save_store(lex, store);
  *ctx.out << "refined " << labels.size() << " concepts; run " << run_dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(Context& ctx, const std::string& which) {
  const RunConfig& cfg = ctx.config;
  const EmbeddingPack pack = load_valid_pack(cfg.require("pack"));
  const std::uint64_t eval_seed = cfg.get_uint("eval_seed", cfg.get_uint("seed", 0));
  const auto run_dir = make_run_dir(ctx, "eval-" + which);
  json meta = {{"noise_sigma", pack_noise(pack)}, {"thresholds_version", thresholds::kVersion}};

  auto load_lexicon = [&] {
    const fs::path store = cfg.require("store");
    if (!fs::exists(store / "index.json")) throw FormatError("store: missing " + (store / "index.json").string());
    return load_store(store);
  };

  if (which == "recognize") {
    const Lexicon lex = load_lexicon();
    const std::size_t k = cfg.get_uint("top_k", 0);
    json reports = json::array();
    std::string csv = EvalReport::csv_header() + "\n";
    for (const auto& name : split_list(cfg.get_string("splits", "train,test_nc,test_v"))) {
      EvalReport r;
      try {
        r = eval_recognition(lex, pack, parse_split(name), std::nullopt, k);
      } catch (const DomainError&) {
        throw;
      } catch (const std::exception&) {
        throw ConfigError("splits: unknown split '" + name + "'");
      }
      reports.push_back(json::parse(r.to_json()));
      csv += r.to_csv();
    }
    if (pack.synthetic_truth) {
      const EmbeddingPack holdout = generate_holdout(pack, cfg.get_uint("holdout_count", 500), eval_seed);
      EvalReport r = eval_recognition(lex, holdout, Split::train, std::nullopt, k);
      r.split = "holdout";
      reports.push_back(json::parse(r.to_json()));
      csv += r.to_csv();
    }
    meta["reports"] = reports;
    write_text(run_dir / "recognize.json", meta.dump(2) + "\n");
    write_text(run_dir / "recognize.csv", csv);
  } else if (which == "continual") {
    ContinualConfig cc;
    cc.train = cfg.train_config();
    cc.lexicon.embedding_dim = pack.dim;
    cc.lexicon.seed = cfg.get_uint("seed", 0);
    cc.lexicon.config_hash = cfg.training_hash();
    cc.baseline_steps = cfg.get_uint("baseline_steps", cc.baseline_steps);
    const ContinualResult res = continual_protocol(pack, cc);
    meta["continual"] = json::parse(res.to_json());
    write_text(run_dir / "continual.json", meta.dump(2) + "\n");
    std::string csv = EvalReport::csv_header() + "\n";
    for (const EvalReport* r : {&res.round1_known, &res.round2_unknown_only_known, &res.round2_unknown_only_full}) {
      csv += r->to_csv();
    }
    for (const auto* r : {&res.round2_full_known, &res.round2_full_full, &res.linear_round1_known,
                          &res.linear_round2_known, &res.linear_round2_full}) {
      if (*r) csv += (*r)->to_csv();
    }
    write_text(run_dir / "continual.csv", csv);
  } else if (which == "compose") {
    const Lexicon lex = load_lexicon();
    const std::size_t runs = cfg.get_uint("mc_runs", 15);
    const std::size_t items = cfg.get_uint("mc_items", 100);
    const McResult trained = composition_mc(lex, pack, runs, items, eval_seed);
    const McResult control =
        composition_mc(with_untrained_decoders(lex, derive_seed(eval_seed, "control")), pack, runs, items, eval_seed);
    meta["trained"] = json::parse(trained.to_json());
    meta["untrained_control"] = json::parse(control.to_json());
    write_text(run_dir / "compose.json", meta.dump(2) + "\n");
    std::ostringstream csv;
    csv << "model,mean,stddev,runs,items_per_run\n";
    csv << "trained," << trained.mean << "," << trained.stddev << "," << runs << "," << items << "\n";
    csv << "untrained_control," << control.mean << "," << control.stddev << "," << runs << "," << items << "\n";
    write_text(run_dir / "compose.csv", csv.str());
  } else if (which == "edit") {
    const Lexicon lex = load_lexicon();
    const EditEvalResult res = composition_edit_eval(lex, pack, cfg.get_uint("edit_pairs", 500), eval_seed);
    meta["edit"] = json::parse(res.to_json());
    write_text(run_dir / "edit.json", meta.dump(2) + "\n");
  } else if (which == "baselines") {
    BaselineConfig bc;
    bc.steps = cfg.get_uint("baseline_steps", bc.steps);
    bc.seed = cfg.get_uint("seed", 0);
    const auto train = split_indices(pack, Split::train);
    json reports = json::array();
    std::string csv = EvalReport::csv_header() + "\n";
    for (BaselineKind kind : {BaselineKind::linear, BaselineKind::multi_attr, BaselineKind::contrastive}) {
      const BaselineHead head = train_baseline(kind, pack, train, pack.category_map.vocabulary(), bc);
      for (Split split : {Split::test_nc, Split::test_v}) {
        EvalReport r = eval_baseline(head, pack, split_indices(pack, split));
        r.name = "baseline";
        r.split = std::string(to_string(split));
        reports.push_back(json::parse(r.to_json()));
        csv += r.to_csv();
      }
    }
    meta["reports"] = reports;
    write_text(run_dir / "baselines.json", meta.dump(2) + "\n");
    write_text(run_dir / "baselines.csv", csv);
  }
  *ctx.out << "eval " << which << ": " << run_dir.string() << "\n";
  return kExitOk;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    throw FormatError(path.string() + ": not valid JSON");
  }
}

int cmd_check(Context& ctx, const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw ConfigError("check: no run directory " + run_dir.string());
  std::size_t checked = 0, failed = 0;
  auto verdict = [&](const std::string& what, bool ok, const std::string& detail) {
    ++checked;
    failed += !ok;
    *ctx.out << (ok ? "PASS " : "FAIL ") << what << ": " << detail << "\n";
  };
  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
  };

  if (fs::exists(run_dir / "recognize.json")) {
    const json j = read_json(run_dir / "recognize.json");
    for (const json& r : j.at("reports")) {
      const std::string split = r.at("split");
      const double acc = r.at("all").at("accuracy");
      double bar = -1.0;
      if (split == "holdout") bar = thresholds::kHoldoutAll;
      if (split == "test_nc") bar = thresholds::kNovelAll;
      if (split == "test_v") bar = thresholds::kVariationAll;
      if (bar >= 0.0) verdict("recognize " + split + " all", acc >= bar, fmt(acc) + " >= " + fmt(bar));
    }
  }
  if (fs::exists(run_dir / "compose.json")) {
    const json j = read_json(run_dir / "compose.json");
    const double mean = j.at("trained").at("mean");
    const double control = j.at("untrained_control").at("mean");
    verdict("compose accuracy", mean >= thresholds::kMcAccuracy, fmt(mean) + " >= " + fmt(thresholds::kMcAccuracy));
    verdict("compose untrained control", std::abs(control - thresholds::kMcChance) <= thresholds::kMcChanceTolerance,
            fmt(control) + " within " + fmt(thresholds::kMcChance) + " +- " + fmt(thresholds::kMcChanceTolerance));
  }
  if (fs::exists(run_dir / "edit.json")) {
    const json j = read_json(run_dir / "edit.json");
    const double noise = j.at("noise_sigma");
    const double ratio = j.at("edit").at("mean_ratio");
    const double bar = noise == 0.0 ? thresholds::kEditZeroNoise : thresholds::kEditNoisy;
    verdict("edit mean relative error", ratio <= bar, fmt(ratio) + " <= " + fmt(bar));
    const std::size_t mism = j.at("edit").at("identity_mismatches");
    verdict("edit identity", mism == 0, std::to_string(mism) + " mismatches");
  }
  if (fs::exists(run_dir / "continual.json")) {
    const json c = read_json(run_dir / "continual.json").at("continual");
    verdict("continual isolation", c.at("known_entries_unchanged").get<bool>(),
            std::to_string(c.at("known_entries_checked").get<std::size_t>()) + " known entries hashed");
    const double r1 = c.at("round1_known").at("all").at("accuracy");
    const double r2 = c.at("round2_unknown_only_known").at("all").at("accuracy");
    verdict("continual known drop", r1 - r2 <= thresholds::kMaxKnownDrop,
            fmt(r1) + " -> " + fmt(r2) + " (max drop " + fmt(thresholds::kMaxKnownDrop) + ")");
    if (c.contains("linear_round2_full")) {
      const double ours = c.at("round2_unknown_only_full").at("all").at("accuracy");
      const double lin = c.at("linear_round2_full").at("all").at("accuracy");
      verdict("continual ordering (single seed)", ours >= lin, "ours " + fmt(ours) + " vs linear " + fmt(lin));
    }
  }
  if (checked == 0) throw ConfigError("check: no reports in " + run_dir.string());
  *ctx.out << (failed ? "FAILED " : "PASSED ") << (checked - failed) << "/" << checked << " (thresholds v"
           << thresholds::kVersion << ")\n";
  return failed ? kExitAcceptance : kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"complearn: comparative word learning over embedding packs"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::map<std::string, std::string> flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file");
    sub->add_option("--set", overrides, "override a config key (key=value)");
    sub->add_option("--out-dir", out_dir, "base directory for run outputs");
    for (const char* key : {"pack", "store", "seed", "labels", "threads", "epochs"}) {
      sub->add_option(std::string("--") + key, flags[key]);
    }
  };
  auto* gen = app.add_subcommand("gen-data", "write a synthetic embedding pack");
  common(gen);
  for (const char* key : {"dim", "noise-sigma", "variation-sigma"}) gen->add_option(std::string("--") + key, flags[key]);
  auto* train = app.add_subcommand("train", "train concepts on a pack");
  common(train);
  train->add_option("--train-side", flags["train-side"], "all, known or unknown");
  auto* train_dec = app.add_subcommand("train-decoders", "train decoders of trained concepts");
  common(train_dec);
  auto* refine = app.add_subcommand("refine", "refine trained concepts on new samples");
  common(refine);
  refine->add_option("--new-pack", flags["new-pack"]);
  auto* eval = app.add_subcommand("eval", "write evaluation reports");
  common(eval);
  std::string which;
  eval->add_option("which", which)->required()->check(
      CLI::IsMember({"recognize", "continual", "compose", "edit", "baselines"}));
  auto* check = app.add_subcommand("check", "apply acceptance thresholds to a run directory");
  std::string run_dir;
  check->add_option("run_dir", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  ctx.out_dir_flag = out_dir;
  try {
    try {
      if (!config_path.empty()) ctx.config = RunConfig::load(config_path);
      for (const auto& [flag, value] : flags) {
        if (value.empty()) continue;
        std::string key = flag;
        std::replace(key.begin(), key.end(), '-', '_');
        ctx.config.set(key, value);
      }
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        ctx.config.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      ctx.config.train_config();
    } catch (const std::invalid_argument&) {
      throw ConfigError("malformed numeric value");
    }
    if (gen->parsed()) return cmd_gen_data(ctx);
    if (train->parsed()) return cmd_train(ctx);
    if (train_dec->parsed()) return cmd_train_decoders(ctx);
    if (refine->parsed()) return cmd_refine(ctx);
    if (eval->parsed()) return cmd_eval(ctx, which);
    if (check->parsed()) return cmd_check(ctx, run_dir);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

}  // namespace complearn::cli
