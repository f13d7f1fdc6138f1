#pragma once

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/corpus_miner.hpp"
#include "relind/eval_harness.hpp"
#include "relind/fixture_oracle.hpp"
#include "relind/oracle.hpp"
#include "relind/relation_model.hpp"
#include "relind/remote_oracle.hpp"
#include "relind/template_filter.hpp"

namespace relind {

inline constexpr const char* kVersion = "1.0.0";

/// Everything a run depends on. Loaded from a `key = value` file; command
/// line flags override file values.
struct RunConfig {
  std::string corpus;
  std::string dataset;
  std::string format = "tsv";
  std::string fixture;
  std::string remote;
  std::string cache_dir;
  std::string output = "relind-out";
  EvalConfig eval;
  bool csv = false;

  void validate() const {
    if (fixture.empty() == remote.empty()) {
      throw ConfigError("configure exactly one oracle backend (fixture or remote)");
    }
    eval.validate();
    parse_format(format);
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(value, &used));
    } else {
      if (!value.empty() && value.front() == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(value, &used));
    }
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + value + "' for '" + key + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean '" + value + "' for '" + key + "'");
}

}  // namespace detail

/// Applies one setting. Relative paths are resolved against `base`.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value,
                          const std::filesystem::path& base = {}) {
  auto path = [&](const std::string& v) {
    if (v.empty()) return v;
    std::filesystem::path p(v);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.lexically_normal().string();
  };
  auto& e = c.eval;
  if (key == "corpus") c.corpus = path(value);
  else if (key == "dataset") c.dataset = path(value);
  else if (key == "format") c.format = value;
  else if (key == "fixture") c.fixture = path(value);
  else if (key == "remote") c.remote = value;
  else if (key == "cache_dir") c.cache_dir = path(value);
  else if (key == "output") c.output = path(value);
  else if (key == "csv") c.csv = detail::parse_bool(key, value);
  else if (key == "presplit") e.mining.presplit = detail::parse_bool(key, value);
  else if (key == "max_len") e.mining.limits.max_len = detail::parse_number<std::size_t>(key, value);
  else if (key == "max_window") e.mining.limits.max_window = detail::parse_number<std::size_t>(key, value);
  else if (key == "k") e.filter.k = detail::parse_number<std::size_t>(key, value);
  else if (key == "prefilter") e.filter.prefilter_size = detail::parse_number<std::size_t>(key, value);
  else if (key == "top") {
    if (value == "all") {
      e.filter_templates = false;
    } else {
      e.filter_templates = true;
      e.filter.final_k = detail::parse_number<std::size_t>(key, value);
    }
  }
  else if (key == "aggregation") e.aggregation = parse_aggregation(value);
  else if (key == "seed") e.seed = detail::parse_number<std::uint64_t>(key, value);
  else if (key == "workers") e.workers = detail::parse_number<unsigned>(key, value);
  else if (key == "learning_rate") e.train.learning_rate = detail::parse_number<double>(key, value);
  else if (key == "weight_decay") e.train.weight_decay = detail::parse_number<double>(key, value);
  else if (key == "warmup_fraction") e.train.warmup_fraction = detail::parse_number<double>(key, value);
  else if (key == "epochs") e.train.epochs = detail::parse_number<int>(key, value);
  else if (key == "batch_size") e.train.batch_size = detail::parse_number<std::size_t>(key, value);
  else if (key == "cross_ratio") e.cross_ratio = detail::parse_number<double>(key, value);
  else throw ConfigError("unknown configuration key '" + key + "'");
}

inline void load_config_file(RunConfig& c, const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  const auto base = std::filesystem::absolute(file).parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), base);
  }
}

/// Canonical key-value rendering. Output location and worker count are
/// left out; they do not affect results.
inline std::string config_to_text(const RunConfig& c) {
  const auto& e = c.eval;
  std::ostringstream out;
  auto kv = [&](const char* k, const auto& v) {
    out << k << " = ";
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      char buf[32];
      out << std::string_view(buf, std::to_chars(buf, buf + sizeof buf, v).ptr - buf);
    } else {
      out << v;
    }
    out << '\n';
  };
  if (!c.corpus.empty()) kv("corpus", c.corpus);
  if (!c.dataset.empty()) kv("dataset", c.dataset);
  kv("format", c.format);
  if (!c.fixture.empty()) kv("fixture", c.fixture);
  if (!c.remote.empty()) kv("remote", c.remote);
  kv("presplit", e.mining.presplit ? "true" : "false");
  kv("max_len", e.mining.limits.max_len);
  kv("max_window", e.mining.limits.max_window);
  kv("k", e.filter.k);
  kv("prefilter", e.filter.prefilter_size);
  if (e.filter_templates) kv("top", e.filter.final_k);
  else kv("top", "all");
  kv("aggregation", aggregation_name(e.aggregation));
  kv("seed", e.seed);
  kv("learning_rate", e.train.learning_rate);
  kv("weight_decay", e.train.weight_decay);
  kv("warmup_fraction", e.train.warmup_fraction);
  kv("epochs", e.train.epochs);
  kv("batch_size", e.train.batch_size);
  kv("cross_ratio", e.cross_ratio);
  return out.str();
}

/// Owns the configured backend plus the optional cache in front of it.
class OracleStack {
 public:
  explicit OracleStack(const RunConfig& c) {
    if (!c.fixture.empty()) {
      base_ = std::make_unique<FixtureOracle>(load_world(c.fixture));
    } else if (!c.remote.empty()) {
      RemoteOracleConfig rc;
      rc.url = c.remote;
      base_ = std::make_unique<RemoteOracle>(std::move(rc));
    } else {
      throw ConfigError("no oracle backend configured (use --fixture or --remote)");
    }
    if (!c.cache_dir.empty()) {
      std::filesystem::create_directories(c.cache_dir);
      cache_ = std::make_unique<CachedOracle>(
          *base_, std::filesystem::path(c.cache_dir) / "oracle-cache.jsonl");
    }
  }

  const LmOracle& oracle() const {
    return cache_ ? static_cast<const LmOracle&>(*cache_) : *base_;
  }

 private:
  std::unique_ptr<LmOracle> base_;
  std::unique_ptr<CachedOracle> cache_;
};

/// Raised when a stage needs an artifact that an earlier subcommand writes.
class MissingArtifact : public DataError {
 public:
  MissingArtifact(const std::filesystem::path& file, const std::string& producer)
      : DataError("missing " + file.string() + "; run `relind " + producer + "` first") {}
};

/// Runs fn, prefixing any error with the stage name. Exception types are
/// kept so exit codes stay meaningful.
template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  const std::string prefix = "stage '" + stage + "' failed: ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const OracleError& e) {
    throw OracleError(prefix + e.what());
  } catch (const LeakageError& e) {
    throw LeakageError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const TrainingError& e) {
    throw TrainingError(prefix + e.what());
  }
}

/// Stage artifacts under one output directory:
///   splits/relations.tsv, splits/<slug>.{fit,tune,test}.tsv
///   templates/<slug>.jsonl, filtered/<slug>.jsonl, models/<slug>.json
///   report.json, report.txt, report.csv, manifest.json, run.conf
class Workspace {
 public:
  explicit Workspace(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  static std::string slug(const std::string& relation) {
    std::string s;
    for (char c : relation) {
      const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
      s += keep ? c : '_';
    }
    return s.empty() ? "_" : s;
  }

  std::filesystem::path split_file(const std::string& rel, const char* part) const {
    return root_ / "splits" / (slug(rel) + "." + part + ".tsv");
  }
  std::filesystem::path templates_file(const std::string& rel) const {
    return root_ / "templates" / (slug(rel) + ".jsonl");
  }
  std::filesystem::path filtered_file(const std::string& rel) const {
    return root_ / "filtered" / (slug(rel) + ".jsonl");
  }
  std::filesystem::path model_file(const std::string& rel) const {
    return root_ / "models" / (slug(rel) + ".json");
  }
  std::filesystem::path index_file() const { return root_ / "splits" / "relations.tsv"; }

  std::vector<std::string> relations() const {
    std::ifstream in(index_file());
    if (!in) throw MissingArtifact(index_file(), "split");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(line);
    }
    return out;
  }

  void write_index(const std::vector<std::string>& relations) const {
    std::set<std::string> slugs;
    for (const auto& r : relations) {
      if (!slugs.insert(slug(r)).second) {
        throw DataError("relation names collide on disk: '" + r + "'");
      }
    }
    std::filesystem::create_directories(index_file().parent_path());
    std::ofstream out(index_file());
    for (const auto& r : relations) out << r << '\n';
  }

  std::vector<WordPair> read_pairs(const std::string& rel, const char* part) const {
    const auto file = split_file(rel, part);
    if (!std::filesystem::exists(file)) throw MissingArtifact(file, "split");
    auto seeds = load_seeds(file);
    if (seeds.empty()) return {};
    return seeds.begin()->second.pairs;
  }

  void write_pairs(const std::string& rel, const char* part,
                   const std::vector<WordPair>& pairs) const {
    std::filesystem::create_directories(root_ / "splits");
    std::ofstream out(split_file(rel, part));
    for (const auto& p : pairs) out << rel << '\t' << p.head << '\t' << p.tail << '\n';
  }

  RelationSplit read_split(const std::string& rel) const {
    RelationSplit s;
    s.fit = read_pairs(rel, "fit");
    if (std::filesystem::exists(split_file(rel, "tune"))) s.tune = read_pairs(rel, "tune");
    if (std::filesystem::exists(split_file(rel, "test"))) s.test = read_pairs(rel, "test");
    return s;
  }

 private:
  std::filesystem::path root_;
};

namespace detail {

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write " + file.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& file, const std::string& producer) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw MissingArtifact(file, producer);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// File-based stages; each subcommand runs one of these.

inline void pipeline_split(const RunConfig& c, const Workspace& ws, Diagnostics* diag) {
  const auto ds = load_dataset(c.dataset, parse_format(c.format), diag);
  std::vector<std::string> names;
  for (const auto& [rel, pairs] : ds.relations) {
    names.push_back(rel);
    const auto split = make_split(pairs, relation_seed(c.eval.seed, rel));
    ws.write_pairs(rel, "fit", split.fit);
    ws.write_pairs(rel, "tune", split.tune);
    ws.write_pairs(rel, "test", split.test);
  }
  ws.write_index(names);
}

/// Uses the fit split of each relation as seeds.
inline void pipeline_mine(const RunConfig& c, const Workspace& ws, Diagnostics* diag) {
  const auto corpus = load_corpus(c.corpus);
  for (const auto& rel : ws.relations()) {
    const auto fit = ws.read_pairs(rel, "fit");
    std::vector<Template> templates;
    if (!fit.empty()) templates = stage_mine(corpus, rel, fit, c.eval, diag);
    std::ostringstream out;
    write_templates_jsonl(out, templates);
    detail::write_text(ws.templates_file(rel), out.str());
  }
}

inline void pipeline_filter(const RunConfig& c, const Workspace& ws, const LmOracle& oracle,
                            Diagnostics* diag) {
  for (const auto& rel : ws.relations()) {
    std::istringstream in(detail::read_text(ws.templates_file(rel), "mine"));
    const auto templates = read_templates_jsonl(in);
    const auto fit = ws.read_pairs(rel, "fit");
    std::vector<ScoredTemplate> selected;
    if (!templates.empty()) selected = stage_filter(templates, rel, fit, oracle, c.eval, diag);
    std::ostringstream out;
    for (const auto& s : selected) out << scored_to_json(s).dump() << '\n';
    detail::write_text(ws.filtered_file(rel), out.str());
  }
}

inline std::vector<Template> read_filtered(const Workspace& ws, const std::string& rel) {
  std::istringstream in(detail::read_text(ws.filtered_file(rel), "filter"));
  std::vector<Template> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(scored_from_json(nlohmann::json::parse(line)).tpl);
  }
  return out;
}

/// Relations without templates or with fewer than two fit pairs get no
/// model; evaluation reports them as unevaluable.
inline void pipeline_train(const RunConfig& c, const Workspace& ws, const LmOracle& oracle,
                           Diagnostics* diag) {
  std::map<std::string, std::vector<WordPair>> relations;
  if (!c.dataset.empty()) {
    relations = load_dataset(c.dataset, parse_format(c.format), nullptr).relations;
  }
  for (const auto& rel : ws.relations()) {
    const auto templates = read_filtered(ws, rel);
    const auto split = ws.read_split(rel);
    std::filesystem::remove(ws.model_file(rel));
    if (templates.empty() || split.fit.size() < 2) continue;
    auto rels = relations;
    if (rels.empty()) rels[rel] = split.train();
    const auto model = stage_train(templates, rel, split, rels, oracle, c.eval, diag);
    detail::write_text(ws.model_file(rel), model_to_json(model).dump(2) + "\n");
  }
}

inline RelationModel load_model(const Workspace& ws, const std::string& rel) {
  const auto text = detail::read_text(ws.model_file(rel), "train");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("model " + ws.model_file(rel).string() + ": " + e.what());
  }
  return model_from_json(j);
}

inline nlohmann::json make_manifest(const RunConfig& c) {
  const auto text = config_to_text(c);
  return {{"version", kVersion},
          {"config", config_to_json(c.eval)},
          {"config_text", text},
          {"config_hash", std::to_string(fnv1a(text))},
          {"oracle", c.fixture.empty() ? "remote:" + c.remote : "fixture:" + c.fixture},
          {"dataset", c.dataset},
          {"format", c.format},
          {"corpus", c.corpus}};
}

inline EvalReport pipeline_eval(const RunConfig& c, const Workspace& ws, const LmOracle& oracle,
                                Diagnostics* diag) {
  const auto ds = load_dataset(c.dataset, parse_format(c.format), nullptr);
  EvalReport report;
  nlohmann::json seeds = nlohmann::json::object();
  for (const auto& rel : ws.relations()) {
    const auto rs = relation_seed(c.eval.seed, rel);
    seeds[rel] = {{"relation", std::to_string(rs)},
                  {"split", std::to_string(stage_seed(rs, "split"))},
                  {"train", std::to_string(stage_seed(rs, "train"))},
                  {"train_negatives", std::to_string(stage_seed(rs, "train-negatives"))},
                  {"test_negatives", std::to_string(stage_seed(rs, "test-negatives"))}};
    RelationReport rr;
    rr.category = ds.category_of(rel);
    if (!std::filesystem::exists(ws.model_file(rel))) {
      rr.notice = "no model (no templates mined or too few pairs)";
      report.per_relation[rel] = rr;
      continue;
    }
    const auto model = load_model(ws, rel);
    report.per_relation[rel] =
        stage_evaluate(model, ws.read_split(rel), ds, oracle, c.eval, diag);
  }
  finalize_report(report);
  report.manifest = make_manifest(c);
  report.manifest["seeds"] = seeds;

  detail::write_text(ws.root() / "report.json", report_to_json(report).dump(2) + "\n");
  detail::write_text(ws.root() / "report.txt", report_to_table(report));
  if (c.csv) detail::write_text(ws.root() / "report.csv", report_to_csv(report));
  detail::write_text(ws.root() / "manifest.json", report.manifest.dump(2) + "\n");
  detail::write_text(ws.root() / "run.conf", config_to_text(c));
  return report;
}

/// split -> mine -> filter -> train -> eval, every hand-off through files.
inline EvalReport run_pipeline(const RunConfig& c, Diagnostics* diag = nullptr) {
  c.validate();
  if (c.corpus.empty() || c.dataset.empty()) {
    throw ConfigError("run needs both corpus and dataset");
  }
  if (!std::filesystem::exists(c.corpus)) throw ConfigError("corpus not found: " + c.corpus);
  if (!std::filesystem::exists(c.dataset)) throw ConfigError("dataset not found: " + c.dataset);
  const Workspace ws(c.output);
  const OracleStack oracles(c);
  const auto& oracle = oracles.oracle();
  run_stage("split", [&] { pipeline_split(c, ws, diag); });
  run_stage("mine", [&] { pipeline_mine(c, ws, diag); });
  run_stage("filter", [&] { pipeline_filter(c, ws, oracle, diag); });
  run_stage("train", [&] { pipeline_train(c, ws, oracle, diag); });
  return run_stage("eval", [&] { return pipeline_eval(c, ws, oracle, diag); });
}

}  // namespace relind
