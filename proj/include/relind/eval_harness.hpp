#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/corpus_miner.hpp"
#include "relind/example_gen.hpp"
#include "relind/oracle.hpp"
#include "relind/relation_model.hpp"
#include "relind/template_filter.hpp"
#include "relind/types.hpp"

namespace relind {

enum class DatasetFormat { google, bats, diffvec, tsv };

inline DatasetFormat parse_format(std::string_view s) {
  if (s == "google") return DatasetFormat::google;
  if (s == "bats") return DatasetFormat::bats;
  if (s == "diffvec") return DatasetFormat::diffvec;
  if (s == "tsv") return DatasetFormat::tsv;
  throw ConfigError("unknown dataset format '" + std::string(s) +
                    "' (expected google, bats, diffvec or tsv)");
}

struct RelationDataset {
  std::string name;
  std::map<std::string, std::vector<WordPair>> relations;
  std::map<std::string, std::string> category;

  std::string category_of(const std::string& relation) const {
    auto it = category.find(relation);
    return it == category.end() ? "uncategorized" : it->second;
  }
};

namespace detail {

class DatasetBuilder {
 public:
  explicit DatasetBuilder(Diagnostics* diag) : diag_(diag) {}

  void add(const std::string& relation, std::string_view head, std::string_view tail) {
    auto& seen = seen_[relation];
    auto& pairs = relations_[relation];
    try {
      auto p = WordPair::make(head, tail);
      if (seen.insert(p).second) pairs.push_back(std::move(p));
    } catch (const DataError&) {
      ++dropped_;
    }
  }

  std::map<std::string, std::vector<WordPair>> finish() {
    if (dropped_ > 0) {
      warn(diag_, "dropped " + std::to_string(dropped_) +
                      " multi-token or reflexive entries");
    }
    for (const auto& [rel, pairs] : relations_) {
      if (pairs.empty()) throw DataError("relation '" + rel + "' has no usable pairs");
    }
    if (relations_.empty()) throw DataError("dataset contains no relations");
    return std::move(relations_);
  }

 private:
  Diagnostics* diag_;
  std::size_t dropped_ = 0;
  std::map<std::string, std::set<WordPair>> seen_;
  std::map<std::string, std::vector<WordPair>> relations_;
};

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

inline std::vector<std::string> split_on(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, sep)) {
    auto b = f.find_first_not_of(" \t\r");
    auto e = f.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : f.substr(b, e - b + 1));
  }
  return out;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline void parse_bats_file(std::istream& in, const std::string& relation,
                            DatasetBuilder& b) {
  std::string line;
  while (std::getline(in, line)) {
    auto f = split_ws(strip_cr(line));
    if (f.size() < 2) continue;
    std::string answers;
    for (std::size_t i = 1; i < f.size(); ++i) answers += (i > 1 ? " " : "") + f[i];
    for (const auto& a : split_on(answers, '/')) {
      if (!a.empty()) b.add(relation, f[0], a);
    }
  }
}

}  // namespace detail

/// Loads a benchmark into normalized single-token pairs.
///  google:  ": section" headers, then "a b c d" lines giving (a,b), (c,d)
///  bats:    one relation per .txt file, lines "word answer1/answer2"
///  diffvec: "relation,head,tail"
///  tsv:     "relation<TAB>head<TAB>tail"
/// Categories are read from "<path>.categories" (relation<TAB>category).
inline RelationDataset load_dataset(const std::filesystem::path& path,
                                    DatasetFormat format, Diagnostics* diag = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw DataError("dataset path does not exist: " + path.string());
  RelationDataset ds;
  ds.name = path.filename().string();
  detail::DatasetBuilder builder(diag);

  auto open = [](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot read " + p.string());
    return in;
  };

  switch (format) {
    case DatasetFormat::google: {
      auto in = open(path);
      std::string line, section;
      while (std::getline(in, line)) {
        line = detail::strip_cr(line);
        if (line.empty()) continue;
        if (line.front() == ':') {
          auto f = detail::split_ws(line.substr(1));
          section = f.empty() ? "" : f.front();
          continue;
        }
        auto f = detail::split_ws(line);
        if (section.empty() || f.size() != 4) {
          throw DataError("malformed google analogy line: '" + line + "'");
        }
        builder.add(section, f[0], f[1]);
        builder.add(section, f[2], f[3]);
      }
      break;
    }
    case DatasetFormat::bats: {
      std::vector<fs::path> files;
      if (fs::is_directory(path)) {
        for (const auto& e : fs::recursive_directory_iterator(path)) {
          if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
      } else {
        files.push_back(path);
      }
      for (const auto& f : files) {
        auto in = open(f);
        detail::parse_bats_file(in, f.stem().string(), builder);
      }
      break;
    }
    case DatasetFormat::diffvec:
    case DatasetFormat::tsv: {
      auto in = open(path);
      const char sep = format == DatasetFormat::tsv ? '\t' : ',';
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty() || line.front() == '#') continue;
        auto f = detail::split_on(line, sep);
        if (f.size() != 3) {
          throw DataError(path.string() + ":" + std::to_string(lineno) +
                          ": expected three fields");
        }
        builder.add(f[0], f[1], f[2]);
      }
      break;
    }
  }
  ds.relations = builder.finish();

  const fs::path sidecar = path.string() + ".categories";
  if (fs::exists(sidecar)) {
    auto in = open(sidecar);
    std::string line;
    while (std::getline(in, line)) {
      auto f = detail::split_on(detail::strip_cr(line), '\t');
      if (f.size() == 2 && !f[0].empty()) ds.category[f[0]] = f[1];
    }
  }
  return ds;
}

struct SplitPairs {
  std::vector<WordPair> train;
  std::vector<WordPair> test;
};

/// Seeded shuffle, then the last max(1, round(n/10)) pairs form the test set.
inline SplitPairs split_relation(std::vector<WordPair> pairs, std::uint64_t rng_seed) {
  if (pairs.empty()) throw DataError("cannot split an empty relation");
  Rng rng(rng_seed);
  rng.shuffle(pairs);
  const auto n = pairs.size();
  const auto test = std::min<std::size_t>(
      n, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)))));
  SplitPairs out;
  out.train.assign(pairs.begin(), pairs.end() - static_cast<std::ptrdiff_t>(test));
  out.test.assign(pairs.end() - static_cast<std::ptrdiff_t>(test), pairs.end());
  return out;
}

/// Train pairs partitioned into pairs the classifier is fit on and a
/// held-out set for the sum-rule threshold.
struct RelationSplit {
  std::vector<WordPair> fit;
  std::vector<WordPair> tune;
  std::vector<WordPair> test;

  std::vector<WordPair> train() const {
    auto out = fit;
    out.insert(out.end(), tune.begin(), tune.end());
    return out;
  }
};

inline std::uint64_t relation_seed(std::uint64_t global_seed, const std::string& relation) {
  return hash_combine(global_seed, relation);
}

inline std::uint64_t stage_seed(std::uint64_t rel_seed, std::string_view stage) {
  return hash_combine(rel_seed, stage);
}

/// 90/10 train/test split, then 10% of train (when at least 3 pairs) held
/// out for threshold tuning.
inline RelationSplit make_split(const std::vector<WordPair>& pairs, std::uint64_t rel_seed) {
  auto outer = split_relation(pairs, stage_seed(rel_seed, "split"));
  RelationSplit s;
  s.test = std::move(outer.test);
  if (outer.train.size() >= 3) {
    auto inner = split_relation(std::move(outer.train), stage_seed(rel_seed, "tune-split"));
    s.fit = std::move(inner.train);
    s.tune = std::move(inner.test);
  } else {
    s.fit = std::move(outer.train);
  }
  return s;
}

enum class Aggregation { max, sum };

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "max") return Aggregation::max;
  if (s == "sum") return Aggregation::sum;
  throw ConfigError("aggregation must be 'max' or 'sum'");
}

inline const char* aggregation_name(Aggregation a) {
  return a == Aggregation::max ? "max" : "sum";
}

struct EvalConfig {
  MiningOptions mining;
  FilterOptions filter;
  /// When false every mined template is used and no scoring is done.
  bool filter_templates = true;
  Aggregation aggregation = Aggregation::max;
  TrainConfig train;
  double cross_ratio = 1.0;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  void validate() const {
    if (filter_templates && filter.final_k > filter.prefilter_size) {
      throw ConfigError("top (" + std::to_string(filter.final_k) +
                        ") must not exceed prefilter (" +
                        std::to_string(filter.prefilter_size) + ")");
    }
    if (filter.k == 0) throw ConfigError("k must be at least 1");
    if (filter_templates && filter.final_k == 0) throw ConfigError("top must be positive");
  }
};

inline nlohmann::json config_to_json(const EvalConfig& c) {
  return {{"max_len", c.mining.limits.max_len},
          {"max_window", c.mining.limits.max_window},
          {"presplit", c.mining.presplit},
          {"k", c.filter.k},
          {"prefilter", c.filter.prefilter_size},
          {"top", c.filter_templates ? nlohmann::json(c.filter.final_k) : nlohmann::json("all")},
          {"aggregation", aggregation_name(c.aggregation)},
          {"train", c.train},
          {"cross_ratio", c.cross_ratio},
          {"seed", c.seed}};
}

/// Fails when any template was mined from a pair outside the training
/// split, in particular from a test pair.
inline void check_leakage(const std::vector<Template>& templates, const RelationSplit& split) {
  const auto train = split.train();
  const std::set<WordPair> train_set(train.begin(), train.end());
  const std::set<WordPair> test_set(split.test.begin(), split.test.end());
  for (const auto& t : templates) {
    if (!t.source_pair) {
      throw LeakageError("template '" + t.text() + "' has no provenance");
    }
    if (test_set.contains(*t.source_pair)) {
      throw LeakageError("template '" + t.text() + "' was mined from test pair " +
                         to_string(*t.source_pair));
    }
    if (!train_set.contains(*t.source_pair)) {
      throw LeakageError("template '" + t.text() + "' was mined from non-training pair " +
                         to_string(*t.source_pair));
    }
  }
}

// Per-relation stages. The pipeline runs the same functions through files.

inline std::vector<Template> stage_mine(std::span<const Document> corpus,
                                        const std::string& relation,
                                        const std::vector<WordPair>& fit,
                                        const EvalConfig& config, Diagnostics* diag) {
  return mine_sentences(corpus, RelationSeed::make(relation, fit), config.mining, diag).templates;
}

inline std::vector<ScoredTemplate> stage_filter(const std::vector<Template>& templates,
                                                const std::string& relation,
                                                const std::vector<WordPair>& fit,
                                                const LmOracle& oracle,
                                                const EvalConfig& config, Diagnostics* diag) {
  if (!config.filter_templates) {
    std::vector<ScoredTemplate> all;
    for (const auto& t : templates) all.push_back({t, 0, std::nullopt});
    return all;
  }
  auto options = config.filter;
  options.workers = config.workers;
  return select_templates(templates, RelationSeed::make(relation, fit), oracle, options, diag);
}

/// Fits the head on fit positives plus training negatives and, when a
/// tuning split exists, tunes the sum-rule threshold on it.
inline RelationModel stage_train(const std::vector<Template>& templates,
                                 const std::string& relation, const RelationSplit& split,
                                 const std::map<std::string, std::vector<WordPair>>& relations,
                                 const LmOracle& oracle, const EvalConfig& config,
                                 Diagnostics* diag) {
  const auto rs = relation_seed(config.seed, relation);
  auto examples = as_positives(split.fit);
  auto negatives = gen_train_negatives(split.fit, stage_seed(rs, "train-negatives"),
                                       config.cross_ratio, diag);
  examples.insert(examples.end(), negatives.begin(), negatives.end());

  auto train_config = config.train;
  train_config.rng_seed = stage_seed(rs, "train");
  RelationModel model;
  model.relation = relation;
  model.templates = templates;
  model.head = train(templates, examples, oracle, train_config, config.workers);
  model.oracle_dim = model.head.weights.size();

  if (!split.tune.empty()) {
    try {
      auto tuning = as_positives(split.tune);
      auto tneg = gen_test_negatives(split.tune, relations, relation, word_pools(relations),
                                     stage_seed(rs, "tune-negatives"), diag);
      tuning.insert(tuning.end(), tneg.begin(), tneg.end());
      model.lambda = tune_lambda(model, tuning, oracle, diag);
    } catch (const DataError& e) {
      warn(diag, "relation '" + relation + "': no sum-rule threshold: " + e.what());
    }
  }
  return model;
}

struct RelationReport {
  std::string category = "uncategorized";
  bool evaluable = false;
  std::string notice;
  std::size_t templates = 0;
  std::size_t test_positives = 0;
  std::size_t test_negatives = 0;
  Confusion counts;
  Metrics metrics;
  std::optional<double> lambda;
};

/// Scores the test positives and their generated negatives.
inline RelationReport stage_evaluate(const RelationModel& model, const RelationSplit& split,
                                     const RelationDataset& dataset, const LmOracle& oracle,
                                     const EvalConfig& config, Diagnostics* diag) {
  check_leakage(model.templates, split);
  RelationReport report;
  report.category = dataset.category_of(model.relation);
  report.templates = model.templates.size();
  report.lambda = model.lambda;
  if (config.aggregation == Aggregation::sum && !model.lambda) {
    report.notice = "no tuned threshold for the sum rule";
    return report;
  }
  const auto rs = relation_seed(config.seed, model.relation);
  auto examples = as_positives(split.test);
  auto negatives = gen_test_negatives(split.test, dataset.relations, model.relation,
                                      word_pools(dataset.relations),
                                      stage_seed(rs, "test-negatives"), diag);
  examples.insert(examples.end(), negatives.begin(), negatives.end());
  report.test_positives = split.test.size();
  report.test_negatives = negatives.size();

  std::vector<char> decisions(examples.size(), 0);
  parallel_for(examples.size(), config.workers, [&](std::size_t i) {
    const auto score = predict_pair(model, examples[i].pair, oracle, diag);
    decisions[i] = config.aggregation == Aggregation::max ? score.decision_max
                                                          : score.decision_sum.value();
  });
  for (std::size_t i = 0; i < examples.size(); ++i) {
    report.counts.add(decisions[i] != 0, examples[i].positive());
  }
  report.metrics = compute_metrics(report.counts);
  report.evaluable = true;
  return report;
}

struct RelationOutcome {
  RelationSplit split;
  std::vector<Template> mined;
  std::vector<ScoredTemplate> selected;
  std::optional<RelationModel> model;
  RelationReport report;
};

/// mine -> filter -> train -> evaluate on a given split.
inline RelationOutcome evaluate_with_split(const RelationDataset& dataset,
                                           const std::string& relation, RelationSplit split,
                                           std::span<const Document> corpus,
                                           const LmOracle& oracle, const EvalConfig& config,
                                           Diagnostics* diag = nullptr) {
  RelationOutcome out;
  out.split = std::move(split);
  out.report.category = dataset.category_of(relation);
  if (out.split.fit.size() < 2) {
    out.report.notice = "fewer than two training pairs";
    return out;
  }
  out.mined = stage_mine(corpus, relation, out.split.fit, config, diag);
  out.selected = stage_filter(out.mined, relation, out.split.fit, oracle, config, diag);
  if (out.selected.empty()) {
    out.report.notice = "no templates mined";
    warn(diag, "relation '" + relation + "' is unevaluable: no templates mined");
    return out;
  }
  std::vector<Template> templates;
  for (const auto& s : out.selected) templates.push_back(s.tpl);
  out.model = stage_train(templates, relation, out.split, dataset.relations, oracle, config, diag);
  out.report = stage_evaluate(*out.model, out.split, dataset, oracle, config, diag);
  return out;
}

inline RelationOutcome evaluate_relation(const RelationDataset& dataset,
                                         const std::string& relation,
                                         std::span<const Document> corpus,
                                         const LmOracle& oracle, const EvalConfig& config,
                                         Diagnostics* diag = nullptr) {
  auto it = dataset.relations.find(relation);
  if (it == dataset.relations.end()) {
    throw DataError("dataset has no relation '" + relation + "'");
  }
  if (it->second.size() < 2) {
    throw DataError("relation '" + relation + "' needs at least two pairs");
  }
  return evaluate_with_split(dataset, relation,
                             make_split(it->second, relation_seed(config.seed, relation)),
                             corpus, oracle, config, diag);
}

struct EvalReport {
  std::map<std::string, RelationReport> per_relation;
  Confusion total;
  Metrics aggregate;
  std::size_t evaluated = 0;
  nlohmann::json manifest = nlohmann::json::object();
};

/// Micro-averaged totals over evaluable relations.
inline void finalize_report(EvalReport& report) {
  report.total = {};
  report.evaluated = 0;
  for (const auto& [rel, r] : report.per_relation) {
    if (!r.evaluable) continue;
    report.total += r.counts;
    ++report.evaluated;
  }
  report.aggregate = compute_metrics(report.total);
}

inline EvalReport evaluate_dataset(const RelationDataset& dataset,
                                   std::span<const Document> corpus, const LmOracle& oracle,
                                   EvalConfig config, Diagnostics* diag = nullptr) {
  config.validate();
  std::vector<std::string> names;
  for (const auto& [rel, pairs] : dataset.relations) names.push_back(rel);
  const unsigned outer = std::max(1u, std::min<unsigned>(config.workers, static_cast<unsigned>(names.size())));
  EvalConfig inner = config;
  inner.workers = std::max(1u, config.workers / outer);

  std::vector<RelationReport> reports(names.size());
  parallel_for(names.size(), outer, [&](std::size_t i) {
    if (dataset.relations.at(names[i]).size() < 2) {
      reports[i].notice = "fewer than two pairs";
      reports[i].category = dataset.category_of(names[i]);
      return;
    }
    reports[i] = evaluate_relation(dataset, names[i], corpus, oracle, inner, diag).report;
  });
  EvalReport report;
  for (std::size_t i = 0; i < names.size(); ++i) report.per_relation[names[i]] = reports[i];
  finalize_report(report);
  report.manifest = {{"config", config_to_json(config)}};
  return report;
}

// Report output.

inline nlohmann::json report_to_json(const EvalReport& r) {
  auto counts = [](const Confusion& c, const Metrics& m) {
    return nlohmann::json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn},
                          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
  };
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [rel, rr] : r.per_relation) {
    auto j = counts(rr.counts, rr.metrics);
    j["category"] = rr.category;
    j["evaluable"] = rr.evaluable;
    j["notice"] = rr.notice;
    j["templates"] = rr.templates;
    j["test_positives"] = rr.test_positives;
    j["test_negatives"] = rr.test_negatives;
    j["lambda"] = rr.lambda ? nlohmann::json(*rr.lambda) : nlohmann::json(nullptr);
    per[rel] = std::move(j);
  }
  auto agg = counts(r.total, r.aggregate);
  agg["relations_evaluated"] = r.evaluated;
  return {{"per_relation", per}, {"aggregate", agg}, {"manifest", r.manifest}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  for (const auto& [rel, e] : j.at("per_relation").items()) {
    RelationReport rr;
    rr.counts = {e.at("tp").get<std::size_t>(), e.at("fp").get<std::size_t>(),
                 e.at("fn").get<std::size_t>(), e.at("tn").get<std::size_t>()};
    rr.metrics = {e.at("precision").get<double>(), e.at("recall").get<double>(),
                  e.at("f1").get<double>()};
    rr.category = e.value("category", "uncategorized");
    rr.evaluable = e.value("evaluable", false);
    rr.notice = e.value("notice", "");
    rr.templates = e.value("templates", std::size_t{0});
    rr.test_positives = e.value("test_positives", std::size_t{0});
    rr.test_negatives = e.value("test_negatives", std::size_t{0});
    if (e.contains("lambda") && !e["lambda"].is_null()) rr.lambda = e["lambda"].get<double>();
    r.per_relation[rel] = rr;
  }
  r.manifest = j.value("manifest", nlohmann::json::object());
  finalize_report(r);
  return r;
}

/// Aligned table grouped by category, percentages with one decimal.
inline std::string report_to_table(const EvalReport& r) {
  std::map<std::string, std::vector<std::string>> by_category;
  std::size_t width = 8;
  for (const auto& [rel, rr] : r.per_relation) {
    by_category[rr.category].push_back(rel);
    width = std::max(width, rel.size());
  }
  std::ostringstream out;
  auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << 100.0 * v;
    return s.str();
  };
  auto row = [&](const std::string& name, const std::string& tpl, const std::string& pos,
                 const std::string& neg, const std::string& p, const std::string& rc,
                 const std::string& f) {
    out << std::left << std::setw(static_cast<int>(width) + 2) << name << std::right
        << std::setw(6) << tpl << std::setw(6) << pos << std::setw(6) << neg
        << std::setw(8) << p << std::setw(8) << rc << std::setw(8) << f << '\n';
  };
  row("relation", "tpl", "pos", "neg", "pr", "rec", "f1");
  for (const auto& [cat, rels] : by_category) {
    out << "[" << cat << "]\n";
    for (const auto& rel : rels) {
      const auto& rr = r.per_relation.at(rel);
      if (!rr.evaluable) {
        row(rel, std::to_string(rr.templates), "-", "-", "-", "-", "-");
        continue;
      }
      row(rel, std::to_string(rr.templates), std::to_string(rr.test_positives),
          std::to_string(rr.test_negatives), pct(rr.metrics.precision),
          pct(rr.metrics.recall), pct(rr.metrics.f1));
    }
  }
  row("micro-avg", "", std::to_string(r.total.tp + r.total.fn),
      std::to_string(r.total.fp + r.total.tn), pct(r.aggregate.precision),
      pct(r.aggregate.recall), pct(r.aggregate.f1));
  return out.str();
}

inline std::string report_to_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "relation,category,evaluable,templates,tp,fp,fn,tn,precision,recall,f1\n";
  out << std::setprecision(6);
  for (const auto& [rel, rr] : r.per_relation) {
    out << rel << ',' << rr.category << ',' << (rr.evaluable ? 1 : 0) << ',' << rr.templates
        << ',' << rr.counts.tp << ',' << rr.counts.fp << ',' << rr.counts.fn << ','
        << rr.counts.tn << ',' << rr.metrics.precision << ',' << rr.metrics.recall << ','
        << rr.metrics.f1 << '\n';
  }
  return out.str();
}

}  // namespace relind
