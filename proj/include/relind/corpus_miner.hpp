#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/text.hpp"
#include "relind/types.hpp"

namespace relind {

struct Document {
  std::string id;
  std::string text;
};

struct MiningLimits {
  std::size_t max_len = 100;
  std::size_t max_window = 15;
};

struct MiningOptions {
  MiningLimits limits;
  /// Documents hold one sentence per line instead of running text.
  bool presplit = false;
  unsigned workers = 1;
};

struct MineResult {
  std::vector<Template> templates;
  std::size_t skipped_documents = 0;
  std::size_t sentences_scanned = 0;
};

/// Slots the closest occurrence of pair.head and pair.tail. Among equally
/// close occurrences the leftmost head wins. Returns nullopt when either
/// word is missing as a whole token.
inline std::optional<Template> sentence_to_template(
    const std::vector<std::string>& sentence_tokens, const WordPair& pair) {
  std::vector<std::size_t> heads, tails;
  for (std::size_t i = 0; i < sentence_tokens.size(); ++i) {
    if (sentence_tokens[i] == pair.head) heads.push_back(i);
    if (sentence_tokens[i] == pair.tail) tails.push_back(i);
  }
  if (heads.empty() || tails.empty()) return std::nullopt;

  std::size_t best_head = 0, best_tail = 0;
  std::size_t best_gap = SIZE_MAX;
  for (auto h : heads) {
    for (auto t : tails) {
      const std::size_t gap = (h > t ? h - t : t - h) - 1;
      if (gap < best_gap) {
        best_gap = gap;
        best_head = h;
        best_tail = t;
      }
    }
  }

  Template tpl;
  tpl.tokens = sentence_tokens;
  tpl.tokens[best_head] = kHeadMarker;
  tpl.tokens[best_tail] = kTailMarker;
  tpl.source_pair = pair;
  tpl.span_gap = best_gap;
  return tpl;
}

namespace detail {

struct MinedHit {
  std::size_t sentence_index;
  std::size_t head_position;
  std::size_t seed_index;
  Template tpl;
};

inline std::vector<MinedHit> mine_document(const Document& doc,
                                           const RelationSeed& seeds,
                                           const MiningOptions& options,
                                           std::size_t& sentence_count) {
  std::vector<MinedHit> hits;
  const auto sentences =
      options.presplit ? split_lines(doc.text) : split_sentences(doc.text);
  sentence_count = 0;
  for (std::size_t si = 0; si < sentences.size(); ++si) {
    auto tokens = tokenize(sentences[si]);
    if (tokens.empty()) continue;
    ++sentence_count;
    if (tokens.size() > options.limits.max_len) continue;
    if (std::any_of(tokens.begin(), tokens.end(),
                    [](const std::string& t) { return is_marker(t); })) {
      continue;
    }
    std::unordered_set<std::string_view> present(tokens.begin(), tokens.end());
    for (std::size_t pi = 0; pi < seeds.pairs.size(); ++pi) {
      const auto& pair = seeds.pairs[pi];
      if (!present.contains(pair.head) || !present.contains(pair.tail)) {
        continue;
      }
      auto tpl = sentence_to_template(tokens, pair);
      if (!tpl || tpl->span_gap > options.limits.max_window) continue;
      tpl->source_doc = doc.id;
      const auto head_pos = tpl->head_slot();
      hits.push_back({si, head_pos, pi, std::move(*tpl)});
    }
  }
  return hits;
}

}  // namespace detail

/// Scans every sentence for co-occurring seed pairs within the window and
/// returns one template per distinct token sequence, ordered by
/// (document id, sentence index, head position, seed order).
inline MineResult mine_sentences(std::span<const Document> corpus,
                                 const RelationSeed& seeds,
                                 const MiningOptions& options = {},
                                 Diagnostics* diag = nullptr) {
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return corpus[a].id < corpus[b].id;
  });

  std::vector<std::vector<detail::MinedHit>> per_doc(corpus.size());
  std::vector<std::size_t> sentence_counts(corpus.size(), 0);
  std::vector<char> skipped(corpus.size(), 0);
  parallel_for(order.size(), options.workers, [&](std::size_t k) {
    const auto& doc = corpus[order[k]];
    if (!is_valid_utf8(doc.text)) {
      skipped[k] = 1;
      return;
    }
    per_doc[k] = detail::mine_document(doc, seeds, options, sentence_counts[k]);
  });

  MineResult result;
  std::unordered_set<std::string> seen;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (skipped[k]) {
      ++result.skipped_documents;
      warn(diag, "skipped document '" + corpus[order[k]].id +
                     "': not valid UTF-8");
      continue;
    }
    result.sentences_scanned += sentence_counts[k];
    auto& hits = per_doc[k];
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
      return std::tie(a.sentence_index, a.head_position, a.seed_index) <
             std::tie(b.sentence_index, b.head_position, b.seed_index);
    });
    for (auto& hit : hits) {
      if (seen.insert(join(hit.tpl.tokens, "\x1f")).second) {
        result.templates.push_back(std::move(hit.tpl));
      }
    }
  }
  return result;
}

// Corpus, seed and template files.

/// Reads a directory of .txt files (sorted, ids relative to the directory)
/// or a single file.
inline std::vector<Document> load_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  auto read_file = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read corpus file " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  std::vector<Document> docs;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".txt") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      docs.push_back({fs::relative(f, path).generic_string(), read_file(f)});
    }
  } else if (fs::is_regular_file(path)) {
    docs.push_back({path.filename().string(), read_file(path)});
  } else {
    throw DataError("corpus path does not exist: " + path.string());
  }
  return docs;
}

/// TSV `relation<TAB>head<TAB>tail`. Multi-token words are rejected.
inline std::map<std::string, RelationSeed> load_seeds(std::istream& in,
                                                      const std::string& origin) {
  std::map<std::string, std::vector<WordPair>> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3) {
      throw DataError(origin + ":" + std::to_string(lineno) +
                      ": expected relation<TAB>head<TAB>tail");
    }
    try {
      pairs[fields[0]].push_back(WordPair::make(fields[1], fields[2]));
    } catch (const DataError& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::map<std::string, RelationSeed> seeds;
  for (auto& [rel, ps] : pairs) seeds.emplace(rel, RelationSeed::make(rel, ps));
  return seeds;
}

inline std::map<std::string, RelationSeed> load_seeds(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read seed file " + path.string());
  return load_seeds(in, path.string());
}

inline void write_seeds(std::ostream& out, const RelationSeed& seeds) {
  for (const auto& p : seeds.pairs) {
    out << seeds.relation << '\t' << p.head << '\t' << p.tail << '\n';
  }
}

inline void write_templates_jsonl(std::ostream& out,
                                  const std::vector<Template>& templates) {
  for (const auto& t : templates) out << template_to_json(t).dump() << '\n';
}

inline std::vector<Template> read_templates_jsonl(std::istream& in) {
  std::vector<Template> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(std::string("malformed template line: ") + e.what());
    }
    out.push_back(template_from_json(j));
  }
  return out;
}

}  // namespace relind
