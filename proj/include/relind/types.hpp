#pragma once

#include <algorithm>
#include <compare>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/text.hpp"

namespace relind {

/// Ordered (head, tail) pair of single lowercase tokens.
struct WordPair {
  std::string head;
  std::string tail;

  /// Normalizes and validates. Throws DataError for empty, multi-token or
  /// reflexive pairs.
  static WordPair make(std::string_view head, std::string_view tail) {
    auto norm = [](std::string_view word, const char* role) {
      auto tokens = tokenize(word);
      if (tokens.empty()) {
        throw DataError(std::string("empty ") + role + " word");
      }
      if (tokens.size() != 1 || is_marker(tokens.front())) {
        throw DataError(std::string(role) + " '" + std::string(word) +
                        "' is not a single token");
      }
      return tokens.front();
    };
    WordPair pair{norm(head, "head"), norm(tail, "tail")};
    if (pair.head == pair.tail) {
      throw DataError("head and tail are identical: '" + pair.head + "'");
    }
    return pair;
  }

  WordPair swapped() const { return {tail, head}; }

  auto operator<=>(const WordPair&) const = default;
  bool operator==(const WordPair&) const = default;
};

inline std::string to_string(const WordPair& p) {
  return "(" + p.head + ", " + p.tail + ")";
}

/// A mined sentence with exactly one head slot and one tail slot.
struct Template {
  std::vector<std::string> tokens;
  std::optional<WordPair> source_pair;
  std::string source_doc;
  std::size_t span_gap = 0;

  std::size_t head_slot() const {
    return static_cast<std::size_t>(
        std::find(tokens.begin(), tokens.end(), kHeadMarker) - tokens.begin());
  }
  std::size_t tail_slot() const {
    return static_cast<std::size_t>(
        std::find(tokens.begin(), tokens.end(), kTailMarker) - tokens.begin());
  }

  std::string text() const { return join(tokens); }
};

inline void validate_template(const Template& t) {
  const auto heads = std::count(t.tokens.begin(), t.tokens.end(), kHeadMarker);
  const auto tails = std::count(t.tokens.begin(), t.tokens.end(), kTailMarker);
  if (heads != 1 || tails != 1) {
    throw DataError("template must have exactly one [HEAD] and one [TAIL]: '" +
                    t.text() + "'");
  }
  if (std::count(t.tokens.begin(), t.tokens.end(), kMaskMarker) != 0) {
    throw DataError("template contains a [MASK] marker: '" + t.text() + "'");
  }
}

/// Token form of a template filled with the given words. Either filler may
/// be the mask marker.
inline std::vector<std::string> instantiate_tokens(const Template& t,
                                                   std::string_view head,
                                                   std::string_view tail) {
  std::vector<std::string> out;
  out.reserve(t.tokens.size());
  for (const auto& tok : t.tokens) {
    if (tok == kHeadMarker) {
      out.emplace_back(head);
    } else if (tok == kTailMarker) {
      out.emplace_back(tail);
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

inline std::vector<std::string> instantiate_tokens(const Template& t,
                                                   const WordPair& pair) {
  return instantiate_tokens(t, pair.head, pair.tail);
}

/// Fills both slots and joins with single spaces.
inline std::string instantiate(const Template& t, const WordPair& pair) {
  return join(instantiate_tokens(t, pair));
}

/// Seed pairs of one relation; insertion order kept, duplicates dropped.
struct RelationSeed {
  std::string relation;
  std::vector<WordPair> pairs;

  static RelationSeed make(std::string relation,
                           const std::vector<WordPair>& pairs) {
    RelationSeed seed{std::move(relation), {}};
    std::set<WordPair> seen;
    for (const auto& p : pairs) {
      if (seen.insert(p).second) seed.pairs.push_back(p);
    }
    if (seed.pairs.empty()) {
      throw DataError("relation '" + seed.relation + "' has no seed pairs");
    }
    return seed;
  }

  bool contains(const WordPair& p) const {
    return std::find(pairs.begin(), pairs.end(), p) != pairs.end();
  }
};

// JSON

inline void to_json(nlohmann::json& j, const WordPair& p) {
  j = nlohmann::json::array({p.head, p.tail});
}

inline void from_json(const nlohmann::json& j, WordPair& p) {
  if (!j.is_array() || j.size() != 2) {
    throw DataError("word pair must be a two-element array");
  }
  p = WordPair::make(j[0].get<std::string>(), j[1].get<std::string>());
}

inline nlohmann::json template_to_json(const Template& t) {
  nlohmann::json j;
  j["tokens"] = t.tokens;
  j["head_slot"] = t.head_slot();
  j["tail_slot"] = t.tail_slot();
  if (t.source_pair) {
    j["source_pair"] = *t.source_pair;
  } else {
    j["source_pair"] = nullptr;
  }
  j["doc"] = t.source_doc;
  j["gap"] = t.span_gap;
  return j;
}

inline Template template_from_json(const nlohmann::json& j) {
  Template t;
  try {
    t.tokens = j.at("tokens").get<std::vector<std::string>>();
    if (j.contains("source_pair") && !j["source_pair"].is_null()) {
      t.source_pair = j["source_pair"].get<WordPair>();
    }
    t.source_doc = j.value("doc", std::string{});
    if (j.contains("gap")) {
      t.span_gap = j["gap"].get<std::size_t>();
    } else {
      const auto h = t.head_slot(), tl = t.tail_slot();
      t.span_gap = (h > tl ? h - tl : tl - h) - 1;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed template record: ") + e.what());
  }
  validate_template(t);
  return t;
}

}  // namespace relind
