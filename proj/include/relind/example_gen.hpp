#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/types.hpp"

namespace relind {

enum class Label { negative = 0, positive = 1 };

enum class Origin { seed, swap, cross, other_relation, random };

inline const char* origin_name(Origin o) {
  switch (o) {
    case Origin::seed: return "seed";
    case Origin::swap: return "swap";
    case Origin::cross: return "cross";
    case Origin::other_relation: return "other_relation";
    case Origin::random: return "random";
  }
  return "?";
}

inline Origin origin_from_name(std::string_view s) {
  if (s == "seed") return Origin::seed;
  if (s == "swap") return Origin::swap;
  if (s == "cross") return Origin::cross;
  if (s == "other_relation") return Origin::other_relation;
  if (s == "random") return Origin::random;
  throw DataError("unknown example origin '" + std::string(s) + "'");
}

struct LabeledPair {
  WordPair pair;
  Label label = Label::negative;
  Origin origin = Origin::seed;

  bool positive() const { return label == Label::positive; }
  bool operator==(const LabeledPair&) const = default;
};

/// Maximum draws per sampled negative before it is skipped.
inline constexpr int kMaxResample = 100;

inline std::vector<LabeledPair> as_positives(const std::vector<WordPair>& pairs) {
  std::vector<LabeledPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({p, Label::positive, Origin::seed});
  return out;
}

/// Training negatives: every admissible swap (t, s), then cross pairs
/// (s_i, t_j), i != j, drawn without replacement until
/// round(cross_ratio * n) are found.
inline std::vector<LabeledPair> gen_train_negatives(
    const std::vector<WordPair>& positives, std::uint64_t rng_seed,
    double cross_ratio = 1.0, Diagnostics* diag = nullptr) {
  if (positives.size() < 2) {
    throw DataError("training negatives need at least two positive pairs");
  }
  const std::set<WordPair> pos(positives.begin(), positives.end());
  std::set<WordPair> emitted;
  std::vector<LabeledPair> out;

  for (const auto& p : positives) {
    auto s = p.swapped();
    if (!pos.contains(s) && emitted.insert(s).second) {
      out.push_back({s, Label::negative, Origin::swap});
    }
  }

  const auto wanted =
      static_cast<std::size_t>(std::llround(cross_ratio * static_cast<double>(positives.size())));
  Rng rng(rng_seed);
  const std::size_t n = positives.size();
  std::size_t made = 0;
  for (std::size_t draw = 0; draw < wanted; ++draw) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxResample && !placed; ++attempt) {
      const auto i = rng.below(n);
      auto j = rng.below(n - 1);
      if (j >= i) ++j;
      WordPair c{positives[i].head, positives[j].tail};
      if (c.head == c.tail || pos.contains(c) || emitted.contains(c)) continue;
      emitted.insert(c);
      out.push_back({c, Label::negative, Origin::cross});
      placed = true;
    }
    if (!placed) break;
    ++made;
  }
  if (made < wanted) {
    warn(diag, "only " + std::to_string(made) + " of " + std::to_string(wanted) +
                   " cross-pair negatives could be generated");
  }
  return out;
}

struct WordPools {
  std::vector<std::string> heads;
  std::vector<std::string> tails;
};

/// Head and tail words across all relations, sorted and distinct.
inline WordPools word_pools(const std::map<std::string, std::vector<WordPair>>& relations) {
  std::set<std::string> h, t;
  for (const auto& [rel, pairs] : relations) {
    for (const auto& p : pairs) {
      h.insert(p.head);
      t.insert(p.tail);
    }
  }
  return {{h.begin(), h.end()}, {t.begin(), t.end()}};
}

/// Five negatives per test positive (s, t): the swap (t, s), two (s, t')
/// with t' a tail of another test pair, one pair from another relation and
/// one random pair from the pools. Nothing in `relations.at(relation)` or
/// `test_pos` is ever emitted as a negative.
inline std::vector<LabeledPair> gen_test_negatives(
    const std::vector<WordPair>& test_pos,
    const std::map<std::string, std::vector<WordPair>>& relations,
    const std::string& relation, const WordPools& pools, std::uint64_t rng_seed,
    Diagnostics* diag = nullptr) {
  if (test_pos.empty()) throw DataError("test negatives need a positive test pair");
  std::vector<std::string> others;
  for (const auto& [name, pairs] : relations) {
    if (name != relation && !pairs.empty()) others.push_back(name);
  }
  if (others.empty()) {
    throw DataError("relation '" + relation +
                    "' has no other relation to sample negatives from");
  }

  std::set<WordPair> pos(test_pos.begin(), test_pos.end());
  if (auto it = relations.find(relation); it != relations.end()) {
    pos.insert(it->second.begin(), it->second.end());
  }
  auto admissible = [&](const WordPair& p) {
    return !p.head.empty() && !p.tail.empty() && p.head != p.tail &&
           !pos.contains(p);
  };

  std::vector<std::string> test_tails;
  {
    std::set<std::string> seen;
    for (const auto& p : test_pos) {
      if (seen.insert(p.tail).second) test_tails.push_back(p.tail);
    }
  }

  Rng rng(rng_seed);
  std::vector<LabeledPair> out;
  std::size_t skipped_targets = 0, skipped_other = 0;

  for (const auto& p : test_pos) {
    if (auto s = p.swapped(); admissible(s)) {
      out.push_back({s, Label::negative, Origin::swap});
    }

    // Two distinct alternative targets from the test set.
    std::vector<std::string> candidates;
    for (const auto& t : test_tails) {
      if (admissible({p.head, t})) candidates.push_back(t);
    }
    const std::size_t take = std::min<std::size_t>(2, candidates.size());
    for (std::size_t i = 0; i < take; ++i) {
      const auto pick = i + rng.below(candidates.size() - i);
      std::swap(candidates[i], candidates[pick]);
      out.push_back({{p.head, candidates[i]}, Label::negative, Origin::cross});
    }
    skipped_targets += 2 - take;

    bool placed = false;
    for (int attempt = 0; attempt < kMaxResample && !placed; ++attempt) {
      const auto& other = relations.at(others[rng.below(others.size())]);
      const auto& c = other[rng.below(other.size())];
      if (admissible(c)) {
        out.push_back({c, Label::negative, Origin::other_relation});
        placed = true;
      }
    }
    if (!placed) ++skipped_other;

    placed = false;
    if (!pools.heads.empty() && !pools.tails.empty()) {
      for (int attempt = 0; attempt < kMaxResample && !placed; ++attempt) {
        WordPair c{pools.heads[rng.below(pools.heads.size())],
                   pools.tails[rng.below(pools.tails.size())]};
        if (admissible(c)) {
          out.push_back({c, Label::negative, Origin::random});
          placed = true;
        }
      }
    }
    if (!placed) ++skipped_other;
  }

  if (skipped_targets > 0) {
    warn(diag, "relation '" + relation + "': test set too small for " +
                   std::to_string(skipped_targets) + " alternative-target negatives");
  }
  if (skipped_other > 0) {
    warn(diag, "relation '" + relation + "': skipped " +
                   std::to_string(skipped_other) +
                   " sampled negatives after repeated collisions");
  }
  return out;
}

inline nlohmann::json labeled_to_json(const LabeledPair& p) {
  return {{"head", p.pair.head},
          {"tail", p.pair.tail},
          {"label", p.positive() ? 1 : 0},
          {"origin", origin_name(p.origin)}};
}

inline LabeledPair labeled_from_json(const nlohmann::json& j) {
  try {
    return {WordPair::make(j.at("head").get<std::string>(), j.at("tail").get<std::string>()),
            j.at("label").get<int>() == 1 ? Label::positive : Label::negative,
            origin_from_name(j.at("origin").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed example record: ") + e.what());
  }
}

}  // namespace relind
