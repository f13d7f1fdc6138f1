#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/oracle.hpp"
#include "relind/types.hpp"

namespace relind {

struct ScoredTemplate {
  Template tpl;
  std::size_t fast_score = 0;
  std::optional<std::size_t> slow_score;
};

struct FilterOptions {
  std::size_t k = 10;
  std::size_t prefilter_size = 1000;
  std::size_t final_k = 100;
  unsigned workers = 1;
};

namespace detail {

inline std::size_t count_members(const TopKPrediction& p,
                                 const std::unordered_set<std::string>& words) {
  std::size_t n = 0;
  for (const auto& e : p.entries) n += words.contains(e.token) ? 1 : 0;
  return n;
}

inline TopKPrediction fill_blank(const LmOracle& oracle, const Template& t,
                                 std::string_view head, std::string_view tail,
                                 std::size_t k) {
  return oracle.topk(MaskedQuery(instantiate_tokens(t, head, tail)), k);
}

}  // namespace detail

/// Type-level score from the template's own pair (x, y): how many fillers
/// of (x, _) are seed tails plus how many fillers of (_, y) are seed heads.
/// Two oracle calls.
inline std::size_t score_fast(const Template& t, const RelationSeed& seeds,
                              const LmOracle& oracle, std::size_t k) {
  if (!t.source_pair) {
    throw DataError("template '" + t.text() + "' has no source pair");
  }
  if (!seeds.contains(*t.source_pair)) {
    throw DataError("source pair " + to_string(*t.source_pair) +
                    " of template '" + t.text() + "' is not a seed of '" +
                    seeds.relation + "'");
  }
  std::unordered_set<std::string> heads, tails;
  for (const auto& p : seeds.pairs) {
    heads.insert(p.head);
    tails.insert(p.tail);
  }
  const auto& [x, y] = *t.source_pair;
  const auto tail_fill =
      detail::fill_blank(oracle, t, x, std::string(kMaskMarker), k);
  const auto head_fill =
      detail::fill_blank(oracle, t, std::string(kMaskMarker), y, k);
  return detail::count_members(head_fill, heads) +
         detail::count_members(tail_fill, tails);
}

/// Instance-level score: for every seed (s, t), one point if s is among the
/// fillers of (_, t) and one if t is among the fillers of (s, _). 2n oracle
/// calls.
inline std::size_t score_slow(const Template& t, const RelationSeed& seeds,
                              const LmOracle& oracle, std::size_t k) {
  const std::string mask(kMaskMarker);
  std::size_t score = 0;
  for (const auto& [s, tail] : seeds.pairs) {
    if (detail::fill_blank(oracle, t, mask, tail, k).contains(s)) ++score;
    if (detail::fill_blank(oracle, t, s, mask, k).contains(tail)) ++score;
  }
  return score;
}

/// Total order for final selection: slow desc, fast desc, tokens asc.
inline bool ranks_before(const ScoredTemplate& a, const ScoredTemplate& b) {
  const auto sa = a.slow_score.value_or(0), sb = b.slow_score.value_or(0);
  if (sa != sb) return sa > sb;
  if (a.fast_score != b.fast_score) return a.fast_score > b.fast_score;
  return a.tpl.tokens < b.tpl.tokens;
}

/// Fast-score pre-filter to `prefilter_size`, then slow-score ranking of the
/// survivors, returning the best `final_k`. Templates whose oracle calls
/// fail are dropped with a warning.
inline std::vector<ScoredTemplate> select_templates(
    const std::vector<Template>& templates, const RelationSeed& seeds,
    const LmOracle& oracle, const FilterOptions& options,
    Diagnostics* diag = nullptr) {
  if (options.final_k > options.prefilter_size) {
    throw ConfigError("final template count " + std::to_string(options.final_k) +
                      " exceeds pre-filter size " +
                      std::to_string(options.prefilter_size));
  }
  if (options.k == 0) throw ConfigError("k must be at least 1");

  std::vector<std::optional<ScoredTemplate>> fast(templates.size());
  parallel_for(templates.size(), options.workers, [&](std::size_t i) {
    try {
      fast[i] = ScoredTemplate{templates[i],
                               score_fast(templates[i], seeds, oracle, options.k),
                               std::nullopt};
    } catch (const OracleError& e) {
      warn(diag, "dropped template '" + templates[i].text() +
                     "' (fast score): " + e.what());
    }
  });

  std::vector<ScoredTemplate> survivors;
  for (auto& s : fast) {
    if (s) survivors.push_back(std::move(*s));
  }
  std::sort(survivors.begin(), survivors.end(), [](const auto& a, const auto& b) {
    if (a.fast_score != b.fast_score) return a.fast_score > b.fast_score;
    return a.tpl.tokens < b.tpl.tokens;
  });
  if (survivors.size() > options.prefilter_size) {
    survivors.resize(options.prefilter_size);
  }

  std::vector<char> failed(survivors.size(), 0);
  parallel_for(survivors.size(), options.workers, [&](std::size_t i) {
    try {
      survivors[i].slow_score = score_slow(survivors[i].tpl, seeds, oracle, options.k);
    } catch (const OracleError& e) {
      failed[i] = 1;
      warn(diag, "dropped template '" + survivors[i].tpl.text() +
                     "' (slow score): " + e.what());
    }
  });

  std::vector<ScoredTemplate> ranked;
  for (std::size_t i = 0; i < survivors.size(); ++i) {
    if (!failed[i]) ranked.push_back(std::move(survivors[i]));
  }
  std::sort(ranked.begin(), ranked.end(), ranks_before);
  if (ranked.size() < options.final_k) {
    warn(diag, "only " + std::to_string(ranked.size()) + " templates for '" +
                   seeds.relation + "', fewer than the requested " +
                   std::to_string(options.final_k));
  } else {
    ranked.resize(options.final_k);
  }
  return ranked;
}

inline nlohmann::json scored_to_json(const ScoredTemplate& s) {
  auto j = template_to_json(s.tpl);
  j["fast_score"] = s.fast_score;
  if (s.slow_score) {
    j["slow_score"] = *s.slow_score;
  } else {
    j["slow_score"] = nullptr;
  }
  return j;
}

inline ScoredTemplate scored_from_json(const nlohmann::json& j) {
  ScoredTemplate s{template_from_json(j), j.value("fast_score", std::size_t{0}),
                   std::nullopt};
  if (j.contains("slow_score") && !j["slow_score"].is_null()) {
    s.slow_score = j["slow_score"].get<std::size_t>();
  }
  return s;
}

}  // namespace relind
