#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/oracle.hpp"
#include "relind/types.hpp"

namespace relind {

struct TypeVocab {
  std::vector<std::string> head;
  std::vector<std::string> tail;
};

/// Synthetic fact base standing in for a pretrained model.
///
/// A query or sentence "matches" a pattern when it equals the pattern with
/// its slots filled by arbitrary words. Matching drives both oracle
/// operations: top-k prefers the true filler of a known fact followed by
/// words of the right type, and the embedding carries a support feature that
/// is +1 exactly for instantiations of (pattern, fact).
struct FixtureWorld {
  struct Fact {
    std::string relation;
    WordPair pair;
  };

  std::vector<Fact> facts;
  std::map<std::string, TypeVocab> type_vocab;
  /// Per relation, templates written with [HEAD]/[TAIL] slots.
  std::map<std::string, std::vector<std::vector<std::string>>> patterns;
  /// Extra words for unmatched queries (the global vocabulary is this plus
  /// every type vocabulary).
  std::vector<std::string> filler_vocab;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (noise_rate < 0.0 || noise_rate > 1.0) {
      throw DataError("fixture noise_rate must lie in [0, 1]");
    }
    for (const auto& f : facts) {
      auto it = type_vocab.find(f.relation);
      if (it == type_vocab.end()) {
        throw DataError("fixture relation '" + f.relation + "' has no type_vocab");
      }
      const auto& tv = it->second;
      if (std::find(tv.head.begin(), tv.head.end(), f.pair.head) == tv.head.end() ||
          std::find(tv.tail.begin(), tv.tail.end(), f.pair.tail) == tv.tail.end()) {
        throw DataError("fixture fact " + to_string(f.pair) +
                        " is outside the type vocabulary of '" + f.relation + "'");
      }
    }
    for (const auto& [rel, ps] : patterns) {
      for (const auto& p : ps) validate_template(Template{p, {}, {}, 0});
    }
  }
};

inline nlohmann::json world_to_json(const FixtureWorld& w) {
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& f : w.facts) {
    facts.push_back({f.relation, f.pair.head, f.pair.tail});
  }
  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [rel, tv] : w.type_vocab) {
    vocab[rel] = {{"head", tv.head}, {"tail", tv.tail}};
  }
  nlohmann::json patterns = nlohmann::json::object();
  for (const auto& [rel, ps] : w.patterns) {
    auto& arr = patterns[rel] = nlohmann::json::array();
    for (const auto& p : ps) arr.push_back(join(p));
  }
  return {{"facts", facts},           {"type_vocab", vocab},
          {"patterns", patterns},     {"filler_vocab", w.filler_vocab},
          {"noise_rate", w.noise_rate}, {"seed", w.seed}};
}

inline FixtureWorld world_from_json(const nlohmann::json& j) {
  FixtureWorld w;
  try {
    for (const auto& f : j.at("facts")) {
      w.facts.push_back({f.at(0).get<std::string>(),
                         WordPair::make(f.at(1).get<std::string>(),
                                        f.at(2).get<std::string>())});
    }
    for (const auto& [rel, tv] : j.at("type_vocab").items()) {
      TypeVocab v;
      for (const auto& word : tv.at("head")) v.head.push_back(to_lower_ascii(word.get<std::string>()));
      for (const auto& word : tv.at("tail")) v.tail.push_back(to_lower_ascii(word.get<std::string>()));
      w.type_vocab.emplace(rel, std::move(v));
    }
    if (j.contains("patterns")) {
      for (const auto& [rel, ps] : j["patterns"].items()) {
        for (const auto& p : ps) {
          w.patterns[rel].push_back(tokenize(p.get<std::string>()));
        }
      }
    }
    if (j.contains("filler_vocab")) {
      for (const auto& word : j["filler_vocab"]) {
        w.filler_vocab.push_back(to_lower_ascii(word.get<std::string>()));
      }
    }
    w.noise_rate = j.value("noise_rate", 0.0);
    w.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed fixture world: ") + e.what());
  }
  w.validate();
  return w;
}

inline FixtureWorld load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read fixture world " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("fixture world " + path.string() + ": " + e.what());
  }
  return world_from_json(j);
}

class FixtureOracle : public LmOracle {
 public:
  static constexpr std::size_t kDimension = 32;
  static constexpr std::size_t kSupportFeature = kDimension - 1;

  explicit FixtureOracle(FixtureWorld world) : world_(std::move(world)) {
    world_.validate();
    for (const auto& f : world_.facts) {
      auto& idx = index_[f.relation];
      idx.tails_of[f.pair.head].push_back(f.pair.tail);
      idx.heads_of[f.pair.tail].push_back(f.pair.head);
      fact_keys_.insert(fact_key(f.relation, f.pair));
    }
    for (auto& [rel, idx] : index_) {
      for (auto& [w, v] : idx.tails_of) std::sort(v.begin(), v.end());
      for (auto& [w, v] : idx.heads_of) std::sort(v.begin(), v.end());
    }
    std::set<std::string> global(world_.filler_vocab.begin(), world_.filler_vocab.end());
    for (const auto& [rel, tv] : world_.type_vocab) {
      global.insert(tv.head.begin(), tv.head.end());
      global.insert(tv.tail.begin(), tv.tail.end());
    }
    global_vocab_.assign(global.begin(), global.end());
    backend_id_ = "fixture:" + std::to_string(fnv1a(world_to_json(world_).dump()));
  }

  const FixtureWorld& world() const { return world_; }
  const std::vector<std::string>& global_vocab() const { return global_vocab_; }

  std::string backend_id() const override { return backend_id_; }

  TopKPrediction topk(const MaskedQuery& query, std::size_t k) const override {
    if (k == 0) throw InvalidQuery("k must be at least 1");
    const auto& tokens = query.tokens();
    Rng rng(hash_combine(hash_combine(world_.seed, "topk"), join(tokens, "\x1f")));

    std::vector<std::string> ranked;
    if (auto m = match(tokens, query.mask_index())) {
      const auto& tv = world_.type_vocab.at(m->relation);
      const auto& candidates = m->masked_is_head ? tv.head : tv.tail;
      std::vector<std::string> correct = true_fillers(*m);
      const bool displaced = rng.uniform() < world_.noise_rate;
      std::unordered_set<std::string> excluded(correct.begin(), correct.end());
      if (!displaced) ranked = correct;
      std::vector<std::string> rest;
      for (const auto& c : candidates) {
        if (!excluded.contains(c)) rest.push_back(c);
      }
      rng.shuffle(rest);
      for (auto& c : rest) {
        if (ranked.size() >= k) break;
        ranked.push_back(std::move(c));
      }
    } else {
      ranked = sample_global(rng, k);
    }
    if (ranked.size() > k) ranked.resize(k);

    TopKPrediction out;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      out.entries.push_back({ranked[r], 1.0 / (1.0 + static_cast<double>(r))});
    }
    return out;
  }

  SentenceVector embed(const std::vector<std::string>& tokens) const override {
    if (tokens.empty()) throw InvalidQuery("cannot embed an empty sentence");
    SentenceVector v;
    v.values.assign(kDimension, 0.0);
    for (const auto& tok : tokens) {
      const auto h = hash_combine(hash_combine(world_.seed, "embed"), tok);
      for (std::size_t i = 0; i < kSupportFeature; ++i) {
        v.values[i] += ((h >> i) & 1U) ? 1.0 : -1.0;
      }
    }
    for (std::size_t i = 0; i < kSupportFeature; ++i) {
      v.values[i] /= static_cast<double>(tokens.size());
    }
    v.values[kSupportFeature] = support(tokens) ? 1.0 : -1.0;
    return v;
  }

  /// True when the sentence instantiates a known pattern with a known fact.
  /// A sentence that fits no pattern at all is judged natural with
  /// probability noise_rate (seeded by the sentence).
  bool support(const std::vector<std::string>& tokens) const {
    bool shaped = false;
    for (const auto& [rel, ps] : world_.patterns) {
      for (const auto& p : ps) {
        auto pair = fill_of(p, tokens);
        if (!pair) continue;
        shaped = true;
        if (fact_keys_.contains(fact_key(rel, *pair))) return true;
      }
    }
    if (shaped || world_.noise_rate <= 0.0) return false;
    Rng rng(hash_combine(hash_combine(world_.seed, "support"), join(tokens, "\x1f")));
    return rng.uniform() < world_.noise_rate;
  }

 private:
  struct RelationIndex {
    std::unordered_map<std::string, std::vector<std::string>> tails_of;
    std::unordered_map<std::string, std::vector<std::string>> heads_of;
  };

  struct Match {
    std::string relation;
    bool masked_is_head = false;
    std::string other;
  };

  static std::string fact_key(const std::string& rel, const WordPair& p) {
    return rel + '\x1f' + p.head + '\x1f' + p.tail;
  }

  // Words in the pattern's slots if `tokens` is the pattern with its slots
  // filled.
  static std::optional<WordPair> fill_of(const std::vector<std::string>& pattern,
                                         const std::vector<std::string>& tokens) {
    if (pattern.size() != tokens.size()) return std::nullopt;
    WordPair pair;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
      if (pattern[i] == kHeadMarker) {
        pair.head = tokens[i];
      } else if (pattern[i] == kTailMarker) {
        pair.tail = tokens[i];
      } else if (pattern[i] != tokens[i]) {
        return std::nullopt;
      }
    }
    return pair;
  }

  std::optional<Match> match(const std::vector<std::string>& tokens,
                             std::size_t mask) const {
    for (const auto& [rel, ps] : world_.patterns) {
      for (const auto& p : ps) {
        auto fill = fill_of(p, tokens);
        if (!fill) continue;
        if (p[mask] == kHeadMarker) return Match{rel, true, fill->tail};
        if (p[mask] == kTailMarker) return Match{rel, false, fill->head};
      }
    }
    return std::nullopt;
  }

  std::vector<std::string> true_fillers(const Match& m) const {
    auto it = index_.find(m.relation);
    if (it == index_.end()) return {};
    const auto& lookup = m.masked_is_head ? it->second.heads_of : it->second.tails_of;
    auto found = lookup.find(m.other);
    return found == lookup.end() ? std::vector<std::string>{} : found->second;
  }

  std::vector<std::string> sample_global(Rng& rng, std::size_t k) const {
    std::vector<std::string> out;
    std::vector<std::size_t> idx(global_vocab_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const std::size_t n = std::min(k, idx.size());
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      out.push_back(global_vocab_[idx[i]]);
    }
    return out;
  }

  FixtureWorld world_;
  std::map<std::string, RelationIndex> index_;
  std::unordered_set<std::string> fact_keys_;
  std::vector<std::string> global_vocab_;
  std::string backend_id_;
};

}  // namespace relind
