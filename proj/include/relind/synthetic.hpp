#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "relind/common.hpp"
#include "relind/corpus_miner.hpp"
#include "relind/fixture_oracle.hpp"
#include "relind/types.hpp"

namespace relind {

/// Parameters for a generated fixture world with a matching corpus and
/// dataset.
struct SyntheticSpec {
  std::size_t relations = 3;
  std::size_t facts_per_relation = 30;
  /// Type-vocabulary words that take part in no fact.
  std::size_t extra_type_words = 10;
  /// Distinct sentence patterns per relation (at most 12).
  std::size_t patterns_per_relation = 12;
  /// Corpus sentences per relation that mention a fact pair in a context
  /// matching no pattern.
  std::size_t distractors_per_relation = 0;
  std::size_t filler_vocab_size = 300;
  /// Sentences that mention no fact at all.
  std::size_t background_sentences = 50;
  double noise_rate = 0.0;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  FixtureWorld world;
  std::vector<Document> corpus;
  std::map<std::string, std::vector<WordPair>> relations;
};

namespace detail {

struct RelationShape {
  const char* name;
  const char* head_stem;
  const char* tail_stem;
  std::array<const char*, 3> phrases;
};

inline const std::array<RelationShape, 6>& relation_shapes() {
  static const std::array<RelationShape, 6> shapes{{
      {"capital_of", "city", "country",
       {"is the capital of", "serves as the capital city of", "is the seat of government of"}},
      {"leader_of", "chief", "tribe",
       {"is the leader of", "rules over the people of", "was elected head of"}},
      {"color_of", "fruit", "hue",
       {"is usually colored", "ripens to a deep shade of", "always looks"}},
      {"located_in", "river", "valley",
       {"flows through", "runs along the floor of", "cuts across"}},
      {"made_of", "tool", "metal",
       {"is made of", "is forged from", "is cast in"}},
      {"speaks", "nation", "tongue",
       {"speaks", "mostly uses the language", "has the official language"}},
  }};
  return shapes;
}

inline const std::array<const char*, 4>& pattern_frames() {
  static const std::array<const char*, 4> frames{
      {"[HEAD] %s [TAIL] .", "it is well known that [HEAD] %s [TAIL] .",
       "according to the records , [HEAD] %s [TAIL] .", "most people agree that [HEAD] %s [TAIL] ."}};
  return frames;
}

inline std::string numbered(const char* stem, std::size_t i) {
  std::string s(stem);
  if (i < 10) s += '0';
  return s + std::to_string(i);
}

inline std::vector<std::string> make_fillers(std::size_t n, Rng& rng) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::set<std::string> out;
  while (out.size() < n) {
    std::string w;
    const std::size_t syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w += consonants[rng.below(consonants.size())];
      w += vowels[rng.below(vowels.size())];
    }
    out.insert(w);
  }
  std::vector<std::string> v(out.begin(), out.end());
  rng.shuffle(v);
  return v;
}

}  // namespace detail

inline SyntheticData make_synthetic(const SyntheticSpec& spec) {
  const auto& shapes = detail::relation_shapes();
  if (spec.relations == 0 || spec.relations > shapes.size()) {
    throw ConfigError("synthetic worlds support 1 to " + std::to_string(shapes.size()) +
                      " relations");
  }
  if (spec.patterns_per_relation == 0 || spec.patterns_per_relation > 12) {
    throw ConfigError("patterns_per_relation must lie in [1, 12]");
  }
  Rng rng(spec.seed);
  SyntheticData data;
  auto& world = data.world;
  world.noise_rate = spec.noise_rate;
  world.seed = spec.seed;
  world.filler_vocab = detail::make_fillers(spec.filler_vocab_size, rng);

  for (std::size_t r = 0; r < spec.relations; ++r) {
    const auto& shape = shapes[r];
    TypeVocab tv;
    const std::size_t words = spec.facts_per_relation + spec.extra_type_words;
    for (std::size_t i = 0; i < words; ++i) {
      tv.head.push_back(detail::numbered(shape.head_stem, i));
      tv.tail.push_back(detail::numbered(shape.tail_stem, i));
    }
    auto& pairs = data.relations[shape.name];
    for (std::size_t i = 0; i < spec.facts_per_relation; ++i) {
      WordPair p{tv.head[i], tv.tail[i]};
      world.facts.push_back({shape.name, p});
      pairs.push_back(p);
    }
    world.type_vocab[shape.name] = std::move(tv);

    auto& patterns = world.patterns[shape.name];
    for (std::size_t j = 0; j < spec.patterns_per_relation; ++j) {
      const std::string frame = detail::pattern_frames()[j / 3];
      const std::string phrase = shape.phrases[j % 3];
      const auto at = frame.find("%s");
      patterns.push_back(tokenize(frame.substr(0, at) + phrase + frame.substr(at + 2)));
    }
  }

  // Corpus: every fact under every pattern, then distractors and background.
  for (std::size_t r = 0; r < spec.relations; ++r) {
    const std::string rel = shapes[r].name;
    std::string text;
    for (const auto& p : data.relations[rel]) {
      for (const auto& pattern : world.patterns[rel]) {
        text += instantiate(Template{pattern, {}, {}, 0}, p) + "\n";
      }
    }
    data.corpus.push_back({rel + ".txt", std::move(text)});

    std::string noise;
    std::set<std::vector<std::string>> seen;
    const auto& pairs = data.relations[rel];
    const auto& fill = world.filler_vocab;
    std::size_t made = 0;
    while (made < spec.distractors_per_relation) {
      const auto& p = pairs[rng.below(pairs.size())];
      std::vector<std::string> shape_tokens;
      auto filler = [&](std::size_t lo, std::size_t hi) {
        const auto n = lo + rng.below(hi - lo + 1);
        for (std::size_t i = 0; i < n; ++i) shape_tokens.push_back(fill[rng.below(fill.size())]);
      };
      filler(1, 4);
      shape_tokens.emplace_back(kHeadMarker);
      filler(1, 5);
      shape_tokens.emplace_back(kTailMarker);
      filler(0, 3);
      shape_tokens.emplace_back(".");
      if (!seen.insert(shape_tokens).second) continue;
      noise += instantiate(Template{shape_tokens, {}, {}, 0}, p) + "\n";
      ++made;
    }
    if (!noise.empty()) data.corpus.push_back({rel + "-distractors.txt", std::move(noise)});
  }

  std::string background;
  for (std::size_t i = 0; i < spec.background_sentences; ++i) {
    std::vector<std::string> tokens;
    const auto n = 4 + rng.below(8);
    for (std::size_t j = 0; j < n; ++j) {
      tokens.push_back(world.filler_vocab[rng.below(world.filler_vocab.size())]);
    }
    background += join(tokens) + " .\n";
  }
  data.corpus.push_back({"background.txt", std::move(background)});
  return data;
}

}  // namespace relind
