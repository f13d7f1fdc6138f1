#include <gtest/gtest.h>

#include "relind/common.hpp"
#include "relind/text.hpp"
#include "relind/types.hpp"

using namespace relind;
using Tokens = std::vector<std::string>;

TEST(Tokenize, LowercasesAndSplitsPunctuation) {
  EXPECT_EQ(tokenize("Paris is the capital of France."),
            (Tokens{"paris", "is", "the", "capital", "of", "france", "."}));
  EXPECT_EQ(tokenize("  well,  it's\tfine!"),
            (Tokens{"well", ",", "it", "'", "s", "fine", "!"}));
  EXPECT_TRUE(tokenize("   ").empty());
}

TEST(Tokenize, MarkersSurvive) {
  EXPECT_EQ(tokenize("[HEAD] is in [TAIL]."), (Tokens{"[HEAD]", "is", "in", "[TAIL]", "."}));
  EXPECT_EQ(tokenize("x [MASK] y"), (Tokens{"x", "[MASK]", "y"}));
  EXPECT_EQ(tokenize("[Head]"), (Tokens{"[HEAD]"}));
  EXPECT_EQ(tokenize("[heads]"), (Tokens{"[", "heads", "]"}));
}

TEST(Tokenize, KeepsUtf8Words) {
  EXPECT_EQ(tokenize("Zürich liegt."), (Tokens{"zürich", "liegt", "."}));
}

TEST(Utf8, Validation) {
  EXPECT_TRUE(is_valid_utf8("plain"));
  EXPECT_TRUE(is_valid_utf8("caf\xc3\xa9"));
  EXPECT_FALSE(is_valid_utf8("bad \xff byte"));
  EXPECT_FALSE(is_valid_utf8("cut \xe2\x82"));
  EXPECT_FALSE(is_valid_utf8("overlong \xc0\xaf"));
}

TEST(Sentences, SplitsOnTerminalPunctuationBeforeSpace) {
  auto s = split_sentences("One here. Two there! Three? 3.5 stays.");
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0], "One here.");
  EXPECT_EQ(s[1], "Two there!");
  EXPECT_EQ(s[2], "Three?");
  EXPECT_EQ(s[3], "3.5 stays.");
  EXPECT_EQ(split_sentences("no stop").size(), 1u);
}

TEST(Sentences, LinesKeepEmptyAndStripCr) {
  auto lines = split_lines("a b\r\n\nc");
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "a b");
  EXPECT_EQ(lines[1], "");
  EXPECT_EQ(lines[2], "c");
}

TEST(WordPair, Normalizes) {
  auto p = WordPair::make(" Paris ", "FRANCE");
  EXPECT_EQ(p.head, "paris");
  EXPECT_EQ(p.tail, "france");
  EXPECT_THROW(WordPair::make("new york", "usa"), DataError);
  EXPECT_THROW(WordPair::make("", "x"), DataError);
  EXPECT_THROW(WordPair::make("Rome", "rome"), DataError);
  EXPECT_THROW(WordPair::make("[HEAD]", "x"), DataError);
}

TEST(TemplateJson, RoundTrip) {
  Template t{tokenize("[HEAD] is the capital of [TAIL] ."), WordPair{"paris", "france"}, "d1", 3};
  auto j = template_to_json(t);
  EXPECT_EQ(j["head_slot"], 0);
  EXPECT_EQ(j["tail_slot"], 5);
  EXPECT_EQ(j["gap"], 3);
  auto back = template_from_json(j);
  EXPECT_EQ(back.tokens, t.tokens);
  EXPECT_EQ(back.source_pair, t.source_pair);
  EXPECT_EQ(back.source_doc, "d1");
  EXPECT_EQ(back.span_gap, 3u);
}

TEST(Instantiate, FillsSlots) {
  Template t{tokenize("[HEAD] is the capital of [TAIL] ."), {}, {}, 3};
  EXPECT_EQ(instantiate(t, {"rome", "italy"}), "rome is the capital of italy .");
  EXPECT_EQ(instantiate(t, {"trump", "obama"}), "trump is the capital of obama .");
}

TEST(Rng, BelowStaysInRangeAndIsSeeded) {
  Rng a(5), b(5);
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.below(7);
    EXPECT_LT(x, 7u);
    EXPECT_EQ(x, b.below(7));
  }
  std::vector<int> v{1, 2, 3, 4, 5, 6};
  auto w = v;
  Rng(9).shuffle(v);
  Rng(9).shuffle(w);
  EXPECT_EQ(v, w);
}

TEST(Rng, FrozenStream) {
  // Splits and negatives depend on this exact stream.
  Rng r(42);
  std::vector<std::size_t> got;
  for (int i = 0; i < 6; ++i) got.push_back(r.below(100));
  EXPECT_EQ(got, (std::vector<std::size_t>{6, 24, 50, 62, 81, 28}));
  std::vector<int> v{1, 2, 3, 4, 5, 6};
  Rng(9).shuffle(v);
  EXPECT_EQ(v, (std::vector<int>{3, 5, 1, 4, 6, 2}));

  Rng reference(5489);
  for (int i = 1; i < 10000; ++i) reference.next();
  EXPECT_EQ(reference.next(), 9981545732273789042ull);
}

TEST(Hash, KnownValues) {
  EXPECT_EQ(splitmix64(0), 0xe220a8397b1dcdafull);
  EXPECT_EQ(fnv1a(""), 14695981039346656037ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(hash_combine(0, "capital_of"), 14297835964180143108ull);
  EXPECT_NE(hash_combine(1, "capital_of"), hash_combine(0, "capital_of"));
}

TEST(ParallelFor, WritesByIndexAndRethrowsLowest) {
  std::vector<int> out(100);
  parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
  try {
    parallel_for(50, 4, [](std::size_t i) {
      if (i == 7 || i == 30) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}
