#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "relind/fixture_oracle.hpp"
#include "relind/relation_model.hpp"
#include "relind/synthetic.hpp"

using namespace relind;

namespace {

struct Fixture {
  SyntheticData data = make_synthetic(SyntheticSpec{});
  FixtureOracle oracle{data.world};
  RelationModel model;
  std::vector<WordPair> facts;

  Fixture() {
    facts = data.relations.at("capital_of");
    model.relation = "capital_of";
    const auto& patterns = data.world.patterns.at("capital_of");
    for (std::size_t i = 0; i < 10; ++i) model.templates.push_back(Template{patterns[i], {}, {}, 0});
  }

  std::vector<WordPair> train_pairs() const { return {facts.begin(), facts.begin() + 20}; }

  std::vector<LabeledPair> examples() const {
    auto ex = as_positives(train_pairs());
    auto neg = gen_train_negatives(train_pairs(), 11);
    ex.insert(ex.end(), neg.begin(), neg.end());
    return ex;
  }

  static TrainConfig config() {
    TrainConfig c;
    c.learning_rate = 0.05;
    c.epochs = 20;
    c.rng_seed = 3;
    return c;
  }

  void fit() {
    model.head = train(model.templates, examples(), oracle, config());
    model.oracle_dim = model.head.weights.size();
  }
};

// Embedding failure for sentences holding a chosen token.
class FlakyOracle : public LmOracle {
 public:
  FlakyOracle(const LmOracle& inner, std::string bad) : inner_(inner), bad_(std::move(bad)) {}
  std::string backend_id() const override { return inner_.backend_id(); }
  TopKPrediction topk(const MaskedQuery& q, std::size_t k) const override {
    check(q.tokens());
    return inner_.topk(q, k);
  }
  SentenceVector embed(const std::vector<std::string>& tokens) const override {
    check(tokens);
    return inner_.embed(tokens);
  }

 private:
  void check(const std::vector<std::string>& tokens) const {
    if (std::find(tokens.begin(), tokens.end(), bad_) != tokens.end()) {
      throw RetriableOracleError("unavailable");
    }
  }
  const LmOracle& inner_;
  std::string bad_;
};

// Answers depend on the first token of the query.
class ScriptedOracle : public LmOracle {
 public:
  explicit ScriptedOracle(std::map<std::string, std::vector<std::string>> answers)
      : answers_(std::move(answers)) {}
  std::string backend_id() const override { return "scripted"; }
  TopKPrediction topk(const MaskedQuery& q, std::size_t k) const override {
    TopKPrediction p;
    const auto& a = answers_.at(q.tokens().front());
    for (std::size_t i = 0; i < a.size() && i < k; ++i) {
      p.entries.push_back({a[i], -static_cast<double>(i)});
    }
    return p;
  }
  SentenceVector embed(const std::vector<std::string>&) const override { return {{0.0}}; }

 private:
  std::map<std::string, std::vector<std::string>> answers_;
};

TrainingSet random_set(std::mt19937_64& gen, std::size_t n, std::size_t dim) {
  std::normal_distribution<double> x(0.0, 1.0);
  std::bernoulli_distribution y(0.5);
  TrainingSet s;
  std::vector<double> row(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : row) v = x(gen);
    s.add(row, y(gen) ? 1.0 : 0.0);
  }
  return s;
}

double f1_at(std::span<const double> sums, const std::vector<bool>& labels, double lambda) {
  Confusion c;
  for (std::size_t i = 0; i < sums.size(); ++i) c.add(sums[i] >= lambda, labels[i]);
  return compute_metrics(c).f1;
}

}  // namespace

TEST(Gradient, MatchesCentralDifferences) {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> w(0.0, 0.5);
  double worst = 0.0;
  for (int batch = 0; batch < 10; ++batch) {
    const auto data = random_set(gen, 16, 8);
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), 0);
    ClassifierHead head;
    head.weights.resize(8);
    for (auto& v : head.weights) v = w(gen);
    head.bias = w(gen);
    const auto g = bce_gradient(head, data, rows);

    const double h = 1e-6;
    auto check = [&](double& param, double analytic) {
      const double keep = param;
      param = keep + h;
      const double up = bce_loss(head, data, rows);
      param = keep - h;
      const double down = bce_loss(head, data, rows);
      param = keep;
      const double numeric = (up - down) / (2 * h);
      const double rel = std::abs(numeric - analytic) /
                         std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
    };
    for (std::size_t d = 0; d < head.weights.size(); ++d) check(head.weights[d], g.weights[d]);
    check(head.bias, g.bias);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Loss, MatchesNaiveCrossEntropy) {
  std::mt19937_64 gen(8);
  const auto data = random_set(gen, 20, 4);
  ClassifierHead head{{0.3, -1.2, 0.7, 2.0}, -0.4, {}};
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), 0);
  double naive = 0.0;
  for (auto i : rows) {
    const double p = 1.0 / (1.0 + std::exp(-head.logit(data.row(i))));
    naive -= data.labels[i] * std::log(p) + (1 - data.labels[i]) * std::log(1 - p);
  }
  EXPECT_NEAR(bce_loss(head, data, rows), naive / 20.0, 1e-12);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(sigmoid(800.0), 1.0);
  EXPECT_DOUBLE_EQ(softplus(1000.0), 1000.0);
}

TEST(Schedule, WarmsUpThenDecaysToZero) {
  // 20 steps, 5 of warmup.
  EXPECT_DOUBLE_EQ(lr_multiplier(0, 20, 0.25), 0.2);
  EXPECT_DOUBLE_EQ(lr_multiplier(4, 20, 0.25), 1.0);
  EXPECT_DOUBLE_EQ(lr_multiplier(5, 20, 0.25), 1.0);
  EXPECT_DOUBLE_EQ(lr_multiplier(19, 20, 0.25), 1.0 / 15.0);
  EXPECT_DOUBLE_EQ(lr_multiplier(20, 20, 0.25), 0.0);
  // No warmup at all.
  EXPECT_DOUBLE_EQ(lr_multiplier(0, 10, 0.0), 1.0);
  for (std::size_t s = 1; s < 100; ++s) {
    const double prev = lr_multiplier(s - 1, 100, 0.1), cur = lr_multiplier(s, 100, 0.1);
    if (s < 10) {
      EXPECT_GT(cur, prev);
    } else {
      EXPECT_LE(cur, prev);
    }
    EXPECT_GT(cur, 0.0);
    EXPECT_LE(cur, 1.0);
  }
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  Fixture f;
  auto c = Fixture::config();
  c.epochs = 0;
  const auto head = train(f.model.templates, f.examples(), f.oracle, c);
  EXPECT_EQ(head.weights, std::vector<double>(32, 0.0));
  EXPECT_EQ(head.bias, 0.0);
}

TEST(Train, SeparatesFixtureFacts) {
  Fixture f;
  std::vector<double> losses;
  const auto examples = f.examples();
  ASSERT_EQ(examples.size(), 60u);
  const auto head = train(f.model.templates, examples, f.oracle, Fixture::config(), 2, &losses);
  std::size_t right = 0, total = 0;
  for (const auto& ex : examples) {
    for (const auto& t : f.model.templates) {
      const auto p = head.probability(f.oracle.embed(instantiate_tokens(t, ex.pair)).values);
      right += (p > 0.5) == ex.positive();
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(right) / static_cast<double>(total), 0.95);
  // The support feature carries the decision.
  const auto& w = head.weights;
  const auto strongest = std::max_element(w.begin(), w.end(), [](double a, double b) {
    return std::abs(a) < std::abs(b);
  });
  EXPECT_EQ(static_cast<std::size_t>(strongest - w.begin()), FixtureOracle::kSupportFeature);
  EXPECT_GT(*strongest, 0.0);

  ASSERT_EQ(losses.size(), 20u);
  EXPECT_LT(losses[1], losses[0]);
  EXPECT_LT(losses[2], losses[1]);
  EXPECT_LT(losses[0], std::log(2.0));
}

TEST(Train, DeterministicAcrossWorkers) {
  Fixture f;
  const auto a = train(f.model.templates, f.examples(), f.oracle, Fixture::config(), 1);
  const auto b = train(f.model.templates, f.examples(), f.oracle, Fixture::config(), 4);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
  auto c = Fixture::config();
  c.rng_seed = 4;
  EXPECT_NE(train(f.model.templates, f.examples(), f.oracle, c).weights, a.weights);
}

TEST(Train, RejectsSingleLabelAndNoTemplates) {
  Fixture f;
  const auto pos = as_positives(f.train_pairs());
  EXPECT_THROW(train(f.model.templates, pos, f.oracle, Fixture::config()), DataError);
  EXPECT_THROW(train({}, f.examples(), f.oracle, Fixture::config()), DataError);
}

TEST(Train, NonFiniteLossAborts) {
  TrainingSet s;
  s.add(std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()}, 1.0);
  s.add(std::vector<double>{0.0, 1.0}, 0.0);
  TrainConfig c;
  c.batch_size = 1;
  try {
    fit_head(s, c);
    FAIL();
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step"), std::string::npos);
    EXPECT_NE(msg.find("batch"), std::string::npos);
    EXPECT_NE(msg.find("lr"), std::string::npos);
  }
}

TEST(Aggregate, MaxRuleExamples) {
  EXPECT_TRUE(aggregate_max(std::vector<double>{0.9, 0.2}));
  EXPECT_TRUE(aggregate_max(std::vector<double>{0.6, 0.5}));
  EXPECT_FALSE(aggregate_max(std::vector<double>{0.6, 0.3}));
  EXPECT_FALSE(aggregate_max(std::vector<double>{0.5, 0.5}));
  EXPECT_FALSE(aggregate_max(std::vector<double>{1.0, 0.0}));
  EXPECT_TRUE(aggregate_max(std::vector<double>{0.8, 0.4}));
  EXPECT_THROW(aggregate_max(std::vector<double>{}), std::invalid_argument);
}

TEST(Aggregate, SumRuleExamples) {
  EXPECT_TRUE(aggregate_sum(std::vector<double>{0.5, 0.5}, 1.0));
  EXPECT_FALSE(aggregate_sum(std::vector<double>{0.1, 0.1}, 1.0));
  EXPECT_TRUE(aggregate_sum(std::vector<double>{0.25}, 0.25));
}

TEST(Aggregate, OrderInvariantAndMaxIdentity) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 12);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> s(static_cast<std::size_t>(len(gen)));
    for (auto& v : s) v = u(gen);
    const double lambda = 6.0 * u(gen);
    const bool m = aggregate_max(s), sum = aggregate_sum(s, lambda);
    const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
    EXPECT_EQ(m, *hi + *lo > 1.0);
    std::shuffle(s.begin(), s.end(), gen);
    EXPECT_EQ(aggregate_max(s), m);
    std::reverse(s.begin(), s.end());
    EXPECT_EQ(aggregate_sum(s, lambda), sum);
  }
}

TEST(Threshold, HandEnumeratedMidpoint) {
  const std::vector<double> sums{1.8, 0.4};
  EXPECT_DOUBLE_EQ(tune_threshold(sums, {true, false}), 1.1);
}

TEST(Threshold, EqualSumsGiveThatValue) {
  const std::vector<double> sums{0.7, 0.7, 0.7};
  EXPECT_DOUBLE_EQ(tune_threshold(sums, {true, false, true}), 0.7);
}

TEST(Threshold, TiesPickSmallest) {
  // 1.5 and 2.0 both separate perfectly.
  const std::vector<double> sums{1.0, 2.0, 3.0};
  EXPECT_DOUBLE_EQ(tune_threshold(sums, {false, true, true}), 1.5);
}

TEST(Threshold, SingleClassIsAnError) {
  const std::vector<double> sums{1.0, 2.0};
  EXPECT_THROW(tune_threshold(sums, {true, true}), DataError);
  EXPECT_THROW(tune_threshold(sums, {false, false}), DataError);
  EXPECT_THROW(tune_threshold(sums, {true}), std::invalid_argument);
}

TEST(Threshold, GridBeatsEveryFixedLambda) {
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> sums(20);
    std::vector<bool> labels(20);
    for (std::size_t i = 0; i < 20; ++i) {
      labels[i] = i % 3 == 0;
      sums[i] = std::round((labels[i] ? 2.0 : 0.0) + 4.0 * u(gen)) / 2.0;
    }
    const double best = tune_threshold(sums, labels);
    const double got = f1_at(sums, labels, best);
    for (double fixed = 0.0; fixed <= 7.0; fixed += 0.5) {
      EXPECT_GE(got, f1_at(sums, labels, fixed));
    }
    // Every threshold equals some cut point in outcome; scan finely.
    double best_any = 0.0;
    for (double l = -0.5; l <= 7.5; l += 0.01) best_any = std::max(best_any, f1_at(sums, labels, l));
    EXPECT_DOUBLE_EQ(got, best_any);
  }
}

TEST(Predict, FixtureModelSeparatesHeldOutFacts) {
  Fixture f;
  f.fit();
  for (std::size_t i = 20; i < f.facts.size(); ++i) {
    const auto& p = f.facts[i];
    const auto pos = predict_pair(f.model, p, f.oracle);
    ASSERT_EQ(pos.per_template.size(), f.model.templates.size());
    EXPECT_TRUE(pos.decision_max) << to_string(p);
    EXPECT_FALSE(pos.decision_sum.has_value());
    const auto neg = predict_pair(f.model, {p.tail, p.head}, f.oracle);
    EXPECT_FALSE(neg.decision_max) << to_string(p);
    for (double s : pos.per_template) {
      EXPECT_GT(s, 0.0);
      EXPECT_LT(s, 1.0);
    }
  }
}

TEST(Predict, FailedTemplatesAreDropped) {
  Fixture f;
  f.fit();
  // "capital" occurs in a subset of the patterns.
  FlakyOracle flaky(f.oracle, "capital");
  Diagnostics diag;
  const auto s = predict_pair(f.model, f.facts[25], flaky, &diag);
  std::size_t healthy = 0;
  for (const auto& t : f.model.templates) {
    healthy += std::find(t.tokens.begin(), t.tokens.end(), "capital") == t.tokens.end();
  }
  ASSERT_GT(healthy, 0u);
  ASSERT_LT(healthy, f.model.templates.size());
  EXPECT_EQ(s.per_template.size(), healthy);
  EXPECT_EQ(diag.count(), f.model.templates.size() - healthy);

  FlakyOracle dead(f.oracle, ".");
  EXPECT_THROW(predict_pair(f.model, f.facts[25], dead), OracleError);
}

TEST(Predict, LambdaTunedOnFixtureIsGridOptimal) {
  Fixture f;
  f.fit();
  std::vector<LabeledPair> tuning = as_positives({f.facts.begin() + 20, f.facts.end()});
  for (std::size_t i = 20; i < f.facts.size(); ++i) {
    tuning.push_back({{f.facts[i].tail, f.facts[i].head}, Label::negative, Origin::swap});
    tuning.push_back({{f.facts[i].head, f.facts[(i + 1) % 20].tail}, Label::negative, Origin::cross});
  }
  const double lambda = tune_lambda(f.model, tuning, f.oracle);
  std::vector<double> sums;
  std::vector<bool> labels;
  for (const auto& ex : tuning) {
    const auto s = predict_pair(f.model, ex.pair, f.oracle);
    sums.push_back(std::accumulate(s.per_template.begin(), s.per_template.end(), 0.0));
    labels.push_back(ex.positive());
  }
  const double got = f1_at(sums, labels, lambda);
  for (double s : sums) EXPECT_GE(got, f1_at(sums, labels, s));
  EXPECT_DOUBLE_EQ(got, 1.0);

  f.model.lambda = lambda;
  const auto scored = predict_pair(f.model, f.facts[22], f.oracle);
  ASSERT_TRUE(scored.decision_sum.has_value());
  EXPECT_TRUE(*scored.decision_sum);
}

TEST(Links, FixtureTopCandidateIsTheFact) {
  Fixture f;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto links = predict_links(f.model, f.facts[i].head, f.oracle, 10);
    ASSERT_FALSE(links.empty());
    EXPECT_EQ(links.front().token, f.facts[i].tail);
    EXPECT_DOUBLE_EQ(links.front().votes, 10.0);
  }
}

TEST(Links, SingleTemplateKeepsTopkOrder) {
  Fixture f;
  RelationModel one = f.model;
  one.templates.resize(1);
  const auto& t = one.templates[0];
  const auto head = f.facts[3].head;
  const auto expect = f.oracle.topk(MaskedQuery(instantiate_tokens(t, head, "[MASK]")), 6);
  const auto links = predict_links(one, head, f.oracle, 6);
  ASSERT_EQ(links.size(), expect.entries.size());
  for (std::size_t i = 0; i < links.size(); ++i) EXPECT_EQ(links[i].token, expect.entries[i].token);
}

TEST(Links, ReciprocalRankVoting) {
  ScriptedOracle o({{"a", {"x", "y", "z"}}, {"b", {"x", "y"}}, {"c", {"x", "y", "z"}}});
  RelationModel m;
  for (const char* lead : {"a", "b", "c"}) {
    m.templates.push_back(Template{tokenize(std::string(lead) + " [HEAD] to [TAIL]"), {}, {}, 1});
  }
  const auto links = predict_links(m, "w", o, 3);
  ASSERT_EQ(links.size(), 3u);
  EXPECT_EQ(links[0].token, "x");
  EXPECT_DOUBLE_EQ(links[0].votes, 3.0);
  EXPECT_EQ(links[1].token, "y");
  EXPECT_DOUBLE_EQ(links[1].votes, 1.5);
  EXPECT_EQ(links[2].token, "z");
  EXPECT_DOUBLE_EQ(links[2].votes, 2.0 / 3.0);
}

TEST(Links, FailingTemplatesAreSkipped) {
  Fixture f;
  FlakyOracle flaky(f.oracle, "capital");
  Diagnostics diag;
  const auto links = predict_links(f.model, f.facts[0].head, flaky, 10, &diag);
  ASSERT_FALSE(links.empty());
  EXPECT_EQ(links.front().token, f.facts[0].tail);
  EXPECT_GT(diag.count(), 0u);
}

TEST(ModelJson, RoundTrip) {
  Fixture f;
  f.fit();
  f.model.lambda = 4.25;
  const auto back = model_from_json(nlohmann::json::parse(model_to_json(f.model).dump()));
  EXPECT_EQ(back.relation, "capital_of");
  EXPECT_EQ(back.head.weights, f.model.head.weights);
  EXPECT_EQ(back.head.bias, f.model.head.bias);
  EXPECT_EQ(back.head.config.learning_rate, 0.05);
  EXPECT_EQ(back.head.config.epochs, 20);
  EXPECT_EQ(back.lambda, 4.25);
  EXPECT_EQ(back.oracle_dim, 32u);
  ASSERT_EQ(back.templates.size(), f.model.templates.size());
  for (std::size_t i = 0; i < back.templates.size(); ++i) {
    EXPECT_EQ(back.templates[i].tokens, f.model.templates[i].tokens);
  }
  f.model.lambda.reset();
  const auto j = model_to_json(f.model);
  EXPECT_TRUE(j.at("lambda").is_null());
  EXPECT_FALSE(model_from_json(j).lambda.has_value());
}

TEST(ModelJson, RejectsBrokenFiles) {
  Fixture f;
  f.fit();
  auto j = model_to_json(f.model);
  auto missing = j;
  missing.erase("weights");
  EXPECT_THROW(model_from_json(missing), DataError);
  auto empty = j;
  empty["templates"] = nlohmann::json::array();
  EXPECT_THROW(model_from_json(empty), DataError);
  auto dim = j;
  dim["oracle_dim"] = 16;
  EXPECT_THROW(model_from_json(dim), DataError);
  ClassifierHead h{{1.0, 2.0}, 0.0, {}};
  EXPECT_THROW(h.logit(std::vector<double>{1.0}), DataError);
}

TEST(Metrics, WorkedExamples) {
  const auto m = compute_metrics({8, 2, 2, 0});
  EXPECT_DOUBLE_EQ(m.precision, 0.8);
  EXPECT_DOUBLE_EQ(m.recall, 0.8);
  EXPECT_DOUBLE_EQ(m.f1, 0.8);
  const auto none = compute_metrics({0, 0, 5, 10});
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
}

TEST(Metrics, TwelveExampleSheet) {
  const std::vector<bool> actual{1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<bool> predicted{1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0};
  Confusion c;
  for (std::size_t i = 0; i < actual.size(); ++i) c.add(predicted[i], actual[i]);
  EXPECT_EQ(c, (Confusion{3, 2, 1, 6}));
  const auto m = compute_metrics(c);
  EXPECT_DOUBLE_EQ(m.precision, 0.6);
  EXPECT_DOUBLE_EQ(m.recall, 0.75);
  EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);
}
