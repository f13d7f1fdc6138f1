#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/example_gen.hpp"
#include "relind/oracle.hpp"
#include "relind/types.hpp"

namespace relind {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  int epochs = 5;
  std::size_t batch_size = 32;
  std::uint64_t rng_seed = 0;

  // Adam moments; not exposed on the command line.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
       {"warmup_fraction", c.warmup_fraction}, {"epochs", c.epochs},
       {"batch_size", c.batch_size}, {"rng_seed", c.rng_seed},
       {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.rng_seed = j.value("rng_seed", d.rng_seed);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Logistic output layer over sentence vectors.
struct ClassifierHead {
  std::vector<double> weights;
  double bias = 0.0;
  TrainConfig config;

  double logit(std::span<const double> x) const {
    if (x.size() != weights.size()) {
      throw DataError("embedding dimension " + std::to_string(x.size()) +
                      " does not match classifier dimension " +
                      std::to_string(weights.size()));
    }
    return std::inner_product(x.begin(), x.end(), weights.begin(), bias);
  }

  double probability(std::span<const double> x) const { return sigmoid(logit(x)); }
};

/// Row-major design matrix with 0/1 labels.
struct TrainingSet {
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  void add(std::span<const double> x, double y) {
    if (dim == 0) dim = x.size();
    if (x.size() != dim) throw DataError("inconsistent embedding dimension");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
  }
};

struct BceGradient {
  std::vector<double> weights;
  double bias = 0.0;
};

/// Mean binary cross-entropy of the head on the given rows.
inline double bce_loss(const ClassifierHead& head, const TrainingSet& data,
                       std::span<const std::size_t> rows) {
  double total = 0.0;
  for (auto i : rows) {
    const double z = head.logit(data.row(i));
    total += softplus(z) - data.labels[i] * z;
  }
  return total / static_cast<double>(rows.size());
}

/// Analytic gradient of bce_loss: mean of (sigmoid(z) - y) * [x, 1].
inline BceGradient bce_gradient(const ClassifierHead& head, const TrainingSet& data,
                                std::span<const std::size_t> rows) {
  BceGradient g{std::vector<double>(head.weights.size(), 0.0), 0.0};
  for (auto i : rows) {
    const auto x = data.row(i);
    const double r = sigmoid(head.logit(x)) - data.labels[i];
    for (std::size_t d = 0; d < x.size(); ++d) g.weights[d] += r * x[d];
    g.bias += r;
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (auto& w : g.weights) w *= inv;
  g.bias *= inv;
  return g;
}

/// Linear warmup over the first warmup_fraction of steps, then linear
/// decay reaching zero at total_steps. `step` is 0-based.
inline double lr_multiplier(std::size_t step, std::size_t total_steps,
                            double warmup_fraction) {
  const auto warmup = static_cast<std::size_t>(
      std::floor(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) {
    return static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  if (total_steps <= warmup) return 0.0;
  return static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitResult {
  ClassifierHead head;
  /// Full-data loss after each epoch.
  std::vector<double> epoch_loss;
};

/// Adam with decoupled weight decay (not applied to the bias) under the
/// warmup-linear schedule. Starts from zero weights and bias; batch order
/// comes from config.rng_seed.
inline FitResult fit_head(const TrainingSet& data, const TrainConfig& config) {
  FitResult result;
  result.head.weights.assign(data.dim, 0.0);
  result.head.config = config;
  if (config.epochs <= 0 || data.size() == 0) return result;
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");

  auto& head = result.head;
  const std::size_t n = data.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * static_cast<std::size_t>(config.epochs);

  std::vector<double> m(data.dim, 0.0), v(data.dim, 0.0);
  double mb = 0.0, vb = 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> all = order;
  Rng rng(config.rng_seed);

  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const auto first = b * config.batch_size;
      const auto last = std::min(n, first + config.batch_size);
      std::span<const std::size_t> rows(order.data() + first, last - first);

      const double loss = bce_loss(head, data, rows);
      const double lr =
          config.learning_rate * lr_multiplier(step, total_steps, config.warmup_fraction);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at step " << step << " (epoch " << epoch
            << ", batch " << b << ", lr " << lr << ")";
        throw TrainingError(msg.str());
      }
      const auto g = bce_gradient(head, data, rows);
      const double t = static_cast<double>(step + 1);
      const double c1 = 1.0 - std::pow(config.beta1, t);
      const double c2 = 1.0 - std::pow(config.beta2, t);
      for (std::size_t d = 0; d < data.dim; ++d) {
        m[d] = config.beta1 * m[d] + (1 - config.beta1) * g.weights[d];
        v[d] = config.beta2 * v[d] + (1 - config.beta2) * g.weights[d] * g.weights[d];
        const double update = (m[d] / c1) / (std::sqrt(v[d] / c2) + config.epsilon);
        head.weights[d] -= lr * (update + config.weight_decay * head.weights[d]);
      }
      mb = config.beta1 * mb + (1 - config.beta1) * g.bias;
      vb = config.beta2 * vb + (1 - config.beta2) * g.bias * g.bias;
      head.bias -= lr * (mb / c1) / (std::sqrt(vb / c2) + config.epsilon);
    }
    result.epoch_loss.push_back(bce_loss(head, data, all));
  }
  return result;
}

/// One row per (example, template): embed(instantiate(template, pair)).
inline TrainingSet build_training_set(const std::vector<Template>& templates,
                                      const std::vector<LabeledPair>& examples,
                                      const LmOracle& oracle, unsigned workers = 1) {
  const std::size_t nt = templates.size();
  std::vector<SentenceVector> vectors(examples.size() * nt);
  parallel_for(vectors.size(), workers, [&](std::size_t i) {
    vectors[i] = oracle.embed(instantiate_tokens(templates[i % nt], examples[i / nt].pair));
  });
  TrainingSet set;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    set.add(vectors[i].values, examples[i / nt].positive() ? 1.0 : 0.0);
  }
  return set;
}

/// Trains the single per-relation head on every (example, template)
/// instantiation.
inline ClassifierHead train(const std::vector<Template>& templates,
                            const std::vector<LabeledPair>& examples,
                            const LmOracle& oracle, const TrainConfig& config,
                            unsigned workers = 1,
                            std::vector<double>* epoch_loss = nullptr) {
  if (templates.empty()) throw DataError("training needs at least one template");
  const bool has_pos = std::any_of(examples.begin(), examples.end(),
                                   [](const auto& e) { return e.positive(); });
  const bool has_neg = std::any_of(examples.begin(), examples.end(),
                                   [](const auto& e) { return !e.positive(); });
  if (!has_pos || !has_neg) {
    throw DataError("training examples must contain both labels");
  }
  auto fit = fit_head(build_training_set(templates, examples, oracle, workers), config);
  if (epoch_loss != nullptr) *epoch_loss = fit.epoch_loss;
  return std::move(fit.head);
}

// Aggregation across templates.

/// Positive when the most confident positive beats every negative:
/// max p > 1 - min p.
inline bool aggregate_max(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("no template scores");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  return *hi > 1.0 - *lo;
}

/// Positive when the summed probability reaches lambda.
inline bool aggregate_sum(std::span<const double> scores, double lambda) {
  if (scores.empty()) throw std::invalid_argument("no template scores");
  return std::accumulate(scores.begin(), scores.end(), 0.0) >= lambda;
}

struct RelationModel {
  std::string relation;
  std::vector<Template> templates;
  ClassifierHead head;
  std::optional<double> lambda;
  std::size_t oracle_dim = 0;
};

struct PairScore {
  WordPair pair;
  std::vector<double> per_template;
  bool decision_max = false;
  std::optional<bool> decision_sum;
};

/// Scores the pair under every template. Templates whose oracle call fails
/// are left out; failure on all of them is an error.
inline PairScore predict_pair(const RelationModel& model, const WordPair& pair,
                              const LmOracle& oracle, Diagnostics* diag = nullptr) {
  PairScore out{pair, {}, false, std::nullopt};
  for (const auto& t : model.templates) {
    try {
      out.per_template.push_back(
          model.head.probability(oracle.embed(instantiate_tokens(t, pair)).values));
    } catch (const OracleError& e) {
      warn(diag, "template '" + t.text() + "' skipped for " + to_string(pair) + ": " +
                     e.what());
    }
  }
  if (out.per_template.empty()) {
    throw OracleError("every template failed for pair " + to_string(pair));
  }
  out.decision_max = aggregate_max(out.per_template);
  if (model.lambda) out.decision_sum = aggregate_sum(out.per_template, *model.lambda);
  return out;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(bool predicted, bool actual) {
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

struct Metrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Standard definitions; a zero denominator yields 0.
inline Metrics compute_metrics(const Confusion& c) {
  Metrics m;
  if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision + m.recall > 0) {
    m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

/// Picks the sum-rule threshold with the best F1 over all achievable cut
/// points: the distinct sums and the midpoints between neighbours. Ties go
/// to the smallest threshold.
inline double tune_threshold(std::span<const double> sums, const std::vector<bool>& labels) {
  if (sums.size() != labels.size() || sums.empty()) {
    throw std::invalid_argument("sums and labels must be non-empty and aligned");
  }
  const bool has_pos = std::find(labels.begin(), labels.end(), true) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), false) != labels.end();
  if (!has_pos || !has_neg) {
    throw DataError("threshold tuning needs both positive and negative examples");
  }
  std::vector<double> distinct(sums.begin(), sums.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> grid;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    grid.push_back(distinct[i]);
    if (i + 1 < distinct.size()) grid.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  }
  double best = grid.front(), best_f1 = -1.0;
  for (double lambda : grid) {
    Confusion c;
    for (std::size_t i = 0; i < sums.size(); ++i) c.add(sums[i] >= lambda, labels[i]);
    const double f1 = compute_metrics(c).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best = lambda;
    }
  }
  return best;
}

inline double tune_lambda(const RelationModel& model,
                          const std::vector<LabeledPair>& tuning_pairs,
                          const LmOracle& oracle, Diagnostics* diag = nullptr) {
  std::vector<double> sums;
  std::vector<bool> labels;
  for (const auto& ex : tuning_pairs) {
    const auto score = predict_pair(model, ex.pair, oracle, diag);
    sums.push_back(std::accumulate(score.per_template.begin(), score.per_template.end(), 0.0));
    labels.push_back(ex.positive());
  }
  return tune_threshold(sums, labels);
}

struct LinkCandidate {
  std::string token;
  double votes = 0.0;
};

/// Ranks tail candidates for `head_word` by summed reciprocal rank of the
/// fillers of (head, _) across the model's templates.
inline std::vector<LinkCandidate> predict_links(const RelationModel& model,
                                                const std::string& head_word,
                                                const LmOracle& oracle, std::size_t k,
                                                Diagnostics* diag = nullptr) {
  std::map<std::string, double> votes;
  const std::string mask(kMaskMarker);
  for (const auto& t : model.templates) {
    try {
      const auto p = oracle.topk(MaskedQuery(instantiate_tokens(t, head_word, mask)), k);
      for (std::size_t r = 0; r < p.entries.size(); ++r) {
        votes[p.entries[r].token] += 1.0 / static_cast<double>(r + 1);
      }
    } catch (const OracleError& e) {
      warn(diag, "template '" + t.text() + "' skipped for links: " + e.what());
    }
  }
  std::vector<LinkCandidate> out;
  for (auto& [tok, v] : votes) out.push_back({tok, v});
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.votes > b.votes; });
  return out;
}

inline nlohmann::json model_to_json(const RelationModel& m) {
  nlohmann::json templates = nlohmann::json::array();
  for (const auto& t : m.templates) templates.push_back(template_to_json(t));
  nlohmann::json j{{"relation", m.relation},
                   {"templates", templates},
                   {"weights", m.head.weights},
                   {"bias", m.head.bias},
                   {"train_config", m.head.config},
                   {"oracle_dim", m.oracle_dim}};
  if (m.lambda) {
    j["lambda"] = *m.lambda;
  } else {
    j["lambda"] = nullptr;
  }
  return j;
}

inline RelationModel model_from_json(const nlohmann::json& j) {
  RelationModel m;
  try {
    m.relation = j.at("relation").get<std::string>();
    for (const auto& t : j.at("templates")) m.templates.push_back(template_from_json(t));
    m.head.weights = j.at("weights").get<std::vector<double>>();
    m.head.bias = j.at("bias").get<double>();
    if (j.contains("train_config")) m.head.config = j["train_config"].get<TrainConfig>();
    m.oracle_dim = j.value("oracle_dim", m.head.weights.size());
    if (j.contains("lambda") && !j["lambda"].is_null()) m.lambda = j["lambda"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
  if (m.templates.empty()) throw DataError("model '" + m.relation + "' has no templates");
  if (m.oracle_dim != m.head.weights.size()) {
    throw DataError("model '" + m.relation + "' weight dimension does not match oracle_dim");
  }
  return m;
}

}  // namespace relind
