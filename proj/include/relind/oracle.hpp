#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "relind/common.hpp"
#include "relind/text.hpp"

namespace relind {

// Oracle errors. Retriable failures (transport, 503) are distinct from a
// response that cannot be interpreted.

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RetriableOracleError : public OracleError {
 public:
  using OracleError::OracleError;
};

class MalformedResponseError : public OracleError {
 public:
  using OracleError::OracleError;
};

/// The service rejected the request (HTTP 400).
class RejectedRequestError : public OracleError {
 public:
  using OracleError::OracleError;
};

/// A query that violates the single-blank contract.
class InvalidQuery : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Token sequence with exactly one [MASK].
class MaskedQuery {
 public:
  explicit MaskedQuery(std::vector<std::string> tokens)
      : tokens_(std::move(tokens)) {
    const auto n = std::count(tokens_.begin(), tokens_.end(), kMaskMarker);
    if (n != 1) {
      throw InvalidQuery("masked query needs exactly one [MASK], found " +
                         std::to_string(n));
    }
    if (tokens_.size() < 2) {
      throw InvalidQuery("masked query needs at least two tokens");
    }
    mask_index_ = static_cast<std::size_t>(
        std::find(tokens_.begin(), tokens_.end(), kMaskMarker) -
        tokens_.begin());
  }

  static MaskedQuery parse(std::string_view text) {
    return MaskedQuery(tokenize(text));
  }

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t mask_index() const { return mask_index_; }
  std::string text() const { return join(tokens_); }

 private:
  std::vector<std::string> tokens_;
  std::size_t mask_index_ = 0;
};

struct TopKPrediction {
  struct Entry {
    std::string token;
    double score = 0.0;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;

  bool contains(std::string_view token) const {
    return std::any_of(entries.begin(), entries.end(),
                       [&](const Entry& e) { return e.token == token; });
  }

  bool operator==(const TopKPrediction&) const = default;
};

/// Checks ordering and distinctness; throws MalformedResponseError.
inline void validate_prediction(const TopKPrediction& p, std::size_t k) {
  if (p.entries.size() > k) {
    throw MalformedResponseError("top-k response has " +
                                 std::to_string(p.entries.size()) +
                                 " entries for k=" + std::to_string(k));
  }
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < p.entries.size(); ++i) {
    const auto& e = p.entries[i];
    if (e.token.empty() || !seen.insert(e.token).second) {
      throw MalformedResponseError("top-k response has empty or duplicate token");
    }
    if (!std::isfinite(e.score) ||
        (i > 0 && e.score > p.entries[i - 1].score)) {
      throw MalformedResponseError("top-k scores must be finite and non-increasing");
    }
  }
}

struct SentenceVector {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
  bool operator==(const SentenceVector&) const = default;
};

/// Masked language model as seen by the pipeline. Implementations must be
/// safe for concurrent calls.
class LmOracle {
 public:
  virtual ~LmOracle() = default;

  /// Identifies the backend and its state; part of every cache key.
  virtual std::string backend_id() const = 0;

  /// At most k whole-word fillers for the blank, best first.
  virtual TopKPrediction topk(const MaskedQuery& query, std::size_t k) const = 0;

  /// Fixed-dimension sentence representation.
  virtual SentenceVector embed(const std::vector<std::string>& tokens) const = 0;
};

/// Single best filler.
inline std::string probe(const LmOracle& oracle, const MaskedQuery& query) {
  auto prediction = oracle.topk(query, 1);
  if (prediction.entries.empty()) {
    throw OracleError("oracle returned no prediction for '" + query.text() + "'");
  }
  return prediction.entries.front().token;
}

// JSON forms shared by the wire protocol, the cache and the replay log.

inline nlohmann::json prediction_to_json(const TopKPrediction& p) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : p.entries) {
    entries.push_back({{"token", e.token}, {"score", e.score}});
  }
  return {{"entries", std::move(entries)}};
}

inline TopKPrediction prediction_from_json(const nlohmann::json& j) {
  TopKPrediction p;
  try {
    for (const auto& e : j.at("entries")) {
      p.entries.push_back(
          {e.at("token").get<std::string>(), e.at("score").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponseError(std::string("bad top-k payload: ") + e.what());
  }
  return p;
}

inline nlohmann::json vector_to_json(const SentenceVector& v) {
  return {{"vector", v.values}, {"dim", v.values.size()}};
}

inline SentenceVector vector_from_json(const nlohmann::json& j) {
  SentenceVector v;
  try {
    v.values = j.at("vector").get<std::vector<double>>();
    if (j.at("dim").get<std::size_t>() != v.values.size()) {
      throw MalformedResponseError("embed payload dim does not match vector length");
    }
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponseError(std::string("bad embed payload: ") + e.what());
  }
  if (v.values.empty()) throw MalformedResponseError("empty embedding");
  for (double x : v.values) {
    if (!std::isfinite(x)) throw MalformedResponseError("non-finite embedding value");
  }
  return v;
}

namespace detail {

inline std::string call_key(std::string_view op,
                            const std::vector<std::string>& tokens,
                            std::size_t k) {
  std::string key(op);
  key += '\x1f';
  key += std::to_string(k);
  key += '\x1f';
  key += join(tokens, "\x1e");
  return key;
}

}  // namespace detail

/// Counts calls to the wrapped oracle.
class CountingOracle : public LmOracle {
 public:
  explicit CountingOracle(const LmOracle& inner) : inner_(inner) {}

  std::string backend_id() const override { return inner_.backend_id(); }

  TopKPrediction topk(const MaskedQuery& q, std::size_t k) const override {
    ++topk_calls_;
    return inner_.topk(q, k);
  }

  SentenceVector embed(const std::vector<std::string>& tokens) const override {
    ++embed_calls_;
    return inner_.embed(tokens);
  }

  std::size_t topk_calls() const { return topk_calls_; }
  std::size_t embed_calls() const { return embed_calls_; }
  void reset() {
    topk_calls_ = 0;
    embed_calls_ = 0;
  }

 private:
  const LmOracle& inner_;
  mutable std::atomic<std::size_t> topk_calls_{0};
  mutable std::atomic<std::size_t> embed_calls_{0};
};

/// Records every response of the wrapped oracle so it can be replayed.
class RecordingOracle : public LmOracle {
 public:
  explicit RecordingOracle(const LmOracle& inner) : inner_(inner) {}

  std::string backend_id() const override { return inner_.backend_id(); }

  TopKPrediction topk(const MaskedQuery& q, std::size_t k) const override {
    auto p = inner_.topk(q, k);
    record({{"op", "topk"}, {"tokens", q.tokens()}, {"k", k},
            {"response", prediction_to_json(p)}},
           detail::call_key("topk", q.tokens(), k));
    return p;
  }

  SentenceVector embed(const std::vector<std::string>& tokens) const override {
    auto v = inner_.embed(tokens);
    record({{"op", "embed"}, {"tokens", tokens}, {"response", vector_to_json(v)}},
           detail::call_key("embed", tokens, 0));
    return v;
  }

  /// Recorded exchanges ordered by key, independent of call order.
  nlohmann::json log() const {
    std::lock_guard lock(mutex_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [key, entry] : entries_) out.push_back(entry);
    return out;
  }

 private:
  void record(nlohmann::json entry, std::string key) const {
    std::lock_guard lock(mutex_);
    entries_.emplace(std::move(key), std::move(entry));
  }

  const LmOracle& inner_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, nlohmann::json> entries_;
};

/// Serves responses from a recorded log; unknown calls are errors.
class ReplayOracle : public LmOracle {
 public:
  ReplayOracle(const nlohmann::json& log, std::string backend_id)
      : backend_id_(std::move(backend_id)) {
    for (const auto& entry : log) {
      const auto op = entry.at("op").get<std::string>();
      const auto tokens = entry.at("tokens").get<std::vector<std::string>>();
      const std::size_t k = op == "topk" ? entry.at("k").get<std::size_t>() : 0;
      responses_.emplace(detail::call_key(op, tokens, k), entry.at("response"));
    }
  }

  std::string backend_id() const override { return backend_id_; }

  TopKPrediction topk(const MaskedQuery& q, std::size_t k) const override {
    return prediction_from_json(lookup(detail::call_key("topk", q.tokens(), k)));
  }

  SentenceVector embed(const std::vector<std::string>& tokens) const override {
    return vector_from_json(lookup(detail::call_key("embed", tokens, 0)));
  }

 private:
  const nlohmann::json& lookup(const std::string& key) const {
    auto it = responses_.find(key);
    if (it == responses_.end()) {
      throw OracleError("replay log has no response for this call");
    }
    return it->second;
  }

  std::string backend_id_;
  std::unordered_map<std::string, nlohmann::json> responses_;
};

/// Memoizes calls on (backend id, operation, k, tokens) in an append-only
/// JSONL file. Concurrent callers may both miss on the same key; the first
/// write wins and later ones are dropped.
class CachedOracle : public LmOracle {
 public:
  CachedOracle(const LmOracle& inner, std::filesystem::path file)
      : inner_(inner), file_(std::move(file)), backend_(inner.backend_id()) {
    std::ifstream in(file_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("key") || !j.contains("value")) {
        continue;  // torn write from an interrupted run
      }
      cache_.emplace(j["key"].get<std::string>(), j["value"]);
    }
  }

  std::string backend_id() const override { return backend_; }

  TopKPrediction topk(const MaskedQuery& q, std::size_t k) const override {
    const auto key = backend_ + '\x1d' + detail::call_key("topk", q.tokens(), k);
    if (auto hit = find(key)) return prediction_from_json(*hit);
    auto p = inner_.topk(q, k);
    store(key, prediction_to_json(p));
    return p;
  }

  SentenceVector embed(const std::vector<std::string>& tokens) const override {
    const auto key = backend_ + '\x1d' + detail::call_key("embed", tokens, 0);
    if (auto hit = find(key)) return vector_from_json(*hit);
    auto v = inner_.embed(tokens);
    store(key, vector_to_json(v));
    return v;
  }

  std::size_t hits() const { return hits_; }
  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  std::optional<nlohmann::json> find(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it == cache_.end()) return std::nullopt;
    ++hits_;
    return it->second;
  }

  void store(const std::string& key, nlohmann::json value) const {
    std::lock_guard lock(mutex_);
    if (!cache_.emplace(key, value).second) return;
    std::ofstream out(file_, std::ios::app);
    out << nlohmann::json{{"key", key}, {"value", std::move(value)}}.dump() << '\n';
  }

  const LmOracle& inner_;
  std::filesystem::path file_;
  std::string backend_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, nlohmann::json> cache_;
  mutable std::atomic<std::size_t> hits_{0};
};

}  // namespace relind
