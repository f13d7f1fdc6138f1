#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "relind/oracle.hpp"

namespace relind {

/// Environment variable holding a bearer token for the oracle service.
inline constexpr const char* kOracleTokenEnv = "RELIND_ORACLE_TOKEN";

struct RemoteOracleConfig {
  std::string url;  // e.g. "http://localhost:8080"
  int max_in_flight = 4;
  int max_retries = 3;
  std::chrono::milliseconds backoff{100};
  std::chrono::seconds timeout{30};
  std::string auth_token;  // empty: read kOracleTokenEnv
};

/// Client for the JSON-over-HTTP oracle protocol:
///   POST /v1/topk  {"tokens", "mask_index", "k"} -> {"entries": [...]}
///   POST /v1/embed {"tokens"}                    -> {"vector", "dim"}
/// Transport failures and 503 are retried with exponential backoff; 400 and
/// unparseable bodies are not.
class RemoteOracle : public LmOracle {
 public:
  explicit RemoteOracle(RemoteOracleConfig config)
      : config_(std::move(config)),
        slots_(config_.max_in_flight > 0 ? config_.max_in_flight : 1) {
    if (config_.auth_token.empty()) {
      if (const char* env = std::getenv(kOracleTokenEnv)) config_.auth_token = env;
    }
    while (!config_.url.empty() && config_.url.back() == '/') config_.url.pop_back();
  }

  std::string backend_id() const override { return "remote:" + config_.url; }

  TopKPrediction topk(const MaskedQuery& query, std::size_t k) const override {
    if (k == 0) throw InvalidQuery("k must be at least 1");
    nlohmann::json body{{"tokens", query.tokens()},
                        {"mask_index", query.mask_index()},
                        {"k", k}};
    auto p = prediction_from_json(post("/v1/topk", body));
    validate_prediction(p, k);
    return p;
  }

  SentenceVector embed(const std::vector<std::string>& tokens) const override {
    if (tokens.empty()) throw InvalidQuery("cannot embed an empty sentence");
    auto v = vector_from_json(post("/v1/embed", {{"tokens", tokens}}));
    std::size_t expected = 0;
    if (!dim_.compare_exchange_strong(expected, v.dim()) && expected != v.dim()) {
      throw MalformedResponseError("embedding dimension changed from " +
                                   std::to_string(expected) + " to " +
                                   std::to_string(v.dim()));
    }
    return v;
  }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1 << (attempt - 1)));
      httplib::Result res;
      {
        slots_.acquire();
        httplib::Client client(config_.url);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        httplib::Headers headers;
        if (!config_.auth_token.empty()) {
          headers.emplace("Authorization", "Bearer " + config_.auth_token);
        }
        res = client.Post(path, headers, payload, "application/json");
        slots_.release();
      }
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 503) {
        last_error = "service unavailable (503)";
        continue;
      }
      if (res->status == 400) {
        throw RejectedRequestError("oracle rejected request to " + path + ": " + res->body);
      }
      if (res->status != 200) {
        throw MalformedResponseError("unexpected HTTP status " + std::to_string(res->status) +
                                     " from " + path);
      }
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (j.is_discarded()) {
        throw MalformedResponseError("response from " + path + " is not JSON");
      }
      return j;
    }
    throw RetriableOracleError("oracle call to " + config_.url + path + " failed after " +
                               std::to_string(config_.max_retries + 1) +
                               " attempts: " + last_error);
  }

  RemoteOracleConfig config_;
  mutable std::counting_semaphore<> slots_;
  mutable std::atomic<std::size_t> dim_{0};
};

}  // namespace relind
