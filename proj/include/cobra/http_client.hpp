#pragma once

// JSON-over-HTTP client shared by the remote backends: bounded in-flight
// requests, optional rate limiting, and retry with exponential backoff on
// 408/409/429/5xx and connection failures.

#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/backend.hpp"

namespace cobra {

struct BaseUrl {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // "" or "/v1"
};

/// Splits "https://host:8080/v1/" into {"https://host:8080", "/v1"}.
/// Throws ConfigurationError on anything that is not http(s).
BaseUrl parse_base_url(std::string_view url);

struct HttpClientOptions {
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  int max_in_flight = 8;
  double requests_per_second = 0.0;
  std::vector<std::pair<std::string, std::string>> headers;
};

class JsonHttpClient {
 public:
  JsonHttpClient(std::string_view base_url, HttpClientOptions options);
  ~JsonHttpClient();
  JsonHttpClient(const JsonHttpClient&) = delete;
  JsonHttpClient& operator=(const JsonHttpClient&) = delete;

  /// Throws AuthError on 401/403, TransportError when retries are exhausted,
  /// BackendError on other failures or a body that is not JSON.
  nlohmann::json post(std::string_view path, const nlohmann::json& body) const;
  nlohmann::json get(std::string_view path) const;

  /// Single attempt, no retries; for liveness probes.
  nlohmann::json get_once(std::string_view path) const;

  const BaseUrl& base() const;
  BackendStats stats() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cobra
