#include "cobra/http_client.hpp"

#include <algorithm>
#include <mutex>
#include <semaphore>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "cobra/error.hpp"

namespace cobra {

namespace {

constexpr int kMaxInFlight = 4096;

bool retryable_status(int status) {
  return status == 408 || status == 409 || status == 429 || (status >= 500 && status <= 599);
}

std::string snippet(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(std::counting_semaphore<kMaxInFlight>& s) : s_(s) { s_.acquire(); }
  ~SemaphoreGuard() { s_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  std::counting_semaphore<kMaxInFlight>& s_;
};

}  // namespace

BaseUrl parse_base_url(std::string_view url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw ConfigurationError("base URL '" + std::string(url) + "' has no scheme (expected http:// or https://)");
  }
  const std::string_view scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigurationError("base URL '" + std::string(url) + "' must use http or https");
  }
  const std::size_t host_start = scheme_end + 3;
  const std::size_t slash = url.find('/', host_start);
  BaseUrl out;
  out.origin = std::string(url.substr(0, slash));
  if (out.origin.size() <= host_start) throw ConfigurationError("base URL '" + std::string(url) + "' has no host");
  if (slash != std::string_view::npos) {
    std::string prefix(url.substr(slash));
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    out.path_prefix = prefix;
  }
  return out;
}

struct JsonHttpClient::Impl {
  BaseUrl base;
  HttpClientOptions options;
  httplib::Headers headers;
  std::counting_semaphore<kMaxInFlight> in_flight;
  std::mutex rate_mutex;
  std::chrono::steady_clock::time_point next_slot{};
  mutable StatsCounter stats;

  Impl(BaseUrl b, HttpClientOptions o)
      : base(std::move(b)), options(std::move(o)), in_flight(std::clamp(options.max_in_flight, 1, kMaxInFlight)) {
    for (const auto& [k, v] : options.headers) headers.emplace(k, v);
  }

  void wait_for_rate_slot() {
    if (options.requests_per_second <= 0.0) return;
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / options.requests_per_second));
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(rate_mutex);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_slot);
      next_slot = slot + interval;
    }
    std::this_thread::sleep_until(slot);
  }

  httplib::Client make_client() const {
    httplib::Client client(base.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    return client;
  }

  nlohmann::json send(bool is_post, std::string_view path, const nlohmann::json* body, bool retry) {
    const std::string full_path = base.path_prefix + std::string(path);
    const std::string payload = body ? body->dump() : std::string();
    const int max_retries = retry ? options.retry.max_retries : 0;
    std::string last_problem;

    for (int attempt = 0;; ++attempt) {
      std::chrono::milliseconds delay{0};
      {
        SemaphoreGuard guard(in_flight);
        wait_for_rate_slot();
        stats.request();
        httplib::Client client = make_client();
        httplib::Result res = is_post ? client.Post(full_path, headers, payload, "application/json")
                                      : client.Get(full_path, headers);
        if (!res) {
          last_problem = "cannot reach " + base.origin + full_path + ": " + httplib::to_string(res.error());
        } else {
          const int status = res->status;
          if (status == 401 || status == 403) {
            stats.failure();
            throw AuthError("authentication failed (HTTP " + std::to_string(status) + ") for " + full_path + ": " +
                            snippet(res->body));
          }
          if (status >= 200 && status < 300) {
            try {
              return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error&) {
              stats.failure();
              throw BackendError("malformed JSON reply from " + full_path + ": " + snippet(res->body));
            }
          }
          if (!retryable_status(status)) {
            stats.failure();
            throw BackendError("HTTP " + std::to_string(status) + " from " + full_path + ": " + snippet(res->body));
          }
          last_problem = "HTTP " + std::to_string(status) + " from " + full_path;
          if (res->has_header("Retry-After")) {
            try {
              delay = std::chrono::milliseconds(
                  static_cast<std::int64_t>(std::stod(res->get_header_value("Retry-After")) * 1000.0));
            } catch (const std::exception&) {
              // HTTP-date form: fall back to the backoff schedule.
            }
          }
        }
      }
      if (attempt >= max_retries) {
        stats.failure();
        throw TransportError(last_problem + (max_retries > 0 ? " (after " + std::to_string(max_retries) + " retries)"
                                                             : std::string()));
      }
      stats.retry();
      delay = std::min(std::max(delay, options.retry.delay_for(attempt)), options.retry.max_delay);
      std::this_thread::sleep_for(delay);
    }
  }
};

JsonHttpClient::JsonHttpClient(std::string_view base_url, HttpClientOptions options)
    : impl_(std::make_unique<Impl>(parse_base_url(base_url), std::move(options))) {}

JsonHttpClient::~JsonHttpClient() = default;

nlohmann::json JsonHttpClient::post(std::string_view path, const nlohmann::json& body) const {
  return impl_->send(true, path, &body, true);
}

nlohmann::json JsonHttpClient::get(std::string_view path) const { return impl_->send(false, path, nullptr, true); }

nlohmann::json JsonHttpClient::get_once(std::string_view path) const {
  return impl_->send(false, path, nullptr, false);
}

const BaseUrl& JsonHttpClient::base() const { return impl_->base; }

BackendStats JsonHttpClient::stats() const { return impl_->stats.snapshot(); }

}  // namespace cobra
