#include "cobra/chat_backend.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

#include "cobra/error.hpp"
#include "cobra/http_client.hpp"

namespace cobra {

namespace {

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

std::string normalize_token(std::string_view token) {
  std::string out;
  for (char c : token) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u) || c == '(' || c == ')' || c == '[' || c == ']' || c == '.' || c == ':') continue;
    out.push_back(static_cast<char>(std::toupper(u)));
  }
  return out;
}

class ChatApiBackend final : public AgentBackend {
 public:
  ChatApiBackend(BackendConfig config, const std::string& base_url, const std::string& api_key)
      : config_(std::move(config)),
        client_(base_url, HttpClientOptions{config_.request_timeout,
                                            config_.retry,
                                            config_.max_in_flight,
                                            config_.requests_per_second,
                                            {{"Authorization", "Bearer " + api_key}}}) {}

  std::string id() const override { return config_.display_id(); }
  Capabilities capabilities() const override { return {config_.use_logprobs, true, false}; }
  const BackendConfig& config() const override { return config_; }

  LabelProbabilities label_probabilities(const Request& request) const override {
    if (!config_.use_logprobs) return AgentBackend::label_probabilities(request);
    if (!request.prompt) throw ValidationError("label probabilities require a presented Likert item");
    if (request.steering) throw CapabilityError("chat API backends cannot apply activation steering");
    const nlohmann::json reply = client_.post("/chat/completions", chat_request_body(config_, request, true));
    return chat_label_probabilities(reply, *request.prompt);
  }

  std::string generate(const Request& request) const override {
    if (request.steering) throw CapabilityError("chat API backends cannot apply activation steering");
    const nlohmann::json reply = client_.post("/chat/completions", chat_request_body(config_, request, false));
    return chat_completion_text(reply);
  }

  BackendStats stats() const override { return client_.stats(); }

 private:
  BackendConfig config_;
  JsonHttpClient client_;
};

}  // namespace

nlohmann::json chat_request_body(const BackendConfig& config, const Request& request, bool with_logprobs) {
  nlohmann::json messages = nlohmann::json::array();
  WireTurns turns = wire_turns(config.persona_role, request);
  if (turns.system) messages.push_back({{"role", "system"}, {"content", *turns.system}});
  messages.push_back({{"role", "user"}, {"content", std::move(turns.user)}});
  nlohmann::json body{{"model", config.model_name},
                      {"messages", std::move(messages)},
                      {"temperature", request.temperature},
                      {"max_tokens", with_logprobs ? 1 : request.max_tokens},
                      // The wire format takes a signed 63-bit seed.
                      {"seed", static_cast<std::int64_t>(request.seed >> 1)}};
  if (with_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = 20;
  }
  return body;
}

std::string chat_completion_text(const nlohmann::json& reply) {
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw BackendError("chat reply has no text content");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed chat reply: ") + e.what());
  }
}

LabelProbabilities chat_label_probabilities(const nlohmann::json& reply, const PresentedPrompt& prompt) {
  LabelProbabilities out;
  try {
    const auto& top = reply.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs");
    for (const auto& entry : top) {
      const std::string token = normalize_token(entry.at("token").get<std::string>());
      const double lp = entry.at("logprob").get<double>();
      for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
        if (token == prompt.labels[pos]) {
          out.by_position[pos] += std::exp(lp);
          break;
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("chat reply carries no usable logprobs: ") + e.what());
  }
  for (double p : out.by_position) out.valid_mass += p;
  if (out.valid_mass <= 0.0) throw BackendError("no option label among the returned top logprobs");
  return out;
}

AgentPtr make_chat_api(BackendConfig config) {
  config.validate();
  const std::string key = env_or_empty(kApiKeyEnv);
  if (key.empty()) {
    throw ConfigurationError(std::string("chat API backend needs the ") + kApiKeyEnv + " environment variable");
  }
  if (config.model_name.empty()) throw ConfigurationError("chat API backend needs backend.model_name");
  std::string base = config.endpoint;
  if (base.rfind("http://", 0) != 0 && base.rfind("https://", 0) != 0) {
    base = env_or_empty(kBaseUrlEnv);
    if (base.empty()) base = kDefaultChatBaseUrl;
  }
  parse_base_url(base);
  return std::make_shared<const ChatApiBackend>(std::move(config), base, key);
}

}  // namespace cobra
