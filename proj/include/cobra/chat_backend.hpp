#pragma once

// OpenAI-compatible chat-completion backend (black-box access). Credentials
// come from COBRA_API_KEY; the base URL from BackendConfig::endpoint when it
// is a URL, else COBRA_BASE_URL.

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "cobra/backend.hpp"

namespace cobra {

inline constexpr const char* kApiKeyEnv = "COBRA_API_KEY";
inline constexpr const char* kBaseUrlEnv = "COBRA_BASE_URL";
inline constexpr const char* kDefaultChatBaseUrl = "https://api.openai.com/v1";

/// Body of one /chat/completions request.
nlohmann::json chat_request_body(const BackendConfig& config, const Request& request, bool with_logprobs);

/// Text of choices[0].message.content. Throws BackendError when absent.
std::string chat_completion_text(const nlohmann::json& reply);

/// Label mass from choices[0].logprobs.content[0].top_logprobs, matched to the
/// presented labels (whitespace and bracket/period wrapping ignored).
LabelProbabilities chat_label_probabilities(const nlohmann::json& reply, const PresentedPrompt& prompt);

/// Throws ConfigurationError (missing key, bad URL, empty model) before any
/// request is made.
AgentPtr make_chat_api(BackendConfig config);

}  // namespace cobra
