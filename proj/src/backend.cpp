#include "cobra/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <vector>

#include "cobra/error.hpp"

namespace cobra {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string_view trim_front(std::string_view s) {
  while (!s.empty() && (is_space(s.front()) || s.front() == '*' || s.front() == '#' || s.front() == '"' ||
                        s.front() == '\'' || s.front() == '`')) {
    s.remove_prefix(1);
  }
  return s;
}

bool consume_word(std::string_view& s, std::string_view word) {
  if (s.size() < word.size()) return false;
  if (upper(s.substr(0, word.size())) != upper(word)) return false;
  // "Optional" must not be read as "Option" + "al".
  if (s.size() > word.size() && is_alnum(s[word.size()])) return false;
  s.remove_prefix(word.size());
  return true;
}

std::size_t rfind_ci(std::string_view haystack, std::string_view needle) {
  const std::string h = upper(haystack);
  return h.rfind(upper(needle));
}

}  // namespace

std::string_view to_string(ReasoningMode mode) {
  return mode == ReasoningMode::Direct ? "direct" : "reasoning";
}

ReasoningMode reasoning_mode_from_string(std::string_view s) {
  const std::string u = upper(s);
  if (u == "DIRECT") return ReasoningMode::Direct;
  if (u == "REASONING") return ReasoningMode::Reasoning;
  throw ValidationError("unknown reasoning mode '" + std::string(s) + "' (expected direct or reasoning)");
}

std::string_view to_string(PersonaRole role) { return role == PersonaRole::System ? "system" : "user"; }

PersonaRole persona_role_from_string(std::string_view s) {
  const std::string u = upper(s);
  if (u == "SYSTEM") return PersonaRole::System;
  if (u == "USER") return PersonaRole::User;
  throw ValidationError("unknown persona role '" + std::string(s) + "' (expected system or user)");
}

WireTurns wire_turns(PersonaRole role, const Request& request) {
  const bool has_system = request.system_prompt && !request.system_prompt->empty();
  if (!has_system) return {std::nullopt, request.user_text};
  if (role == PersonaRole::System) return {request.system_prompt, request.user_text};
  return {std::nullopt, *request.system_prompt + "\n\n" + request.user_text};
}

std::string_view to_string(ControlKind kind) {
  switch (kind) {
    case ControlKind::PromptNumerical: return "prompt_numerical";
    case ControlKind::RepeLinear: return "repe_linear";
    case ControlKind::RepeProjection: return "repe_projection";
    case ControlKind::TaskVectorFinetune: return "task_vector";
  }
  return "unknown";
}

ControlKind control_kind_from_string(std::string_view s) {
  for (ControlKind k : {ControlKind::PromptNumerical, ControlKind::RepeLinear, ControlKind::RepeProjection,
                        ControlKind::TaskVectorFinetune}) {
    if (to_string(k) == s) return k;
  }
  throw ValidationError("unknown control method '" + std::string(s) +
                        "' (expected prompt_numerical, repe_linear, repe_projection or task_vector)");
}

bool is_steering(ControlKind kind) { return kind != ControlKind::PromptNumerical; }

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
  const double ms = static_cast<double>(initial_delay.count()) * std::pow(backoff_factor, attempt);
  const double capped = std::min(ms, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(capped));
}

void BackendConfig::validate() const {
  if (endpoint.empty()) throw ConfigurationError("backend.endpoint must not be empty");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigurationError("backend.temperature must be a finite value >= 0");
  }
  if (max_samples < 1) throw ConfigurationError("backend.max_samples must be >= 1");
  if (reasoning_mode == ReasoningMode::Reasoning) {
    if (reasoning_token_budget < 1) throw ConfigurationError("backend.reasoning_token_budget must be >= 1");
    if (reasoning_paths < 1) throw ConfigurationError("backend.reasoning_paths must be >= 1");
  }
  if (request_timeout.count() <= 0) throw ConfigurationError("backend.request_timeout_ms must be > 0");
  if (retry.max_retries < 0) throw ConfigurationError("backend.retry.max_retries must be >= 0");
  if (retry.backoff_factor < 1.0) throw ConfigurationError("backend.retry.backoff_factor must be >= 1");
  if (retry.initial_delay.count() < 0 || retry.max_delay < retry.initial_delay) {
    throw ConfigurationError("backend.retry delays must satisfy 0 <= initial_delay_ms <= max_delay_ms");
  }
  if (max_in_flight < 1) throw ConfigurationError("backend.max_in_flight must be >= 1");
  if (!(requests_per_second >= 0.0)) throw ConfigurationError("backend.requests_per_second must be >= 0");
  if (max_parse_rejects < 0) throw ConfigurationError("backend.max_parse_rejects must be >= 0");
}

std::string BackendConfig::display_id() const {
  if (!id.empty()) return id;
  if (!model_name.empty()) return model_name;
  return endpoint;
}

nlohmann::json to_json(const BackendConfig& c) {
  nlohmann::json j{{"id", c.id},
                   {"endpoint", c.endpoint},
                   {"model_name", c.model_name},
                   {"temperature", c.temperature},
                   {"max_samples", c.max_samples},
                   {"reasoning_mode", to_string(c.reasoning_mode)},
                   {"reasoning_token_budget", c.reasoning_token_budget},
                   {"reasoning_paths", c.reasoning_paths},
                   {"persona_role", to_string(c.persona_role)},
                   {"request_timeout_ms", c.request_timeout.count()},
                   {"retry",
                    {{"max_retries", c.retry.max_retries},
                     {"initial_delay_ms", c.retry.initial_delay.count()},
                     {"backoff_factor", c.retry.backoff_factor},
                     {"max_delay_ms", c.retry.max_delay.count()}}},
                   {"max_in_flight", c.max_in_flight},
                   {"requests_per_second", c.requests_per_second},
                   {"max_parse_rejects", c.max_parse_rejects},
                   {"use_logprobs", c.use_logprobs}};
  j["system_prompt"] = c.system_prompt ? nlohmann::json(*c.system_prompt) : nlohmann::json(nullptr);
  return j;
}

BackendConfig backend_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigurationError("backend: expected an object");
  BackendConfig c;
  try {
    c.id = j.value("id", c.id);
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model_name = j.value("model_name", c.model_name);
    c.temperature = j.value("temperature", c.temperature);
    c.max_samples = j.value("max_samples", c.max_samples);
    if (j.contains("reasoning_mode")) {
      c.reasoning_mode = reasoning_mode_from_string(j.at("reasoning_mode").get<std::string>());
    }
    c.reasoning_token_budget = j.value("reasoning_token_budget", c.reasoning_token_budget);
    c.reasoning_paths = j.value("reasoning_paths", c.reasoning_paths);
    if (j.contains("system_prompt") && !j.at("system_prompt").is_null()) {
      c.system_prompt = j.at("system_prompt").get<std::string>();
    }
    if (j.contains("persona_role")) {
      c.persona_role = persona_role_from_string(j.at("persona_role").get<std::string>());
    }
    c.request_timeout = std::chrono::milliseconds(j.value("request_timeout_ms", c.request_timeout.count()));
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.max_retries = r.value("max_retries", c.retry.max_retries);
      c.retry.initial_delay = std::chrono::milliseconds(r.value("initial_delay_ms", c.retry.initial_delay.count()));
      c.retry.backoff_factor = r.value("backoff_factor", c.retry.backoff_factor);
      c.retry.max_delay = std::chrono::milliseconds(r.value("max_delay_ms", c.retry.max_delay.count()));
    }
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.requests_per_second = j.value("requests_per_second", c.requests_per_second);
    c.max_parse_rejects = j.value("max_parse_rejects", c.max_parse_rejects);
    c.use_logprobs = j.value("use_logprobs", c.use_logprobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("backend: ") + e.what());
  }
  c.validate();
  return c;
}

LabelProbabilities AgentBackend::label_probabilities(const Request&) const {
  throw CapabilityError("backend '" + id() + "' does not expose option-label probabilities");
}

std::string reasoning_instruction(int token_budget) {
  return "Think it through briefly (at most " + std::to_string(token_budget) +
         " tokens), then give your final choice on its own line as \"Answer: <label>\".";
}

std::optional<std::size_t> parse_label(std::string_view completion, LabelScheme scheme) {
  std::string_view s = completion;
  if (const std::size_t at = rfind_ci(s, "answer:"); at != std::string::npos) {
    s.remove_prefix(at + 7);
  }
  s = trim_front(s);
  if (consume_word(s, "answer")) {
    s = trim_front(s);
    if (!s.empty() && (s.front() == ':' || s.front() == '-')) s.remove_prefix(1);
    s = trim_front(s);
  }
  if (consume_word(s, "option")) s = trim_front(s);
  if (!s.empty() && (s.front() == '(' || s.front() == '[')) s.remove_prefix(1);

  std::size_t len = 0;
  while (len < s.size() && is_alnum(s[len])) ++len;
  if (len == 0) return std::nullopt;
  const std::string token = upper(s.substr(0, len));
  const auto& labels = labels_for(scheme);
  for (std::size_t i = 0; i < kOptionCount; ++i) {
    if (labels[i] == token) return i;
  }
  return std::nullopt;
}

Request make_item_request(const AgentBackend& agent, const PresentedPrompt& prompt, Seed seed) {
  const BackendConfig& cfg = agent.config();
  Request r;
  r.prompt = &prompt;
  r.system_prompt = cfg.system_prompt;
  r.reasoning = cfg.reasoning_mode == ReasoningMode::Reasoning;
  r.user_text = prompt.full_text;
  if (r.reasoning) r.user_text += "\n" + reasoning_instruction(cfg.reasoning_token_budget);
  r.temperature = cfg.temperature;
  r.max_tokens = r.reasoning ? cfg.reasoning_token_budget + 16 : 16;
  r.seed = seed;
  return r;
}

Option sample_choice(const AgentBackend& agent, const PresentedPrompt& prompt, Seed seed) {
  const std::string text = agent.generate(make_item_request(agent, prompt, seed));
  const auto position = parse_label(text, prompt.permutation.scheme());
  if (!position) {
    std::string shown = text.substr(0, 80);
    throw ParseError("no option label in completion: \"" + shown + (text.size() > 80 ? "...\"" : "\""));
  }
  return prompt.permutation.canonical_at(*position);
}

VariantResponse score_options(const AgentBackend& agent, const PresentedPrompt& prompt, Seed seed) {
  const BackendConfig& cfg = agent.config();
  const bool reasoning = cfg.reasoning_mode == ReasoningMode::Reasoning;

  VariantResponse response;
  response.variant_index = prompt.variant.index;
  response.permutation_used = prompt.permutation;

  if (agent.capabilities().exact_probs && !reasoning) {
    const LabelProbabilities lp = agent.label_probabilities(make_item_request(agent, prompt, seed));
    // Move mass to canonical order before normalizing, so the arithmetic is
    // identical under every presentation permutation.
    std::array<double, kOptionCount> canonical{};
    for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
      const double m = lp.by_position[pos];
      if (!std::isfinite(m) || m < 0.0) throw BackendError("backend returned an invalid label probability");
      canonical[index_of(prompt.permutation.canonical_at(pos))] = m;
    }
    double total = 0.0;
    for (double m : canonical) total += m;
    if (total <= 0.0) throw BackendError("backend put no probability mass on any option label");
    response.distribution = OptionDistribution::normalized(canonical);
    response.source = ResponseSource::ExactProbs;
    response.valid_mass = lp.valid_mass;
    return response;
  }

  const std::size_t wanted = static_cast<std::size_t>(reasoning ? cfg.reasoning_paths : cfg.max_samples);
  std::vector<Option> choices;
  choices.reserve(wanted);
  std::uint64_t attempt = 0;
  while (choices.size() < wanted) {
    const Seed s = derive_seed(seed, "sample", attempt++);
    const std::string text = agent.generate(make_item_request(agent, prompt, s));
    const auto position = parse_label(text, prompt.permutation.scheme());
    if (!position) {
      if (++response.parse_rejects > static_cast<std::size_t>(cfg.max_parse_rejects)) {
        throw ParseError("variant " + std::to_string(prompt.variant.index) + ": more than " +
                         std::to_string(cfg.max_parse_rejects) + " unparseable completions");
      }
      continue;
    }
    choices.push_back(prompt.permutation.canonical_at(*position));
  }
  response.distribution = estimate_from_samples(choices);
  response.source = ResponseSource::Frequencies;
  response.sample_count = choices.size();
  response.valid_mass = 1.0;
  return response;
}

}  // namespace cobra
