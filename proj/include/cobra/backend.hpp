#pragma once

// Uniform agent interface. A backend either exposes next-token probabilities
// of the five option labels (ExactProbs) or only free-form completions, in
// which case option distributions are estimated from sampled choices.

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cobra/cbi.hpp"
#include "cobra/rng.hpp"
#include "cobra/testbed.hpp"

namespace cobra {

enum class ReasoningMode { Direct, Reasoning };

std::string_view to_string(ReasoningMode mode);
ReasoningMode reasoning_mode_from_string(std::string_view s);

/// Where persona and control text is placed on the wire.
enum class PersonaRole { System, User };

std::string_view to_string(PersonaRole role);
PersonaRole persona_role_from_string(std::string_view s);

enum class ControlKind { PromptNumerical, RepeLinear, RepeProjection, TaskVectorFinetune };

/// "prompt_numerical", "repe_linear", "repe_projection", "task_vector".
std::string_view to_string(ControlKind kind);
ControlKind control_kind_from_string(std::string_view s);
bool is_steering(ControlKind kind);

struct RetryPolicy {
  int max_retries = 4;
  std::chrono::milliseconds initial_delay{500};
  double backoff_factor = 2.0;
  std::chrono::milliseconds max_delay{20000};

  std::chrono::milliseconds delay_for(int attempt) const;
};

struct BackendConfig {
  std::string id;                // label used in run records; defaults to model_name/endpoint
  std::string endpoint = "mock";  // "mock", "sidecar", "chat", or a base URL
  std::string model_name;
  double temperature = 0.7;
  int max_samples = 10;
  ReasoningMode reasoning_mode = ReasoningMode::Direct;
  int reasoning_token_budget = 128;
  int reasoning_paths = 8;
  std::optional<std::string> system_prompt;
  PersonaRole persona_role = PersonaRole::System;
  std::chrono::milliseconds request_timeout{60000};
  RetryPolicy retry;
  int max_in_flight = 8;
  double requests_per_second = 0.0;  // 0 = unlimited
  int max_parse_rejects = 20;        // per variant, before the variant is dropped
  bool use_logprobs = false;         // chat APIs that return top_logprobs

  /// Throws ConfigurationError.
  void validate() const;
  std::string display_id() const;
};

nlohmann::json to_json(const BackendConfig& config);
BackendConfig backend_config_from_json(const nlohmann::json& j);

struct Capabilities {
  bool exact_probs = false;
  bool supports_system_prompt = false;
  bool supports_steering = false;
};

struct SteeringDirective {
  ControlKind kind = ControlKind::RepeLinear;
  double coefficient = 0.0;
  std::string handle;  // bias-vector or task-vector id
};

struct Request {
  std::string user_text;
  std::optional<std::string> system_prompt;
  std::optional<SteeringDirective> steering;
  /// Set when the request scores a Likert item; null for free-form posts.
  const PresentedPrompt* prompt = nullptr;
  bool reasoning = false;
  double temperature = 0.7;
  int max_tokens = 16;
  Seed seed = 0;
};

struct WireTurns {
  std::optional<std::string> system;
  std::string user;
};

/// Splits a request into the turns sent on the wire. With PersonaRole::User
/// the system text is prepended to the user turn instead.
WireTurns wire_turns(PersonaRole role, const Request& request);

/// Raw label probabilities in presented order, before renormalization.
struct LabelProbabilities {
  std::array<double, kOptionCount> by_position{};
  double valid_mass = 0.0;
};

struct BackendStats {
  std::size_t requests = 0;
  std::size_t retries = 0;
  std::size_t failures = 0;
};

/// Lock-free counters shared by concurrent requests.
class StatsCounter {
 public:
  void request() { requests_.fetch_add(1, std::memory_order_relaxed); }
  void retry() { retries_.fetch_add(1, std::memory_order_relaxed); }
  void failure() { failures_.fetch_add(1, std::memory_order_relaxed); }
  BackendStats snapshot() const {
    return {requests_.load(std::memory_order_relaxed), retries_.load(std::memory_order_relaxed),
            failures_.load(std::memory_order_relaxed)};
  }

 private:
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> retries_{0};
  std::atomic<std::size_t> failures_{0};
};

/// Implementations must be safe for concurrent calls.
class AgentBackend {
 public:
  virtual ~AgentBackend() = default;

  virtual std::string id() const = 0;
  virtual Capabilities capabilities() const = 0;
  virtual const BackendConfig& config() const = 0;

  /// ExactProbs path. The default throws CapabilityError.
  virtual LabelProbabilities label_probabilities(const Request& request) const;

  /// One completion.
  virtual std::string generate(const Request& request) const = 0;

  virtual BackendStats stats() const { return {}; }

  /// Upper bound on concurrent requests (caps the measurement fan-out).
  virtual int max_concurrency() const { return config().max_in_flight; }
};

using AgentPtr = std::shared_ptr<const AgentBackend>;

/// Instruction appended to the item in Reasoning mode.
std::string reasoning_instruction(int token_budget);

/// Presented position (0..4) of the first label in `completion`. Accepts a
/// leading label optionally wrapped or punctuated ("A", "A.", "(a)", "A:",
/// "[A]", "Answer: A", "Option A"). When the text contains "Answer:", the
/// label after the last occurrence is used.
std::optional<std::size_t> parse_label(std::string_view completion, LabelScheme scheme);

/// The request score_options issues for `prompt` (system prompt from config).
Request make_item_request(const AgentBackend& agent, const PresentedPrompt& prompt, Seed seed);

/// One sampled generation parsed to a canonical option. Throws ParseError.
Option sample_choice(const AgentBackend& agent, const PresentedPrompt& prompt, Seed seed);

/// ExactProbs when the backend supports it (and reasoning is off), otherwise
/// max_samples (reasoning_paths in Reasoning mode) parsed generations.
/// Unparseable generations are resampled; more than max_parse_rejects per
/// variant raises ParseError. The result is in canonical option order.
VariantResponse score_options(const AgentBackend& agent, const PresentedPrompt& prompt, Seed seed);

}  // namespace cobra
