#pragma once

// Client for the steering sidecar, the local service that owns an open-weight
// model and applies activation-space or parameter-space control.
//
//   GET  /health
//   POST /extract     {bias_spec, corpus_ref}               -> {vector_id, layers, explained_variance}
//   POST /stability   {vector_id}                           -> {lambda_min, lambda_max}
//   POST /score       {prompt, system_prompt, options[5], method, lambda,
//                      vector_id | task_id, seed}           -> {probs[5], valid_mass}
//   POST /generate    {prompt, system_prompt, method, lambda, vector_id | task_id,
//                      temperature, max_tokens, seed}       -> {text}
//   POST /task/train  {bias_spec, corpus_ref, hyperparams}  -> {task_id}
//   POST /task/apply  {task_id, lambda}
//
// Every reply also carries model_name and seed.

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/backend.hpp"
#include "cobra/http_client.hpp"

namespace cobra {

inline constexpr const char* kSidecarUrlEnv = "COBRA_SIDECAR_URL";
inline constexpr const char* kDefaultSidecarUrl = "http://127.0.0.1:8765";

struct StabilityRange {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

struct ExtractResult {
  std::string vector_id;
  std::vector<int> layers;
  double explained_variance = 0.0;
};

/// Adapter fine-tuning defaults for task vectors.
struct TaskVectorHyperparams {
  int rank = 8;
  int alpha = 16;
  double dropout = 0.05;
  double learning_rate = 2e-4;
  int batch_size = 4;
  int gradient_accumulation_steps = 4;
  int max_steps = 200;
  double warmup_ratio = 0.05;
  std::vector<std::string> target_modules{"q_proj", "k_proj", "v_proj", "o_proj"};
};

nlohmann::json to_json(const TaskVectorHyperparams& h);

/// Wire name of a control kind on /score: "none", "linear", "projection", "task_vector".
std::string sidecar_method(const std::optional<SteeringDirective>& steering);

class SidecarClient final : public AgentBackend {
 public:
  SidecarClient(BackendConfig config, std::string base_url);

  std::string id() const override { return config_.display_id(); }
  Capabilities capabilities() const override { return {true, true, true}; }
  const BackendConfig& config() const override { return config_; }
  LabelProbabilities label_probabilities(const Request& request) const override;
  std::string generate(const Request& request) const override;
  BackendStats stats() const override { return client_.stats(); }

  /// Throws TransportError with a connectivity hint when the sidecar is down.
  nlohmann::json health() const;
  ExtractResult extract(const nlohmann::json& bias_spec, const std::string& corpus_ref) const;
  StabilityRange stability(const std::string& vector_id) const;
  std::string train_task(const nlohmann::json& bias_spec, const std::string& corpus_ref,
                         const TaskVectorHyperparams& hyperparams = {}) const;
  void apply_task(const std::string& task_id, double lambda) const;

  const std::string& base_url() const { return base_url_; }

 private:
  nlohmann::json steered_body(const Request& request) const;

  BackendConfig config_;
  std::string base_url_;
  JsonHttpClient client_;
  // Task-vector requests patch model weights: apply + score run as one unit.
  mutable std::mutex task_mutex_;
};

/// Resolves the URL (endpoint URL, else COBRA_SIDECAR_URL, else the local
/// default) and probes /health.
std::shared_ptr<const SidecarClient> make_sidecar_client(BackendConfig config);

}  // namespace cobra
