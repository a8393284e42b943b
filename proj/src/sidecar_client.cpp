#include "cobra/sidecar_client.hpp"

#include <cstdlib>

#include "cobra/error.hpp"

namespace cobra {

namespace {

template <typename T>
T field(const nlohmann::json& reply, const char* key, const char* endpoint) {
  try {
    return reply.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw BackendError(std::string("malformed sidecar reply from ") + endpoint + ": missing or invalid '" + key + "'");
  }
}

bool is_task(const std::optional<SteeringDirective>& s) {
  return s && s->kind == ControlKind::TaskVectorFinetune;
}

}  // namespace

nlohmann::json to_json(const TaskVectorHyperparams& h) {
  return {{"rank", h.rank},
          {"alpha", h.alpha},
          {"dropout", h.dropout},
          {"learning_rate", h.learning_rate},
          {"batch_size", h.batch_size},
          {"gradient_accumulation_steps", h.gradient_accumulation_steps},
          {"max_steps", h.max_steps},
          {"warmup_ratio", h.warmup_ratio},
          {"target_modules", h.target_modules}};
}

std::string sidecar_method(const std::optional<SteeringDirective>& steering) {
  if (!steering) return "none";
  switch (steering->kind) {
    case ControlKind::RepeLinear: return "linear";
    case ControlKind::RepeProjection: return "projection";
    case ControlKind::TaskVectorFinetune: return "task_vector";
    case ControlKind::PromptNumerical: break;
  }
  throw CapabilityError("prompt-numerical control is not a sidecar steering method");
}

SidecarClient::SidecarClient(BackendConfig config, std::string base_url)
    : config_(std::move(config)),
      base_url_(std::move(base_url)),
      client_(base_url_, HttpClientOptions{config_.request_timeout, config_.retry, config_.max_in_flight,
                                           config_.requests_per_second, {}}) {}

nlohmann::json SidecarClient::steered_body(const Request& request) const {
  const WireTurns turns = wire_turns(config_.persona_role, request);
  nlohmann::json body{{"prompt", turns.user},
                      {"method", sidecar_method(request.steering)},
                      {"lambda", request.steering ? request.steering->coefficient : 0.0},
                      {"seed", request.seed}};
  body["system_prompt"] = turns.system ? nlohmann::json(*turns.system) : nlohmann::json(nullptr);
  if (request.steering) body[is_task(request.steering) ? "task_id" : "vector_id"] = request.steering->handle;
  return body;
}

LabelProbabilities SidecarClient::label_probabilities(const Request& request) const {
  if (!request.prompt) throw ValidationError("label probabilities require a presented Likert item");
  nlohmann::json body = steered_body(request);
  body["options"] = request.prompt->labels;

  nlohmann::json reply;
  if (is_task(request.steering)) {
    std::lock_guard lock(task_mutex_);
    apply_task(request.steering->handle, request.steering->coefficient);
    reply = client_.post("/score", body);
  } else {
    reply = client_.post("/score", body);
  }
  const auto probs = field<std::vector<double>>(reply, "probs", "/score");
  if (probs.size() != kOptionCount) {
    throw BackendError("malformed sidecar reply from /score: expected 5 probabilities, got " +
                       std::to_string(probs.size()));
  }
  LabelProbabilities out;
  std::copy(probs.begin(), probs.end(), out.by_position.begin());
  out.valid_mass = field<double>(reply, "valid_mass", "/score");
  return out;
}

std::string SidecarClient::generate(const Request& request) const {
  nlohmann::json body = steered_body(request);
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  nlohmann::json reply;
  if (is_task(request.steering)) {
    std::lock_guard lock(task_mutex_);
    apply_task(request.steering->handle, request.steering->coefficient);
    reply = client_.post("/generate", body);
  } else {
    reply = client_.post("/generate", body);
  }
  return field<std::string>(reply, "text", "/generate");
}

nlohmann::json SidecarClient::health() const {
  try {
    return client_.get_once("/health");
  } catch (const BackendError& e) {
    throw TransportError("steering sidecar at " + base_url_ + " is not reachable (GET /health: " + e.what() +
                         "); start the sidecar or point " + kSidecarUrlEnv + " at it");
  }
}

ExtractResult SidecarClient::extract(const nlohmann::json& bias_spec, const std::string& corpus_ref) const {
  const nlohmann::json reply = client_.post("/extract", {{"bias_spec", bias_spec}, {"corpus_ref", corpus_ref}});
  return {field<std::string>(reply, "vector_id", "/extract"), field<std::vector<int>>(reply, "layers", "/extract"),
          field<double>(reply, "explained_variance", "/extract")};
}

StabilityRange SidecarClient::stability(const std::string& vector_id) const {
  const nlohmann::json reply = client_.post("/stability", {{"vector_id", vector_id}});
  StabilityRange r{field<double>(reply, "lambda_min", "/stability"), field<double>(reply, "lambda_max", "/stability")};
  if (!(r.lambda_min <= r.lambda_max)) throw BackendError("sidecar returned an empty stability range");
  return r;
}

std::string SidecarClient::train_task(const nlohmann::json& bias_spec, const std::string& corpus_ref,
                                      const TaskVectorHyperparams& hyperparams) const {
  const nlohmann::json reply = client_.post(
      "/task/train", {{"bias_spec", bias_spec}, {"corpus_ref", corpus_ref}, {"hyperparams", to_json(hyperparams)}});
  return field<std::string>(reply, "task_id", "/task/train");
}

void SidecarClient::apply_task(const std::string& task_id, double lambda) const {
  client_.post("/task/apply", {{"task_id", task_id}, {"lambda", lambda}});
}

std::shared_ptr<const SidecarClient> make_sidecar_client(BackendConfig config) {
  config.validate();
  std::string url = config.endpoint;
  if (url.rfind("http://", 0) != 0 && url.rfind("https://", 0) != 0) {
    const char* env = std::getenv(kSidecarUrlEnv);
    url = env && *env ? env : kDefaultSidecarUrl;
  }
  auto client = std::make_shared<const SidecarClient>(std::move(config), url);
  client->health();
  return client;
}

}  // namespace cobra
