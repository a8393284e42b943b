#include "cobra/mock.hpp"

#include <algorithm>
#include <initializer_list>
#include <cmath>
#include <sstream>

#include "cobra/error.hpp"
#include "cobra/sentiment.hpp"

namespace cobra {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

void check_level(double v, const std::string& what) {
  if (!(v >= 0.0 && v <= 4.0)) throw ValidationError(what + " must lie in [0, 4], got " + std::to_string(v));
}

std::string_view shape_name(ResponseCurve::Shape s) {
  switch (s) {
    case ResponseCurve::Shape::Logistic: return "logistic";
    case ResponseCurve::Shape::Linear: return "linear";
    case ResponseCurve::Shape::Constant: return "constant";
  }
  return "unknown";
}

// Parses the integer in "at level L%", if present.
std::optional<int> stated_level(std::string_view text) {
  constexpr std::string_view kMarker = "at level ";
  std::size_t at = text.find(kMarker);
  while (at != std::string_view::npos) {
    std::size_t i = at + kMarker.size();
    int value = 0;
    std::size_t digits = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])) && digits < 4) {
      value = value * 10 + (text[i] - '0');
      ++i;
      ++digits;
    }
    if (digits > 0 && i < text.size() && text[i] == '%') return value;
    at = text.find(kMarker, at + 1);
  }
  return std::nullopt;
}

}  // namespace

ResponseCurve ResponseCurve::logistic(double lo, double hi, double slope, double midpoint) {
  return {Shape::Logistic, lo, hi, slope, midpoint};
}

ResponseCurve ResponseCurve::linear(double lo, double hi) { return {Shape::Linear, lo, hi, 0.0, 0.0}; }

ResponseCurve ResponseCurve::constant(double value) { return {Shape::Constant, value, value, 0.0, 0.0}; }

double ResponseCurve::operator()(double coefficient) const {
  switch (shape) {
    case Shape::Logistic:
      return lo + (hi - lo) / (1.0 + std::exp(-slope * (coefficient - midpoint)));
    case Shape::Linear:
      return std::clamp(lo + (hi - lo) * coefficient, 0.0, 4.0);
    case Shape::Constant:
      return lo;
  }
  return lo;
}

std::optional<double> ResponseCurve::inverse(double level) const {
  if (!(hi > lo) || !(level > lo && level < hi)) return std::nullopt;
  switch (shape) {
    case Shape::Logistic: {
      if (!(slope > 0.0)) return std::nullopt;
      const double s = (level - lo) / (hi - lo);
      return midpoint + std::log(s / (1.0 - s)) / slope;
    }
    case Shape::Linear:
      if (level < 0.0 || level > 4.0) return std::nullopt;
      return (level - lo) / (hi - lo);
    case Shape::Constant:
      return std::nullopt;
  }
  return std::nullopt;
}

void ResponseCurve::validate() const {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !std::isfinite(slope) || !std::isfinite(midpoint)) {
    throw ValidationError("response curve parameters must be finite");
  }
  if (hi < lo) throw ValidationError("response curve must be non-decreasing (hi >= lo)");
  switch (shape) {
    case Shape::Logistic:
      if (slope < 0.0) throw ValidationError("logistic response slope must be >= 0");
      check_level(lo, "logistic response lo");
      check_level(hi, "logistic response hi");
      break;
    case Shape::Linear:
      break;
    case Shape::Constant:
      check_level(lo, "constant response value");
      break;
  }
}

void MockAgentSpec::validate() const {
  check_level(base_bias, "mock base_bias");
  response.validate();
  for (const auto& [id, curve] : paradigm_responses) curve.validate();
  for (const auto& [id, b] : paradigm_base_bias) check_level(b, "mock paradigm_base_bias[" + id + "]");
  if (nl_control_bias) check_level(*nl_control_bias, "mock nl_control_bias");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ValidationError("mock noise must lie in [0, 1]");
  if (!(parse_failure_rate >= 0.0 && parse_failure_rate < 1.0)) {
    throw ValidationError("mock parse_failure_rate must lie in [0, 1)");
  }
  if (!std::isfinite(contagion_kappa)) throw ValidationError("mock contagion kappa must be finite");
  if (!(contagion_baseline >= -1.0 && contagion_baseline <= 1.0)) {
    throw ValidationError("mock contagion baseline must lie in [-1, 1]");
  }
  if (post_words < 1) throw ValidationError("mock post_words must be >= 1");
}

nlohmann::json to_json(const ResponseCurve& c) {
  nlohmann::json j{{"shape", shape_name(c.shape)}};
  if (c.shape == ResponseCurve::Shape::Constant) {
    j["value"] = c.lo;
  } else {
    j["lo"] = c.lo;
    j["hi"] = c.hi;
  }
  if (c.shape == ResponseCurve::Shape::Logistic) {
    j["slope"] = c.slope;
    j["midpoint"] = c.midpoint;
  }
  return j;
}

ResponseCurve response_curve_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"shape", "lo", "hi", "slope", "midpoint", "value"}, "response");
  try {
    const std::string shape = j.at("shape").get<std::string>();
    if (shape == "logistic") {
      return ResponseCurve::logistic(j.value("lo", 0.0), j.value("hi", 4.0), j.value("slope", 10.0),
                                     j.value("midpoint", 0.5));
    }
    if (shape == "linear") return ResponseCurve::linear(j.value("lo", 0.0), j.value("hi", 4.0));
    if (shape == "constant") return ResponseCurve::constant(j.at("value").get<double>());
    throw ValidationError("response.shape: unknown shape '" + shape + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("response curve: ") + e.what());
  }
}

nlohmann::json to_json(const MockAgentSpec& s) {
  nlohmann::json j{{"name", s.name},
                   {"base_bias", s.base_bias},
                   {"response", to_json(s.response)},
                   {"noise", s.noise},
                   {"exact_probs", s.exact_probs},
                   {"parse_failure_rate", s.parse_failure_rate},
                   {"contagion",
                    {{"kappa", s.contagion_kappa},
                     {"baseline", s.contagion_baseline},
                     {"post_words", s.post_words}}}};
  j["paradigm_responses"] = nlohmann::json::object();
  for (const auto& [id, c] : s.paradigm_responses) j["paradigm_responses"][id] = to_json(c);
  j["paradigm_base_bias"] = s.paradigm_base_bias;
  j["nl_control_bias"] = s.nl_control_bias ? nlohmann::json(*s.nl_control_bias) : nlohmann::json(nullptr);
  return j;
}

MockAgentSpec mock_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("mock: expected an object");
  reject_unknown(j,
                 {"name", "base_bias", "response", "paradigm_responses", "paradigm_base_bias", "nl_control_bias",
                  "noise", "exact_probs", "parse_failure_rate", "contagion"},
                 "mock");
  if (j.contains("contagion")) reject_unknown(j.at("contagion"), {"kappa", "baseline", "post_words"}, "mock.contagion");
  MockAgentSpec s;
  try {
    s.name = j.value("name", s.name);
    s.base_bias = j.value("base_bias", s.base_bias);
    if (j.contains("response")) s.response = response_curve_from_json(j.at("response"));
    if (j.contains("paradigm_responses")) {
      for (const auto& [id, c] : j.at("paradigm_responses").items()) {
        s.paradigm_responses[id] = response_curve_from_json(c);
      }
    }
    if (j.contains("paradigm_base_bias")) {
      s.paradigm_base_bias = j.at("paradigm_base_bias").get<std::map<std::string, double>>();
    }
    if (j.contains("nl_control_bias") && !j.at("nl_control_bias").is_null()) {
      s.nl_control_bias = j.at("nl_control_bias").get<double>();
    }
    s.noise = j.value("noise", s.noise);
    s.exact_probs = j.value("exact_probs", s.exact_probs);
    s.parse_failure_rate = j.value("parse_failure_rate", s.parse_failure_rate);
    if (j.contains("contagion")) {
      const auto& c = j.at("contagion");
      s.contagion_kappa = c.value("kappa", s.contagion_kappa);
      s.contagion_baseline = c.value("baseline", s.contagion_baseline);
      s.post_words = c.value("post_words", s.post_words);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("mock: ") + e.what());
  }
  s.validate();
  return s;
}

OptionDistribution mock_distribution(double bias, double noise) {
  const double b = std::clamp(bias, 0.0, 4.0);
  std::array<double, kOptionCount> p{};

  // Two-point component: weights floor(b) and floor(b) + 1. Option O_j has
  // weight 4 - j (0-based), so weight w sits at canonical index 4 - w.
  const double f = std::floor(b);
  const double frac = b - f;
  const auto w = static_cast<std::size_t>(f);
  p[4 - w] += (1.0 - noise) * (1.0 - frac);
  if (frac > 0.0) p[3 - w] += (1.0 - noise) * frac;

  if (noise > 0.0) {
    const double q = b / 4.0;
    constexpr std::array<double, 5> kChoose{1, 4, 6, 4, 1};
    for (std::size_t k = 0; k <= 4; ++k) {
      p[4 - k] += noise * kChoose[k] * std::pow(q, static_cast<double>(k)) *
                  std::pow(1.0 - q, static_cast<double>(4 - k));
    }
  }
  return OptionDistribution::normalized(p);
}

MockAgent::MockAgent(MockAgentSpec spec, BackendConfig config) : spec_(std::move(spec)), config_(std::move(config)) {
  spec_.validate();
  config_.validate();
}

double MockAgent::effective_bias(const Request& request) const {
  const std::string* paradigm = request.prompt ? &request.prompt->variant.paradigm_id : nullptr;
  auto curve = [&]() -> const ResponseCurve& {
    if (paradigm) {
      if (auto it = spec_.paradigm_responses.find(*paradigm); it != spec_.paradigm_responses.end()) {
        return it->second;
      }
    }
    return spec_.response;
  };
  if (request.steering) return curve()(request.steering->coefficient);
  if (request.system_prompt && !request.system_prompt->empty()) {
    if (auto level = stated_level(*request.system_prompt)) return curve()(*level / 100.0);
    if (spec_.nl_control_bias) return *spec_.nl_control_bias;
  }
  if (paradigm) {
    if (auto it = spec_.paradigm_base_bias.find(*paradigm); it != spec_.paradigm_base_bias.end()) {
      return it->second;
    }
  }
  return spec_.base_bias;
}

LabelProbabilities MockAgent::label_probabilities(const Request& request) const {
  stats_.request();
  if (!spec_.exact_probs) {
    throw CapabilityError("mock '" + spec_.name + "' is configured without option-label probabilities");
  }
  if (!request.prompt) throw ValidationError("label probabilities require a presented Likert item");
  const OptionDistribution d = mock_distribution(effective_bias(request), spec_.noise);
  return {permute(d, request.prompt->permutation), 1.0};
}

std::string MockAgent::generate(const Request& request) const {
  stats_.request();
  return request.prompt ? generate_item(request) : generate_post(request);
}

std::string MockAgent::generate_item(const Request& request) const {
  Rng rng(request.seed);
  if (spec_.parse_failure_rate > 0.0 && rng.uniform() < spec_.parse_failure_rate) {
    return "I would rather not choose between these.";
  }
  const PresentedPrompt& prompt = *request.prompt;
  const OptionDistribution d = mock_distribution(effective_bias(request), spec_.noise);
  const Option chosen = option_at(rng.categorical(d.probs()));
  const std::string& label = prompt.labels[prompt.permutation.position_of(chosen)];
  if (request.reasoning) return "Weighing the situation briefly before deciding.\nAnswer: " + label;
  return label + ". " + prompt.variant.options.text(chosen);
}

int MockAgent::negative_dose(std::string_view feed_prompt) {
  int dose = 0;
  std::size_t start = 0;
  while (start <= feed_prompt.size()) {
    std::size_t end = feed_prompt.find('\n', start);
    if (end == std::string_view::npos) end = feed_prompt.size();
    const std::string_view line = feed_prompt.substr(start, end - start);
    if (line.rfind("Post ", 0) == 0) {
      if (const std::size_t colon = line.find(':'); colon != std::string_view::npos) {
        if (lexicon_score(line.substr(colon + 1)).valence() < 0.0) ++dose;
      }
    }
    start = end + 1;
  }
  return dose;
}

std::string MockAgent::generate_post(const Request& request) const {
  const double bias = effective_bias(request);
  const int dose = negative_dose(request.user_text);
  const double v = std::clamp(spec_.contagion_baseline - spec_.contagion_kappa * bias * dose, -1.0, 1.0);
  const double p_positive = (1.0 + v) / 2.0;

  const auto pos = LexiconScorer::positive_words();
  const auto neg = LexiconScorer::negative_words();
  Rng rng(request.seed);
  std::ostringstream out;
  for (int i = 0; i < spec_.post_words; ++i) {
    if (i > 0) out << ' ';
    if (rng.uniform() < p_positive) out << pos[rng.below(pos.size())];
    else out << neg[rng.below(neg.size())];
  }
  out << '.';
  return out.str();
}

BackendConfig mock_config(std::string id) {
  BackendConfig c;
  c.id = std::move(id);
  c.endpoint = "mock";
  c.model_name = "mock";
  return c;
}

std::shared_ptr<const MockAgent> make_mock(MockAgentSpec spec) {
  BackendConfig c = mock_config(spec.name);
  return make_mock(std::move(spec), std::move(c));
}

std::shared_ptr<const MockAgent> make_mock(MockAgentSpec spec, BackendConfig config) {
  return std::make_shared<const MockAgent>(std::move(spec), std::move(config));
}

}  // namespace cobra
