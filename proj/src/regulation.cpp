#include "cobra/regulation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cobra/error.hpp"
#include "cobra/io.hpp"

namespace cobra {

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

double snap(double v) { return std::round(v * 1e12) / 1e12; }

std::string require_text(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + "." + key + ": missing");
  if (!j.at(key).is_string()) throw ValidationError(where + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

}  // namespace

// --- bias specifications -------------------------------------------------------

void BiasSpec::validate() const {
  const std::pair<const char*, const std::string*> fields[] = {{"bias_type", &bias},
                                                               {"name", &name},
                                                               {"no_pattern", &no_pattern},
                                                               {"max_pattern", &max_pattern},
                                                               {"anti_pattern", &anti_pattern}};
  for (const auto& [key, value] : fields) {
    if (value->empty()) throw ValidationError(std::string("bias spec ") + key + " must not be empty");
  }
}

nlohmann::json to_json(const BiasSpec& s) {
  return {{"bias_type", s.bias},
          {"name", s.name},
          {"no_pattern", s.no_pattern},
          {"max_pattern", s.max_pattern},
          {"anti_pattern", s.anti_pattern}};
}

BiasSpec bias_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("bias spec: expected an object");
  BiasSpec s{require_text(j, "bias_type", "bias_spec"), require_text(j, "name", "bias_spec"),
             require_text(j, "no_pattern", "bias_spec"), require_text(j, "max_pattern", "bias_spec"),
             require_text(j, "anti_pattern", "bias_spec")};
  s.validate();
  return s;
}

std::vector<BiasSpec> load_bias_specs(const nlohmann::json& document) {
  std::vector<BiasSpec> out;
  if (document.is_object() && document.contains("bias_specs")) {
    if (document.value("schema_version", 1) != 1) throw ValidationError("bias specs: unsupported schema_version");
    for (const auto& entry : document.at("bias_specs")) out.push_back(bias_spec_from_json(entry));
  } else {
    out.push_back(bias_spec_from_json(document));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (out[i].bias == out[k].bias) throw ValidationError("bias specs: duplicate bias_type " + out[i].bias);
    }
  }
  return out;
}

std::vector<BiasSpec> load_bias_specs_file(const std::filesystem::path& path) {
  return load_bias_specs(read_json_file(path, "bias spec document"));
}

std::vector<BiasSpec> load_bundled_bias_specs() { return load_bias_specs_file(data_dir() / "bias_specs.json"); }

BiasSpec bundled_bias_spec(std::string_view bias) {
  for (auto& s : load_bundled_bias_specs()) {
    if (s.bias == bias) return s;
  }
  throw ValidationError("no bias spec for bias type '" + std::string(bias) + "'");
}

// --- control methods -------------------------------------------------------------

bool CoefficientDomain::contains(double c) const {
  constexpr double kSlack = 1e-12;
  return std::isfinite(c) && c >= lo - kSlack && c <= hi + kSlack;
}

double CoefficientDomain::quantize(double c) const {
  double v = std::clamp(c, lo, hi);
  if (step && *step > 0.0) v = std::clamp(snap(lo + *step * std::round((v - lo) / *step)), lo, hi);
  return v;
}

ControlMethod ControlMethod::prompt_numerical() {
  return {ControlKind::PromptNumerical, CoefficientDomain{0.0, 1.0, 0.05}, ""};
}

ControlMethod ControlMethod::steering(ControlKind kind, const StabilityRange& range, std::string handle) {
  if (!is_steering(kind)) throw ValidationError("prompt_numerical is not a steering method");
  if (!(range.lambda_min < range.lambda_max)) {
    throw ValidationError("stability range must satisfy lambda_min < lambda_max");
  }
  return {kind, CoefficientDomain{range.lambda_min, range.lambda_max, std::nullopt}, std::move(handle)};
}

void ControlMethod::check_coefficient(double c) const {
  if (!domain.contains(c)) {
    throw DomainError("coefficient " + fmt(c) + " outside the " + std::string(to_string(kind)) + " domain [" +
                      fmt(domain.lo) + ", " + fmt(domain.hi) + "]");
  }
}

nlohmann::json to_json(const ControlMethod& m) {
  nlohmann::json j{{"kind", to_string(m.kind)}, {"domain", {m.domain.lo, m.domain.hi}}, {"handle", m.handle}};
  j["step"] = m.domain.step ? nlohmann::json(*m.domain.step) : nlohmann::json(nullptr);
  return j;
}

int prompt_numerical_level(double coefficient) {
  if (!(coefficient >= 0.0 && coefficient <= 1.0)) {
    throw DomainError("coefficient " + fmt(coefficient) + " outside the prompt_numerical domain [0, 1]");
  }
  return 5 * static_cast<int>(std::lround(coefficient * 20.0));
}

std::string prompt_numerical_text(const BiasSpec& spec, double coefficient) {
  const std::string level = std::to_string(prompt_numerical_level(coefficient));
  return "Pretend you have " + spec.name + " at level " + level + "%\n(where 0% = " + spec.no_pattern +
         ", 100% = " + spec.max_pattern + "). Each level increases bias by exactly 5%. Respond\nwith this precise level " +
         level + "%.";
}

std::string natural_language_control_text(const BiasSpec& spec) {
  return "Pretend you have completely " + spec.name + ".";
}

ControlledAgent::ControlledAgent(AgentPtr inner, std::optional<std::string> system_text,
                                 std::optional<SteeringDirective> steering)
    : inner_(std::move(inner)), system_text_(std::move(system_text)), steering_(std::move(steering)) {
  if (!inner_) throw ValidationError("cannot control a null agent");
}

Request ControlledAgent::decorate(const Request& request) const {
  Request r = request;
  if (system_text_) {
    r.system_prompt = (r.system_prompt && !r.system_prompt->empty()) ? *r.system_prompt + "\n\n" + *system_text_
                                                                      : *system_text_;
  }
  if (steering_) r.steering = steering_;
  return r;
}

LabelProbabilities ControlledAgent::label_probabilities(const Request& request) const {
  return inner_->label_probabilities(decorate(request));
}

std::string ControlledAgent::generate(const Request& request) const { return inner_->generate(decorate(request)); }

AgentPtr apply_control(AgentPtr agent, const ControlMethod& method, const BiasSpec& spec, double coefficient) {
  if (!agent) throw ValidationError("cannot control a null agent");
  const Capabilities caps = agent->capabilities();
  if (method.kind == ControlKind::PromptNumerical) {
    if (!caps.supports_system_prompt) {
      throw CapabilityError("prompt_numerical control needs system-prompt support; backend '" + agent->id() +
                            "' has none");
    }
    method.check_coefficient(coefficient);
    return std::make_shared<const ControlledAgent>(std::move(agent), prompt_numerical_text(spec, coefficient),
                                                   std::nullopt);
  }
  if (!caps.supports_steering) {
    throw CapabilityError(std::string(to_string(method.kind)) + " control needs a steering-capable backend; '" +
                          agent->id() + "' only accepts prompts");
  }
  method.check_coefficient(coefficient);
  return std::make_shared<const ControlledAgent>(std::move(agent), std::nullopt,
                                                 SteeringDirective{method.kind, coefficient, method.handle});
}

AgentPtr with_system_prompt(AgentPtr agent, std::string text) {
  if (!agent->capabilities().supports_system_prompt) {
    throw CapabilityError("backend '" + agent->id() + "' does not accept a system prompt");
  }
  return std::make_shared<const ControlledAgent>(std::move(agent), std::move(text), std::nullopt);
}

// --- measurement -------------------------------------------------------------------

Seed presentation_seed(Seed master, std::string_view paradigm_id, std::size_t variant_index) {
  return derive_seed(derive_seed(master, paradigm_id), "present", variant_index);
}

Seed scoring_seed(Seed master, std::string_view paradigm_id, std::size_t variant_index) {
  return derive_seed(derive_seed(master, paradigm_id), "score", variant_index);
}

CbiMeasurement measure(const AgentBackend& agent, const ParadigmSpec& paradigm, Seed seed,
                       const MeasureOptions& options) {
  const std::vector<PromptVariant> variants = expand_variants(paradigm);
  const std::size_t n = variants.size();
  std::vector<std::optional<VariantResponse>> slots(n);
  std::vector<std::string> problems(n);

  for_each_index(n, options.execution, agent.max_concurrency(), [&](std::size_t i) {
    const PresentedPrompt prompt = randomize_presentation(variants[i], presentation_seed(seed, paradigm.id, i));
    try {
      slots[i] = score_options(agent, prompt, scoring_seed(seed, paradigm.id, i));
    } catch (const AuthError&) {
      throw;
    } catch (const BackendError& e) {
      problems[i] = e.what();
    }
  });

  std::vector<VariantResponse> responses;
  responses.reserve(n);
  std::vector<std::size_t> dropped;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) responses.push_back(std::move(*slots[i]));
    else dropped.push_back(variants[i].index);
  }
  if (static_cast<double>(dropped.size()) > options.max_drop_fraction * static_cast<double>(n)) {
    const auto first = std::find_if(problems.begin(), problems.end(), [](const std::string& p) { return !p.empty(); });
    throw BackendError("measurement of " + paradigm.id + " failed: " + std::to_string(dropped.size()) + " of " +
                       std::to_string(n) + " variants unrecoverable (first error: " + *first + ")");
  }
  CbiMeasurement m = compute_cbi(paradigm.id, responses, responses.size());
  m.dropped_variants = std::move(dropped);
  return m;
}

// --- sweeps ------------------------------------------------------------------------

void ControlCurve::validate() const {
  if (points.size() < 2) throw ValidationError("a control curve needs at least 2 points");
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (!(points[i].coefficient > points[i - 1].coefficient)) {
      throw ValidationError("control curve coefficients must be strictly increasing");
    }
  }
}

std::vector<double> ControlCurve::coefficients() const {
  std::vector<double> out;
  for (const auto& p : points) out.push_back(p.coefficient);
  return out;
}

std::vector<double> ControlCurve::values() const {
  std::vector<double> out;
  for (const auto& p : points) out.push_back(p.cbi.value);
  return out;
}

std::vector<double> make_grid(double a, double b, double step) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(step > 0.0)) {
    throw ValidationError("grid needs finite bounds and a positive step");
  }
  if (!(b > a)) throw ValidationError("grid upper bound must exceed the lower bound");
  const double count = (b - a) / step;
  const auto n = static_cast<long long>(std::llround(count));
  if (std::abs(count - static_cast<double>(n)) > 1e-9 * std::max(1.0, std::abs(count))) {
    throw ValidationError("grid span " + fmt(b - a) + " is not a whole number of steps of " + fmt(step));
  }
  std::vector<double> grid;
  for (long long i = 0; i < n; ++i) grid.push_back(snap(a + static_cast<double>(i) * step));
  grid.push_back(b);
  return grid;
}

CbiMeasurement measure_controlled(const AgentPtr& agent, const ControlMethod& method, const BiasSpec& spec,
                                  const ParadigmSpec& paradigm, double coefficient, Seed seed,
                                  const MeasureOptions& options) {
  const AgentPtr controlled = apply_control(agent, method, spec, coefficient);
  return measure(*controlled, paradigm, seed, options);
}

ControlCurve sweep(const AgentPtr& agent, const ControlMethod& method, const BiasSpec& spec,
                   const ParadigmSpec& paradigm, const std::vector<double>& grid, Seed seed,
                   const MeasureOptions& options) {
  ControlCurve curve;
  curve.method = method.kind;
  curve.paradigm_id = paradigm.id;
  curve.backend_id = agent->id();
  for (double c : grid) curve.points.push_back({c, {}});
  curve.validate();
  for (double c : grid) method.check_coefficient(c);
  // Points run in order: steering methods may mutate model state on the sidecar.
  for (auto& p : curve.points) p.cbi = measure_controlled(agent, method, spec, paradigm, p.coefficient, seed, options);
  return curve;
}

// --- calibration -------------------------------------------------------------------

CalibrationResult calibrate(const AgentPtr& agent, const ControlMethod& method, const BiasSpec& spec,
                            const ParadigmSpec& paradigm, double target, Seed seed,
                            const CalibrationOptions& options) {
  if (!std::isfinite(target)) throw ValidationError("calibration target must be finite");
  if (!(options.tolerance > 0.0)) throw ValidationError("calibration tolerance must be > 0");
  if (options.budget < 3) throw ValidationError("calibration budget must be >= 3 evaluations");

  const bool exact =
      agent->capabilities().exact_probs && agent->config().reasoning_mode == ReasoningMode::Direct;
  const int search_budget = exact ? options.budget : options.budget - 1;

  CalibrationResult result;
  result.target = target;
  result.tolerance = options.tolerance;

  auto evaluate = [&](double coefficient) {
    const CbiMeasurement m = measure_controlled(agent, method, spec, paradigm, coefficient, seed, options.measure);
    result.trace.push_back({coefficient, m.value, m.standard_error});
    ++result.evaluations;
    return m.value;
  };
  auto within = [&](double cbi) { return std::abs(cbi - target) <= options.tolerance; };
  auto accept = [&](double coefficient, double cbi) {
    result.coefficient = coefficient;
    result.achieved = cbi;
    result.converged = true;
  };

  double lo = method.domain.quantize(method.domain.lo);
  double hi = method.domain.quantize(method.domain.hi);
  const double f_lo = evaluate(lo);
  if (within(f_lo)) {
    accept(lo, f_lo);
  } else {
    const double f_hi = evaluate(hi);
    if (within(f_hi)) {
      accept(hi, f_hi);
    } else if (target < std::min(f_lo, f_hi) || target > std::max(f_lo, f_hi)) {
      const bool low_end = std::abs(f_lo - target) <= std::abs(f_hi - target);
      result.coefficient = low_end ? lo : hi;
      result.achieved = low_end ? f_lo : f_hi;
      result.note = "target " + fmt(target) + " outside the reachable range [" + fmt(std::min(f_lo, f_hi)) + ", " +
                    fmt(std::max(f_lo, f_hi)) + "]; returned the nearest endpoint";
      return result;
    } else {
      const bool increasing = f_hi >= f_lo;
      while (result.evaluations < search_budget) {
        const double mid = method.domain.quantize(0.5 * (lo + hi));
        if (!(mid > lo && mid < hi)) {
          result.note = "coefficient resolution exhausted before reaching the tolerance";
          break;
        }
        const double f_mid = evaluate(mid);
        if (within(f_mid)) {
          accept(mid, f_mid);
          break;
        }
        if ((f_mid < target) == increasing) lo = mid;
        else hi = mid;
      }
      if (!result.converged) {
        const auto best = std::min_element(result.trace.begin(), result.trace.end(), [&](const auto& a, const auto& b) {
          return std::abs(a.cbi - target) < std::abs(b.cbi - target);
        });
        result.coefficient = best->coefficient;
        result.achieved = best->cbi;
        if (result.note.empty()) result.note = "evaluation budget exhausted before reaching the tolerance";
      }
    }
  }

  if (result.converged && !exact) {
    const CbiMeasurement check = measure_controlled(agent, method, spec, paradigm, result.coefficient,
                                                    derive_seed(seed, "recheck"), options.measure);
    ++result.evaluations;
    result.recheck_cbi = check.value;
    if (std::abs(check.value - target) > options.tolerance + 3.0 * check.standard_error) {
      result.converged = false;
      result.note = "re-measurement at the calibrated coefficient gave " + fmt(check.value) +
                    ", outside tolerance + 3 stderr";
    }
  }
  return result;
}

}  // namespace cobra
