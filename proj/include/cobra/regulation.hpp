#pragma once

// Behavioral regulation: control methods, per-paradigm measurement, coefficient
// sweeps and the closed calibration loop (measure, compare with the target,
// adjust the coefficient, repeat).

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/backend.hpp"
#include "cobra/cbi.hpp"
#include "cobra/execution.hpp"
#include "cobra/sidecar_client.hpp"
#include "cobra/testbed.hpp"

namespace cobra {

// --- bias specifications -------------------------------------------------------

/// Codified behavior patterns that parameterize every control method.
struct BiasSpec {
  std::string bias;          // BiasType id, e.g. "Authority"
  std::string name;          // e.g. "authority bias"
  std::string no_pattern;    // e.g. "never trust authority figures"
  std::string max_pattern;   // e.g. "always trust authority figures"
  std::string anti_pattern;

  void validate() const;
};

nlohmann::json to_json(const BiasSpec& spec);
BiasSpec bias_spec_from_json(const nlohmann::json& j);

/// Accepts {"bias_specs": [...]} or a single spec object.
std::vector<BiasSpec> load_bias_specs(const nlohmann::json& document);
std::vector<BiasSpec> load_bias_specs_file(const std::filesystem::path& path);
std::vector<BiasSpec> load_bundled_bias_specs();

/// Bundled spec for a bias type; throws ValidationError when unknown.
BiasSpec bundled_bias_spec(std::string_view bias);

// --- control methods -------------------------------------------------------------

struct CoefficientDomain {
  double lo = 0.0;
  double hi = 1.0;
  std::optional<double> step;

  bool contains(double coefficient) const;
  /// Nearest admissible value (snapped to the step grid when there is one).
  double quantize(double coefficient) const;
};

struct ControlMethod {
  ControlKind kind = ControlKind::PromptNumerical;
  CoefficientDomain domain;
  std::string handle;  // bias-vector or task-vector id for steering kinds

  /// Domain [0, 1], step 0.05.
  static ControlMethod prompt_numerical();
  /// Domain taken from the sidecar's stability range.
  static ControlMethod steering(ControlKind kind, const StabilityRange& range, std::string handle);

  /// Throws DomainError naming the bounds.
  void check_coefficient(double coefficient) const;
};

nlohmann::json to_json(const ControlMethod& method);

/// Percent level stated by the prompt: 5 * round(20 * coefficient).
/// Throws DomainError outside [0, 1].
int prompt_numerical_level(double coefficient);

/// System-prompt text for prompt-numerical control.
std::string prompt_numerical_text(const BiasSpec& spec, double coefficient);

/// The uniform natural-language control condition: "Pretend you have completely <name>."
std::string natural_language_control_text(const BiasSpec& spec);

/// Decorator that injects a control into every request of the wrapped agent.
/// The wrapped agent is never modified.
class ControlledAgent final : public AgentBackend {
 public:
  ControlledAgent(AgentPtr inner, std::optional<std::string> system_text, std::optional<SteeringDirective> steering);

  std::string id() const override { return inner_->id(); }
  Capabilities capabilities() const override { return inner_->capabilities(); }
  const BackendConfig& config() const override { return inner_->config(); }
  LabelProbabilities label_probabilities(const Request& request) const override;
  std::string generate(const Request& request) const override;
  BackendStats stats() const override { return inner_->stats(); }
  int max_concurrency() const override { return inner_->max_concurrency(); }

  const std::optional<std::string>& system_text() const { return system_text_; }
  const std::optional<SteeringDirective>& steering() const { return steering_; }

 private:
  Request decorate(const Request& request) const;

  AgentPtr inner_;
  std::optional<std::string> system_text_;
  std::optional<SteeringDirective> steering_;
};

/// PromptNumerical adds the generated system prompt; steering kinds attach
/// (method, coefficient, handle) to every request. Throws CapabilityError on
/// a method/backend mismatch and DomainError outside the method's domain.
AgentPtr apply_control(AgentPtr agent, const ControlMethod& method, const BiasSpec& spec, double coefficient);

/// Appends free text to the system prompt (natural-language conditions, presets).
AgentPtr with_system_prompt(AgentPtr agent, std::string text);

// --- measurement -------------------------------------------------------------------

struct MeasureOptions {
  Execution execution = Execution::Parallel;
  /// The measurement fails when more than this share of variants is unrecoverable.
  double max_drop_fraction = 0.05;
};

/// Seeds for variant i of a paradigm: presentation and scoring streams.
Seed presentation_seed(Seed master, std::string_view paradigm_id, std::size_t variant_index);
Seed scoring_seed(Seed master, std::string_view paradigm_id, std::size_t variant_index);

/// Expands variants, presents each under its own seeded permutation, scores
/// them (fanned out per variant) and aggregates. Variants whose scoring throws
/// a BackendError other than AuthError are dropped and listed.
CbiMeasurement measure(const AgentBackend& agent, const ParadigmSpec& paradigm, Seed seed,
                       const MeasureOptions& options = {});

// --- sweeps ------------------------------------------------------------------------

struct CurvePoint {
  double coefficient = 0.0;
  CbiMeasurement cbi;
};

struct ControlCurve {
  ControlKind method = ControlKind::PromptNumerical;
  std::string paradigm_id;
  std::string backend_id;
  std::vector<CurvePoint> points;

  /// Throws ValidationError unless there are >= 2 points with strictly
  /// increasing coefficients.
  void validate() const;
  std::vector<double> coefficients() const;
  std::vector<double> values() const;
};

/// a, a + step, ..., b. Throws unless (b - a) is a whole number of steps.
std::vector<double> make_grid(double a, double b, double step);

ControlCurve sweep(const AgentPtr& agent, const ControlMethod& method, const BiasSpec& spec,
                   const ParadigmSpec& paradigm, const std::vector<double>& grid, Seed seed,
                   const MeasureOptions& options = {});

// --- calibration -------------------------------------------------------------------

struct CalibrationOptions {
  double tolerance = 0.05;
  int budget = 20;
  MeasureOptions measure;
};

struct CalibrationStep {
  double coefficient = 0.0;
  double cbi = 0.0;
  double standard_error = 0.0;
};

struct CalibrationResult {
  double target = 0.0;
  double achieved = 0.0;
  double coefficient = 0.0;
  int evaluations = 0;
  bool converged = false;
  double tolerance = 0.05;
  std::string note;
  std::vector<CalibrationStep> trace;
  /// Fresh measurement at the returned coefficient (sampling backends only).
  std::optional<double> recheck_cbi;
};

/// Endpoints, then bisection on the measured CBI, assuming it is monotone in
/// the coefficient (direction read from the endpoints). Every evaluation
/// reuses `seed`. Out-of-range targets return the nearest endpoint with
/// converged = false. For sampling backends a converged result is re-measured
/// under a fresh seed and rejected if it misses by more than
/// tolerance + 3 * stderr.
CalibrationResult calibrate(const AgentPtr& agent, const ControlMethod& method, const BiasSpec& spec,
                            const ParadigmSpec& paradigm, double target, Seed seed,
                            const CalibrationOptions& options = {});

/// Measurement of `paradigm` with the control applied at `coefficient`.
CbiMeasurement measure_controlled(const AgentPtr& agent, const ControlMethod& method, const BiasSpec& spec,
                                  const ParadigmSpec& paradigm, double coefficient, Seed seed,
                                  const MeasureOptions& options = {});

}  // namespace cobra
