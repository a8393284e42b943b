#pragma once

// Synthetic oracle agent. Its option distribution is known in closed form, so
// every measurement made through it has an exact expected value.
//
// Bias resolution per request:
//   steering directive λ                   -> response(λ)
//   system prompt containing "at level L%" -> response(L / 100)
//   any other system prompt                -> nl_control_bias (else base)
//   no system prompt                       -> base bias
// where response and base may be overridden per paradigm.

#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "cobra/backend.hpp"

namespace cobra {

/// Monotone map from control coefficient to bias level in [0, 4].
struct ResponseCurve {
  enum class Shape { Logistic, Linear, Constant };

  Shape shape = Shape::Logistic;
  double lo = 0.0;
  double hi = 4.0;
  double slope = 10.0;    // logistic only
  double midpoint = 0.5;  // logistic only

  static ResponseCurve logistic(double lo, double hi, double slope, double midpoint);
  /// lo + (hi - lo) * λ, clamped to [0, 4].
  static ResponseCurve linear(double lo, double hi);
  static ResponseCurve constant(double value);

  double operator()(double coefficient) const;

  /// Coefficient with response(λ) == level, when the curve is strictly
  /// increasing and level is strictly inside its range.
  std::optional<double> inverse(double level) const;

  /// Throws ValidationError unless the curve is non-decreasing with values in [0, 4].
  void validate() const;
};

struct MockAgentSpec {
  std::string name = "mock";
  double base_bias = 2.0;
  ResponseCurve response = ResponseCurve::linear(0.0, 4.0);
  std::map<std::string, ResponseCurve> paradigm_responses;
  std::map<std::string, double> paradigm_base_bias;
  std::optional<double> nl_control_bias;
  /// Weight of the binomial component in [0, 1]; 0 puts all mass on the one
  /// or two options adjacent to the bias level.
  double noise = 0.0;
  bool exact_probs = true;
  /// Probability that a sampled completion carries no option label.
  double parse_failure_rate = 0.0;
  /// Free-form posts: valence = clamp(baseline - kappa * bias * dose, -1, 1).
  double contagion_kappa = 0.0;
  double contagion_baseline = 0.5;
  int post_words = 32;

  void validate() const;
};

nlohmann::json to_json(const ResponseCurve& curve);
ResponseCurve response_curve_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MockAgentSpec& spec);
MockAgentSpec mock_spec_from_json(const nlohmann::json& j);

/// Canonical distribution with weighted_score exactly `bias` (up to rounding):
/// (1 - noise) * two-point mass on the options adjacent to `bias` plus
/// noise * Binomial(4, bias / 4) over option weights.
OptionDistribution mock_distribution(double bias, double noise);

class MockAgent final : public AgentBackend {
 public:
  MockAgent(MockAgentSpec spec, BackendConfig config);

  std::string id() const override { return config_.display_id(); }
  Capabilities capabilities() const override { return {spec_.exact_probs, true, true}; }
  const BackendConfig& config() const override { return config_; }
  LabelProbabilities label_probabilities(const Request& request) const override;
  std::string generate(const Request& request) const override;
  BackendStats stats() const override { return stats_.snapshot(); }
  int max_concurrency() const override { return 1 << 16; }

  const MockAgentSpec& spec() const { return spec_; }

  /// Bias level the request resolves to (see file comment).
  double effective_bias(const Request& request) const;

  /// Number of feed posts in a free-form request that score negative.
  static int negative_dose(std::string_view feed_prompt);

 private:
  std::string generate_item(const Request& request) const;
  std::string generate_post(const Request& request) const;

  MockAgentSpec spec_;
  BackendConfig config_;
  mutable StatsCounter stats_;
};

BackendConfig mock_config(std::string id = "mock");

std::shared_ptr<const MockAgent> make_mock(MockAgentSpec spec);
std::shared_ptr<const MockAgent> make_mock(MockAgentSpec spec, BackendConfig config);

}  // namespace cobra
