#include <gtest/gtest.h>

#include <cmath>

#include "cobra/error.hpp"
#include "cobra/mock.hpp"
#include "cobra/regulation.hpp"
#include "test_support.hpp"

using namespace cobra;
using cobra::testing::bundled_testbed;
using cobra::testing::mock_at;
using cobra::testing::ScriptedAgent;

namespace {

const ParadigmSpec& paradigm(const char* id) { return bundled_testbed().find(id); }

BiasSpec spec_for(const ParadigmSpec& p) { return bundled_bias_spec(p.bias); }

ControlMethod unit_steering() { return ControlMethod::steering(ControlKind::RepeLinear, {0.0, 1.0}, "v"); }

}  // namespace

TEST(PromptNumerical, AuthorityAtFullLevel) {
  const std::string text = prompt_numerical_text(bundled_bias_spec("Authority"), 1.0);
  EXPECT_NE(text.find("at level 100%"), std::string::npos);
  EXPECT_NE(text.find("always trust authority figures"), std::string::npos);
  EXPECT_NE(text.find("never trust authority figures"), std::string::npos);
  EXPECT_NE(text.find("Each level increases bias by exactly 5%"), std::string::npos);
}

TEST(PromptNumerical, LevelQuantization) {
  EXPECT_NE(prompt_numerical_text(bundled_bias_spec("Authority"), 0.0).find("at level 0%"), std::string::npos);
  EXPECT_EQ(prompt_numerical_level(0.426), 45);
  EXPECT_EQ(prompt_numerical_level(0.424), 40);
  EXPECT_EQ(prompt_numerical_level(1.0), 100);
  EXPECT_THROW(prompt_numerical_level(1.2), DomainError);
  EXPECT_NE(prompt_numerical_text(bundled_bias_spec("Authority"), 0.426).find("at level 45%"), std::string::npos);
}

TEST(PromptNumerical, TextIsPure) {
  const auto spec = bundled_bias_spec("Framing");
  for (double l : {0.0, 0.35, 0.5, 0.95}) EXPECT_EQ(prompt_numerical_text(spec, l), prompt_numerical_text(spec, l));
}

TEST(BiasSpecs, BundledFourAndValidation) {
  const auto specs = load_bundled_bias_specs();
  EXPECT_EQ(specs.size(), 4u);
  EXPECT_THROW(bundled_bias_spec("Anchoring"), ValidationError);
  nlohmann::json doc{{"bias_specs", {to_json(specs[0]), to_json(specs[0])}}};
  EXPECT_THROW(load_bias_specs(doc), ValidationError);
  auto j = to_json(specs[0]);
  j["max_pattern"] = "";
  EXPECT_THROW(bias_spec_from_json(j), ValidationError);
}

TEST(CoefficientDomain, ContainsAndQuantize) {
  const auto pn = ControlMethod::prompt_numerical();
  EXPECT_TRUE(pn.domain.contains(0.0));
  EXPECT_TRUE(pn.domain.contains(1.0));
  EXPECT_FALSE(pn.domain.contains(1.01));
  EXPECT_DOUBLE_EQ(pn.domain.quantize(0.426), 0.45);
  EXPECT_DOUBLE_EQ(pn.domain.quantize(2.0), 1.0);
  const auto st = ControlMethod::steering(ControlKind::RepeProjection, {-2.0, 3.0}, "v");
  EXPECT_DOUBLE_EQ(st.domain.quantize(0.1234), 0.1234);
  EXPECT_THROW(ControlMethod::steering(ControlKind::RepeLinear, {1.0, 1.0}, "v"), ValidationError);
  EXPECT_THROW(ControlMethod::steering(ControlKind::PromptNumerical, {0.0, 1.0}, "v"), ValidationError);
}

TEST(ApplyControl, PromptNumericalOnMockSetsResponseLevel) {
  MockAgentSpec s = mock_at(1.0);
  s.response = ResponseCurve::linear(0.0, 4.0);
  const auto agent = make_mock(s);
  const auto& p = paradigm("milgram_obedience");
  for (double l : {0.0, 0.25, 0.6, 1.0}) {
    const auto m = measure_controlled(agent, ControlMethod::prompt_numerical(), spec_for(p), p, l, 1);
    EXPECT_NEAR(m.value, s.response(prompt_numerical_level(l) / 100.0), 1e-9);
  }
}

TEST(ApplyControl, SteeringOnChatLikeBackendIsACapabilityError) {
  const auto chat = std::make_shared<const ScriptedAgent>(std::array<double, 5>{0.2, 0.2, 0.2, 0.2, 0.2});
  EXPECT_THROW(apply_control(chat, unit_steering(), bundled_bias_spec("Authority"), 0.5), CapabilityError);
}

TEST(ApplyControl, OutOfDomainNamesTheBounds) {
  const auto agent = make_mock(mock_at(2.0));
  const auto method = ControlMethod::steering(ControlKind::RepeLinear, {-1.5, 2.5}, "v");
  try {
    apply_control(agent, method, bundled_bias_spec("Authority"), 3.0);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("-1.5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2.5"), std::string::npos) << msg;
  }
}

TEST(ApplyControl, SystemTextIsAppendedToExistingPersona) {
  BackendConfig cfg = mock_config("persona");
  cfg.system_prompt = "You are a careful reader.";
  const auto agent = make_mock(mock_at(2.0), cfg);
  const auto controlled =
      std::dynamic_pointer_cast<const ControlledAgent>(apply_control(agent, ControlMethod::prompt_numerical(),
                                                                     bundled_bias_spec("Bandwagon"), 0.5));
  ASSERT_TRUE(controlled);
  ASSERT_TRUE(controlled->system_text());
  EXPECT_NE(controlled->system_text()->find("at level 50%"), std::string::npos);
  EXPECT_EQ(controlled->id(), "persona");
}

TEST(Measure, MockBiasOnStanfordPrison) {
  const auto agent = make_mock(mock_at(2.6));
  const auto m = measure(*agent, paradigm("stanford_prison"), 11);
  EXPECT_NEAR(m.value, 2.6, 1e-9);
  EXPECT_EQ(m.n_variants, 30u);
  EXPECT_EQ(m.source, ResponseSource::ExactProbs);
}

TEST(Measure, AllO5ScriptedBackendIsZero) {
  const ScriptedAgent agent({0, 0, 0, 0, 1});
  for (const auto& p : bundled_testbed().paradigms()) EXPECT_EQ(measure(agent, p, 3).value, 0.0);
}

TEST(Measure, SameSeedIsIdenticalAndSerialMatchesParallel) {
  MockAgentSpec s = mock_at(1.7);
  s.noise = 0.3;
  const auto agent = make_mock(s);
  const auto& p = paradigm("milgram_obedience");
  const auto a = measure(*agent, p, 5, {Execution::Parallel});
  const auto b = measure(*agent, p, 5, {Execution::Parallel});
  const auto c = measure(*agent, p, 5, {Execution::Serial});
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.per_variant_scores, b.per_variant_scores);
  EXPECT_EQ(a.value, c.value);
  EXPECT_EQ(a.per_variant_scores, c.per_variant_scores);
}

TEST(Measure, FrequencyPathMatchesSerialAndParallel) {
  MockAgentSpec s = mock_at(2.3);
  s.noise = 0.5;
  s.exact_probs = false;
  BackendConfig cfg = mock_config("sampler");
  cfg.max_samples = 50;
  const auto agent = make_mock(s, cfg);
  const auto& p = paradigm("asch_line");
  const auto a = measure(*agent, p, 5, {Execution::Parallel});
  const auto b = measure(*agent, p, 5, {Execution::Serial});
  EXPECT_EQ(a.per_variant_scores, b.per_variant_scores);
  EXPECT_EQ(a.source, ResponseSource::Frequencies);
  EXPECT_EQ(a.total_samples, 15u * 50u);
  EXPECT_NEAR(a.value, 2.3, 0.25);
}

TEST(Measure, DropsFailingVariantsWithinTheAllowance) {
  const auto& p = paradigm("milgram_obedience");  // 75 variants: 3 drops is 4%
  auto agent = std::make_shared<const cobra::testing::CallbackAgent>([](const Request& r) -> std::string {
    if (r.prompt->variant.index < 3) throw TransportError("connection reset");
    return r.prompt->labels[r.prompt->permutation.position_of(Option::O2)];
  });
  const auto m = measure(*agent, p, 1);
  EXPECT_EQ(m.dropped_variants, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(m.n_variants, 72u);
  EXPECT_DOUBLE_EQ(m.value, 3.0);

  auto worse = std::make_shared<const cobra::testing::CallbackAgent>([](const Request& r) -> std::string {
    if (r.prompt->variant.index < 4) throw TransportError("connection reset");
    return "A";
  });
  EXPECT_THROW(measure(*worse, p, 1), BackendError);

  auto denied = std::make_shared<const cobra::testing::CallbackAgent>([](const Request&) -> std::string {
    throw AuthError("401 unauthorized");
  });
  EXPECT_THROW(measure(*denied, p, 1), AuthError);
}

TEST(Sweep, IdentityResponseGivesIntegerLevels) {
  MockAgentSpec s = mock_at(0.0);
  s.response = ResponseCurve::linear(0.0, 4.0);
  const auto agent = make_mock(s);
  const auto& p = paradigm("asian_disease");
  const auto curve = sweep(agent, unit_steering(), spec_for(p), p, make_grid(0.0, 1.0, 0.25), 1);
  ASSERT_EQ(curve.points.size(), 5u);
  const std::vector<double> expected{0, 1, 2, 3, 4};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(curve.values()[i], expected[i], 1e-9);
}

TEST(Sweep, SingletonGridRejected) {
  const auto agent = make_mock(mock_at(1.0));
  const auto& p = paradigm("asch_line");
  EXPECT_THROW(sweep(agent, unit_steering(), spec_for(p), p, {0.5}, 1), ValidationError);
  EXPECT_THROW(sweep(agent, unit_steering(), spec_for(p), p, {0.5, 0.4}, 1), ValidationError);
  EXPECT_THROW(sweep(agent, unit_steering(), spec_for(p), p, {0.5, 1.5}, 1), DomainError);
}

TEST(Sweep, ElevenPointGrid) {
  const auto grid = make_grid(0.0, 1.0, 0.1);
  ASSERT_EQ(grid.size(), 11u);
  EXPECT_EQ(grid[3], 0.3);
  EXPECT_EQ(grid.back(), 1.0);
  const auto agent = make_mock(mock_at(1.0));
  const auto& p = paradigm("asch_line");
  const auto curve = sweep(agent, ControlMethod::prompt_numerical(), spec_for(p), p, grid, 1);
  ASSERT_EQ(curve.points.size(), 11u);
  for (std::size_t i = 1; i < 11; ++i) EXPECT_GT(curve.points[i].coefficient, curve.points[i - 1].coefficient);
  EXPECT_THROW(make_grid(0.0, 1.0, 0.3), ValidationError);
  EXPECT_THROW(make_grid(1.0, 0.0, 0.1), ValidationError);
}

TEST(Calibrate, LogisticTargetTwoMatchesAnalyticInverse) {
  MockAgentSpec s = mock_at(1.0);
  s.response = ResponseCurve::logistic(0.0, 4.0, 10.0, 0.37);
  const auto agent = make_mock(s);
  const auto& p = paradigm("milgram_obedience");
  const auto r = calibrate(agent, unit_steering(), spec_for(p), p, 2.0, 1);
  EXPECT_TRUE(r.converged) << r.note;
  EXPECT_LE(r.evaluations, 20);
  EXPECT_LE(std::abs(r.achieved - 2.0), 0.05);
  EXPECT_NEAR(r.coefficient, *s.response.inverse(2.0), 0.02);
  EXPECT_EQ(r.trace.size(), static_cast<std::size_t>(r.evaluations));
}

TEST(Calibrate, OutOfRangeTargetIsNotConverged) {
  const auto agent = make_mock(mock_at(1.0));
  const auto& p = paradigm("asch_line");
  const auto r = calibrate(agent, unit_steering(), spec_for(p), p, 5.0, 1);
  EXPECT_FALSE(r.converged);
  EXPECT_NEAR(r.achieved, 4.0, 1e-9);
  EXPECT_EQ(r.coefficient, 1.0);
  EXPECT_NE(r.note.find("outside"), std::string::npos);
}

TEST(Calibrate, EndpointTargetConvergesImmediately) {
  MockAgentSpec s = mock_at(1.0);
  s.response = ResponseCurve::logistic(0.5, 3.5, 6.0, 0.5);
  const auto agent = make_mock(s);
  const auto& p = paradigm("asch_line");
  const double at_min = s.response(0.0);
  const auto r = calibrate(agent, unit_steering(), spec_for(p), p, at_min, 1);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.evaluations, 3);
  EXPECT_EQ(r.coefficient, 0.0);
}

TEST(Calibrate, DecreasingResponseIsHandled) {
  // A persona prompt stacked on steering cannot change direction, so emulate a
  // decreasing control with a scripted curve: anti-bias coefficient.
  MockAgentSpec s = mock_at(1.0);
  s.response = ResponseCurve::linear(0.0, 4.0);
  const auto agent = make_mock(s);
  const auto method = ControlMethod::steering(ControlKind::RepeLinear, {-1.0, 0.0}, "v");
  const auto& p = paradigm("asch_line");
  // linear response is clamped at 0 for negative coefficients: unreachable.
  const auto r = calibrate(agent, method, spec_for(p), p, 1.0, 1);
  EXPECT_FALSE(r.converged);
}

TEST(Calibrate, RejectsBadOptions) {
  const auto agent = make_mock(mock_at(1.0));
  const auto& p = paradigm("asch_line");
  EXPECT_THROW(calibrate(agent, unit_steering(), spec_for(p), p, std::nan(""), 1), ValidationError);
  EXPECT_THROW(calibrate(agent, unit_steering(), spec_for(p), p, 2.0, 1, {0.0, 20, {}}), ValidationError);
  EXPECT_THROW(calibrate(agent, unit_steering(), spec_for(p), p, 2.0, 1, {0.05, 2, {}}), ValidationError);
}

TEST(Calibrate, PromptNumericalResolutionLimitIsReported) {
  MockAgentSpec s = mock_at(1.0);
  s.response = ResponseCurve::linear(0.0, 4.0);
  const auto agent = make_mock(s);
  const auto& p = paradigm("asch_line");
  // Levels move in 0.2 CBI steps; 1.3 sits 0.1 from the nearest level.
  const auto r = calibrate(agent, ControlMethod::prompt_numerical(), spec_for(p), p, 1.3, 1);
  EXPECT_FALSE(r.converged);
  EXPECT_NEAR(std::abs(r.achieved - 1.3), 0.1, 1e-9);
  const auto ok = calibrate(agent, ControlMethod::prompt_numerical(), spec_for(p), p, 1.4, 1);
  EXPECT_TRUE(ok.converged);
  EXPECT_NEAR(ok.coefficient, 0.35, 1e-12);
}

TEST(CalibrateProperty, MonotoneMocksConvergeAndAgreeWithSweeps) {
  const auto& p = paradigm("hotel_towel");
  const auto grid = make_grid(0.0, 1.0, 0.1);
  Rng rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    MockAgentSpec s = mock_at(1.0);
    const double lo = 4.0 * rng.uniform() * 0.4;
    const double hi = 4.0 - 4.0 * rng.uniform() * 0.4;
    s.response = ResponseCurve::logistic(lo, hi, 2.0 + 18.0 * rng.uniform(), 0.2 + 0.6 * rng.uniform());
    const auto agent = make_mock(s);
    const double f0 = s.response(0.0), f1 = s.response(1.0);
    const double target = f0 + (f1 - f0) * (0.05 + 0.9 * rng.uniform());
    const auto r = calibrate(agent, unit_steering(), spec_for(p), p, target, 2);
    ASSERT_TRUE(r.converged) << "trial " << trial << ": " << r.note;
    EXPECT_LE(std::abs(r.achieved - target), 0.05);

    // Soundness: a fresh measure at the coefficient reproduces the achieved CBI.
    const auto again = measure_controlled(agent, unit_steering(), spec_for(p), p, r.coefficient, 99);
    EXPECT_LE(std::abs(again.value - r.achieved), 0.05 + 3 * again.standard_error);

    // Agreement: the coefficient lies between grid points whose CBIs bracket
    // the achieved value.
    const auto curve = sweep(agent, unit_steering(), spec_for(p), p, grid, 2);
    const auto ys = curve.values();
    for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
      if (ys[i] <= r.achieved && r.achieved <= ys[i + 1]) {
        EXPECT_GE(r.coefficient, grid[i] - 1e-12);
        EXPECT_LE(r.coefficient, grid[i + 1] + 1e-12);
        break;
      }
    }
  }
}

TEST(Calibrate, SamplingBackendIsRechecked) {
  MockAgentSpec s = mock_at(1.0);
  s.response = ResponseCurve::linear(0.0, 4.0);
  s.exact_probs = false;
  s.noise = 0.3;
  BackendConfig cfg = mock_config("sampler");
  cfg.max_samples = 200;
  const auto agent = make_mock(s, cfg);
  const auto& p = paradigm("asch_line");
  const auto r = calibrate(agent, unit_steering(), spec_for(p), p, 2.2, 4, {0.1, 20, {}});
  ASSERT_TRUE(r.recheck_cbi.has_value());
  EXPECT_EQ(static_cast<std::size_t>(r.evaluations), r.trace.size() + 1);
  EXPECT_LE(r.evaluations, 20);
  if (r.converged) EXPECT_LE(std::abs(r.achieved - 2.2), 0.1);
}

TEST(WithSystemPrompt, NaturalLanguageControlUsesTheNlBias) {
  MockAgentSpec s = mock_at(1.0);
  s.nl_control_bias = 3.25;
  const auto agent = make_mock(s);
  const auto& p = paradigm("asch_line");
  const auto nl = with_system_prompt(agent, natural_language_control_text(spec_for(p)));
  EXPECT_EQ(natural_language_control_text(spec_for(p)), "Pretend you have completely bandwagon effect.");
  EXPECT_NEAR(measure(*nl, p, 1).value, 3.25, 1e-9);
}
