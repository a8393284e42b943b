#include <gtest/gtest.h>

#include "cobra/cbi.hpp"
#include "cobra/error.hpp"
#include "cobra/mock.hpp"
#include "cobra/regulation.hpp"
#include "cobra/sentiment.hpp"
#include "test_support.hpp"

using namespace cobra;
using cobra::testing::bundled_testbed;
using cobra::testing::mock_at;

TEST(MockDistribution, ScoreEqualsBiasForAnyNoise) {
  for (double noise : {0.0, 0.1, 0.5, 1.0}) {
    for (int k = 0; k <= 400; ++k) {
      const double b = k / 100.0;
      EXPECT_NEAR(weighted_score(mock_distribution(b, noise)), b, 1e-12) << "b=" << b << " noise=" << noise;
    }
  }
}

TEST(MockDistribution, ZeroNoiseIsTwoPoint) {
  const auto d = mock_distribution(2.6, 0.0);
  // weight 2 is O3, weight 3 is O2.
  EXPECT_NEAR(d.at(1), 0.6, 1e-12);
  EXPECT_NEAR(d.at(2), 0.4, 1e-12);
  EXPECT_EQ(d.at(0), 0.0);
  EXPECT_EQ(mock_distribution(4.0, 0.0).probs(), (std::array<double, 5>{1, 0, 0, 0, 0}));
  EXPECT_EQ(mock_distribution(0.0, 0.0).probs(), (std::array<double, 5>{0, 0, 0, 0, 1}));
}

TEST(MockAgent, BaseBiasZeroAndFourOnEveryParadigm) {
  for (double b : {0.0, 4.0}) {
    const auto agent = make_mock(mock_at(b));
    for (const auto& p : bundled_testbed().paradigms()) {
      EXPECT_NEAR(measure(*agent, p, 1).value, b, 1e-9) << p.id;
    }
  }
}

TEST(MockAgent, LogisticMidpointGivesTwo) {
  MockAgentSpec spec = mock_at(1.0);
  spec.response = ResponseCurve::logistic(0.0, 4.0, 12.0, 0.5);
  const auto agent = make_mock(spec);
  const auto method = ControlMethod::steering(ControlKind::RepeLinear, {0.0, 1.0}, "v");
  const auto& p = bundled_testbed().find("hotel_towel");
  EXPECT_NEAR(measure_controlled(agent, method, bundled_bias_spec(p.bias), p, 0.5, 3).value, 2.0, 1e-9);
}

TEST(MockAgent, BiasResolutionOrder) {
  MockAgentSpec spec = mock_at(1.0);
  spec.response = ResponseCurve::linear(0.0, 4.0);
  spec.paradigm_base_bias["asch_line"] = 3.0;
  spec.paradigm_responses["asch_line"] = ResponseCurve::constant(0.5);
  spec.nl_control_bias = 2.5;
  MockAgent agent(spec, mock_config());

  const auto variant = expand_variants(bundled_testbed().find("asch_line"))[0];
  const PresentedPrompt asch = present(variant, OptionPermutation::identity());
  const auto other_variant = expand_variants(bundled_testbed().find("hotel_towel"))[0];
  const PresentedPrompt towel = present(other_variant, OptionPermutation::identity());

  Request r;
  r.prompt = &towel;
  EXPECT_EQ(agent.effective_bias(r), 1.0);
  r.prompt = &asch;
  EXPECT_EQ(agent.effective_bias(r), 3.0);
  r.system_prompt = "Pretend you have completely bandwagon effect.";
  EXPECT_EQ(agent.effective_bias(r), 2.5);
  r.system_prompt = "Pretend you have bandwagon effect at level 25%";
  EXPECT_EQ(agent.effective_bias(r), 0.5);
  r.prompt = &towel;
  EXPECT_EQ(agent.effective_bias(r), 1.0);
  r.steering = SteeringDirective{ControlKind::RepeLinear, 0.75, "v"};
  EXPECT_EQ(agent.effective_bias(r), 3.0);
}

TEST(MockAgent, ExactProbsAreReportedInPresentedOrder) {
  MockAgent agent(mock_at(2.6), mock_config());
  const auto v = expand_variants(bundled_testbed().find("asch_line"))[0];
  const PresentedPrompt p = present(v, OptionPermutation::from_mapping({4, 3, 2, 1, 0}));
  Request r;
  r.prompt = &p;
  const auto lp = agent.label_probabilities(r);
  EXPECT_NEAR(lp.by_position[3], 0.6, 1e-12);  // O2 shown at position 3
  EXPECT_NEAR(lp.by_position[2], 0.4, 1e-12);
  EXPECT_EQ(lp.valid_mass, 1.0);
}

TEST(MockAgent, SamplingModeHasNoExactProbs) {
  MockAgentSpec spec = mock_at(2.0);
  spec.exact_probs = false;
  MockAgent agent(spec, mock_config());
  EXPECT_FALSE(agent.capabilities().exact_probs);
  const auto v = expand_variants(bundled_testbed().find("asch_line"))[0];
  const PresentedPrompt p = present(v, OptionPermutation::identity());
  Request r;
  r.prompt = &p;
  EXPECT_THROW(agent.label_probabilities(r), CapabilityError);
}

TEST(MockAgent, CompletionsParseBackToTheChosenOption) {
  MockAgentSpec spec = mock_at(4.0);
  spec.exact_probs = false;
  MockAgent agent(spec, mock_config());
  const auto v = expand_variants(bundled_testbed().find("asch_line"))[2];
  for (std::size_t rank : {0u, 37u, 119u}) {
    for (LabelScheme scheme : {LabelScheme::Letters, LabelScheme::Digits, LabelScheme::Roman}) {
      const PresentedPrompt p = present(v, OptionPermutation::from_rank(rank, scheme));
      EXPECT_EQ(sample_choice(agent, p, 5), Option::O1);
    }
  }
}

TEST(MockAgent, ParseFailuresFollowTheConfiguredRate) {
  MockAgentSpec spec = mock_at(2.0);
  spec.exact_probs = false;
  spec.parse_failure_rate = 0.3;
  MockAgent agent(spec, mock_config());
  const auto v = expand_variants(bundled_testbed().find("asch_line"))[0];
  const PresentedPrompt p = present(v, OptionPermutation::identity());
  int failures = 0;
  for (int i = 0; i < 2000; ++i) {
    try {
      sample_choice(agent, p, derive_seed(1, "pf", i));
    } catch (const ParseError&) {
      ++failures;
    }
  }
  EXPECT_NEAR(failures / 2000.0, 0.3, 0.04);
}

TEST(MockAgent, SpecValidation) {
  MockAgentSpec spec = mock_at(4.5);
  EXPECT_THROW(make_mock(spec), ValidationError);
  spec = mock_at(2.0);
  spec.noise = 1.5;
  EXPECT_THROW(make_mock(spec), ValidationError);
  spec = mock_at(2.0);
  spec.response = ResponseCurve::logistic(3.0, 1.0, 5.0, 0.5);
  EXPECT_THROW(make_mock(spec), ValidationError);
}

TEST(MockAgent, SpecJsonRoundTrip) {
  MockAgentSpec spec = mock_at(1.25);
  spec.response = ResponseCurve::logistic(0.5, 3.5, 8.0, 0.4);
  spec.paradigm_responses["milgram_obedience"] = ResponseCurve::linear(1.0, 3.0);
  spec.paradigm_base_bias["asch_line"] = 2.5;
  spec.nl_control_bias = 3.0;
  spec.noise = 0.2;
  spec.contagion_kappa = 0.01;
  const MockAgentSpec back = mock_spec_from_json(to_json(spec));
  EXPECT_EQ(to_json(back), to_json(spec));
  EXPECT_THROW(mock_spec_from_json({{"response", {{"shape", "cubic"}}}}), ValidationError);
  // Misspelled keys must not silently fall back to defaults.
  EXPECT_THROW(mock_spec_from_json({{"contagion_kappa", 0.02}}), ValidationError);
  EXPECT_THROW(mock_spec_from_json({{"contagion", {{"kapa", 0.02}}}}), ValidationError);
  EXPECT_THROW(mock_spec_from_json({{"response", {{"shape", "linear"}, {"high", 3}}}}), ValidationError);
}

TEST(ResponseCurve, InverseOfLogisticAndLinear) {
  const auto lg = ResponseCurve::logistic(0.0, 4.0, 10.0, 0.5);
  EXPECT_NEAR(*lg.inverse(2.0), 0.5, 1e-12);
  EXPECT_NEAR(lg(*lg.inverse(3.1)), 3.1, 1e-12);
  EXPECT_FALSE(lg.inverse(4.0));
  EXPECT_FALSE(lg.inverse(-0.1));
  const auto ln = ResponseCurve::linear(1.0, 3.0);
  EXPECT_NEAR(*ln.inverse(2.5), 0.75, 1e-12);
  EXPECT_FALSE(ResponseCurve::constant(2.0).inverse(2.0));
}

TEST(MockAgent, PostValenceFollowsDose) {
  MockAgentSpec spec = mock_at(2.0);
  spec.contagion_kappa = 0.05;
  spec.contagion_baseline = 0.5;
  spec.post_words = 400;
  MockAgent agent(spec, mock_config());
  EXPECT_EQ(MockAgent::negative_dose("Post 1: a calm walk\nPost 2: terrible awful news\nPost 3: sad and angry day"),
            2);
  Request r;
  r.user_text = "Post 1: terrible news\nPost 2: awful and sad\nPost 3: the bus came";
  r.seed = 17;
  // dose 2: v = 0.5 - 0.05 * 2 * 2 = 0.3
  const SentimentTriple s = lexicon_score(agent.generate(r));
  EXPECT_NEAR(s.valence(), 0.3, 0.1);
  EXPECT_NEAR(s.p_neu, 0.0, 1e-12);
  r.user_text = "Post 1: the bus came";
  EXPECT_NEAR(lexicon_score(agent.generate(r)).valence(), 0.5, 0.1);
}
