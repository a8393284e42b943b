#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <mutex>

#include "cobra/backend.hpp"
#include "cobra/error.hpp"
#include "cobra/testbed.hpp"
#include "test_support.hpp"

using namespace cobra;
using cobra::testing::CallbackAgent;

namespace {

PresentedPrompt identity_prompt(LabelScheme scheme = LabelScheme::Letters) {
  const auto v = expand_variants(cobra::testing::bundled_testbed().find("asch_line"))[0];
  return present(v, OptionPermutation::identity(scheme));
}

}  // namespace

TEST(ParseLabel, LeadingLetterWithText) {
  EXPECT_EQ(parse_label("A. I completely agree.", LabelScheme::Letters), 0u);
}

TEST(ParseLabel, ParenthesizedLowercase) { EXPECT_EQ(parse_label("(d)", LabelScheme::Letters), 3u); }

TEST(ParseLabel, AcceptedFormats) {
  EXPECT_EQ(parse_label("B", LabelScheme::Letters), 1u);
  EXPECT_EQ(parse_label("  c: something", LabelScheme::Letters), 2u);
  EXPECT_EQ(parse_label("[E]", LabelScheme::Letters), 4u);
  EXPECT_EQ(parse_label("Answer: D", LabelScheme::Letters), 3u);
  EXPECT_EQ(parse_label("Option B", LabelScheme::Letters), 1u);
  EXPECT_EQ(parse_label("**C**", LabelScheme::Letters), 2u);
  EXPECT_EQ(parse_label("Thinking about A versus B.\nAnswer: B\nmore\nAnswer: e", LabelScheme::Letters), 4u);
  EXPECT_EQ(parse_label("3. Neutral", LabelScheme::Digits), 2u);
  EXPECT_EQ(parse_label("IV. text", LabelScheme::Roman), 3u);
  EXPECT_EQ(parse_label("(ii)", LabelScheme::Roman), 1u);
}

TEST(ParseLabel, RejectsMissingOrForeignLabels) {
  EXPECT_FALSE(parse_label("I would rather not choose between these.", LabelScheme::Letters));
  EXPECT_FALSE(parse_label("", LabelScheme::Letters));
  EXPECT_FALSE(parse_label("F. nope", LabelScheme::Letters));
  EXPECT_FALSE(parse_label("A. wrong scheme", LabelScheme::Digits));
  EXPECT_FALSE(parse_label("Absolutely", LabelScheme::Letters));
}

TEST(SampleChoice, MapsPresentedLabelToCanonicalOption) {
  const PresentedPrompt p = identity_prompt();
  CallbackAgent a([](const Request&) { return "A. I completely agree."; });
  EXPECT_EQ(sample_choice(a, p, 1), Option::O1);
  CallbackAgent d([](const Request&) { return "(d)"; });
  EXPECT_EQ(sample_choice(d, p, 1), Option::O4);

  const auto v = p.variant;
  const PresentedPrompt rev = present(v, OptionPermutation::from_mapping({4, 3, 2, 1, 0}));
  EXPECT_EQ(sample_choice(a, rev, 1), Option::O5);
}

TEST(SampleChoice, NoLabelIsAParseError) {
  CallbackAgent a([](const Request&) { return "I refuse to pick."; });
  EXPECT_THROW(sample_choice(a, identity_prompt(), 1), ParseError);
}

TEST(ScoreOptions, FrequencyPathRecordsSampleCount) {
  std::atomic<int> calls{0};
  CallbackAgent a([&](const Request&) {
    ++calls;
    return std::string("B");
  });
  const VariantResponse r = score_options(a, identity_prompt(), 3);
  EXPECT_EQ(r.source, ResponseSource::Frequencies);
  EXPECT_EQ(r.sample_count, 10u);
  EXPECT_EQ(calls.load(), 10);
  EXPECT_EQ(r.distribution.probs(), (std::array<double, 5>{0, 1, 0, 0, 0}));
}

TEST(ScoreOptions, UnparseableSamplesAreResampledThenRejected) {
  std::atomic<int> calls{0};
  CallbackAgent flaky([&](const Request&) { return (calls++ % 2 == 0) ? std::string("none") : std::string("C"); });
  const VariantResponse r = score_options(flaky, identity_prompt(), 3);
  EXPECT_EQ(r.sample_count, 10u);
  EXPECT_EQ(r.parse_rejects, 10u);

  BackendConfig cfg = mock_config("never");
  cfg.max_parse_rejects = 5;
  CallbackAgent never([](const Request&) { return std::string("none"); }, cfg);
  EXPECT_THROW(score_options(never, identity_prompt(), 3), ParseError);
}

TEST(ScoreOptions, SampleSeedsAreDistinctAndDeterministic) {
  std::vector<Seed> seen;
  std::mutex mu;
  CallbackAgent a([&](const Request& r) {
    std::lock_guard lock(mu);
    seen.push_back(r.seed);
    return std::string("A");
  });
  score_options(a, identity_prompt(), 99);
  std::vector<Seed> first = seen;
  seen.clear();
  score_options(a, identity_prompt(), 99);
  EXPECT_EQ(first, seen);
  std::sort(first.begin(), first.end());
  EXPECT_EQ(std::unique(first.begin(), first.end()), first.end());
}

TEST(ScoreOptions, ReasoningModeUsesReasoningPathsAndInstruction) {
  BackendConfig cfg = mock_config("reasoner");
  cfg.reasoning_mode = ReasoningMode::Reasoning;
  cfg.reasoning_paths = 4;
  cfg.reasoning_token_budget = 64;
  std::atomic<int> calls{0};
  CallbackAgent a(
      [&](const Request& r) {
        ++calls;
        EXPECT_TRUE(r.reasoning);
        EXPECT_NE(r.user_text.find(reasoning_instruction(64)), std::string::npos);
        return std::string("Let me think.\nAnswer: E");
      },
      cfg);
  const VariantResponse r = score_options(a, identity_prompt(), 1);
  EXPECT_EQ(calls.load(), 4);
  EXPECT_EQ(r.distribution.probs(), (std::array<double, 5>{0, 0, 0, 0, 1}));
}

TEST(ScoreOptions, ExactPathNormalizesValidMass) {
  class Partial final : public AgentBackend {
   public:
    std::string id() const override { return "partial"; }
    Capabilities capabilities() const override { return {true, true, false}; }
    const BackendConfig& config() const override { return cfg_; }
    LabelProbabilities label_probabilities(const Request&) const override {
      return {{0.4, 0.2, 0.1, 0.1, 0.0}, 0.8};
    }
    std::string generate(const Request&) const override { return "A"; }

   private:
    BackendConfig cfg_ = mock_config("partial");
  } agent;
  const VariantResponse r = score_options(agent, identity_prompt(), 1);
  EXPECT_EQ(r.source, ResponseSource::ExactProbs);
  EXPECT_DOUBLE_EQ(r.valid_mass, 0.8);
  EXPECT_DOUBLE_EQ(r.distribution.at(0), 0.5);
  EXPECT_DOUBLE_EQ(r.distribution.at(1), 0.25);
}

TEST(ScoreOptions, DefaultLabelProbabilitiesIsACapabilityError) {
  CallbackAgent a([](const Request&) { return std::string("A"); });
  Request r;
  EXPECT_THROW(a.label_probabilities(r), CapabilityError);
}

TEST(BackendConfig, JsonRoundTripAndValidation) {
  BackendConfig c;
  c.id = "m1";
  c.endpoint = "https://example.invalid/v1";
  c.model_name = "model-x";
  c.temperature = 0.2;
  c.max_samples = 7;
  c.reasoning_mode = ReasoningMode::Reasoning;
  c.system_prompt = "be terse";
  c.persona_role = PersonaRole::User;
  c.retry.max_retries = 2;
  c.use_logprobs = true;
  const BackendConfig back = backend_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));

  auto j = to_json(c);
  j["temperature"] = -1;
  EXPECT_THROW(backend_config_from_json(j), ConfigurationError);
  j = to_json(c);
  j["max_samples"] = 0;
  EXPECT_THROW(backend_config_from_json(j), ConfigurationError);
  j = to_json(c);
  j["reasoning_mode"] = "telepathy";
  EXPECT_THROW(backend_config_from_json(j), ValidationError);
  j = to_json(c);
  j["persona_role"] = "assistant";
  EXPECT_THROW(backend_config_from_json(j), ValidationError);
}

TEST(BackendConfig, RetryDelaysGrowAndCap) {
  RetryPolicy p;
  p.initial_delay = std::chrono::milliseconds(100);
  p.backoff_factor = 2.0;
  p.max_delay = std::chrono::milliseconds(500);
  EXPECT_EQ(p.delay_for(0).count(), 100);
  EXPECT_EQ(p.delay_for(1).count(), 200);
  EXPECT_EQ(p.delay_for(2).count(), 400);
  EXPECT_EQ(p.delay_for(3).count(), 500);
}

TEST(ControlKind, StringsRoundTrip) {
  for (ControlKind k : {ControlKind::PromptNumerical, ControlKind::RepeLinear, ControlKind::RepeProjection,
                        ControlKind::TaskVectorFinetune}) {
    EXPECT_EQ(control_kind_from_string(to_string(k)), k);
  }
  EXPECT_FALSE(is_steering(ControlKind::PromptNumerical));
  EXPECT_TRUE(is_steering(ControlKind::RepeProjection));
  EXPECT_THROW(control_kind_from_string("magic"), ValidationError);
}
