#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "cobra/contagion.hpp"
#include "cobra/error.hpp"
#include "cobra/mock.hpp"
#include "test_support.hpp"

using namespace cobra;
using cobra::testing::ScriptedAgent;

namespace {

const PostCorpus& corpus() {
  static const PostCorpus c = PostCorpus::bundled();
  return c;
}

ContagionAgent mock_agent(const std::string& label, double bias, double kappa, int words = 128) {
  MockAgentSpec s = cobra::testing::mock_at(bias);
  s.contagion_kappa = kappa;
  s.contagion_baseline = 0.5;
  s.post_words = words;
  return {label, bias, make_mock(s, mock_config(label))};
}

int negatives_in(const std::vector<Post>& feed) {
  int n = 0;
  for (const auto& p : feed) n += p.valence == Valence::Negative;
  return n;
}

}  // namespace

TEST(Corpus, BundledHasBothPools) {
  EXPECT_EQ(corpus().negative_indices().size(), 1000u);
  EXPECT_EQ(corpus().neutral_indices().size(), 500u);
  for (std::size_t i : corpus().negative_indices()) {
    EXPECT_LT(lexicon_score(corpus().posts()[i].text).valence(), 0.0) << corpus().posts()[i].text;
  }
  for (std::size_t i : corpus().neutral_indices()) {
    EXPECT_EQ(lexicon_score(corpus().posts()[i].text).valence(), 0.0) << corpus().posts()[i].text;
  }
}

TEST(Corpus, JsonlRoundTripAndErrors) {
  const PostCorpus small = synthesize_corpus(5, 4, 3);
  const PostCorpus back = PostCorpus::parse_jsonl(small.to_jsonl());
  ASSERT_EQ(back.posts().size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(back.posts()[i].id, small.posts()[i].id);
    EXPECT_EQ(back.posts()[i].text, small.posts()[i].text);
    EXPECT_EQ(back.posts()[i].valence, small.posts()[i].valence);
  }
  EXPECT_EQ(synthesize_corpus(5, 4, 3).to_jsonl(), small.to_jsonl());
  EXPECT_THROW(PostCorpus::parse_jsonl("{\"id\":\"a\",\"text\":\"x\",\"valence\":\"angry\"}\n"), ValidationError);
  EXPECT_THROW(PostCorpus::parse_jsonl("not json\n"), ValidationError);
  EXPECT_THROW(PostCorpus({{"a", "x", Valence::Neutral}, {"a", "y", Valence::Neutral}}), ValidationError);
}

TEST(Feed, DoseControlsNegativeCount) {
  const auto none = build_feed(corpus(), 0, 20, 1);
  EXPECT_EQ(none.size(), 20u);
  EXPECT_EQ(negatives_in(none), 0);
  const auto heavy = build_feed(corpus(), 15, 5, 1);
  EXPECT_EQ(heavy.size(), 20u);
  EXPECT_EQ(negatives_in(heavy), 15);
  std::set<std::string> ids;
  for (const auto& p : heavy) ids.insert(p.id);
  EXPECT_EQ(ids.size(), 20u);
}

TEST(Feed, DeterministicPerSeed) {
  const auto a = build_feed(corpus(), 7, 13, 42);
  const auto b = build_feed(corpus(), 7, 13, 42);
  const auto c = build_feed(corpus(), 7, 13, 43);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    differs |= a[i].id != c[i].id;
  }
  EXPECT_TRUE(differs);
}

TEST(Feed, InsufficientCorpusIsRejected) {
  const PostCorpus tiny = synthesize_corpus(3, 3, 0);
  EXPECT_THROW(build_feed(tiny, 4, 0, 0), ValidationError);
  EXPECT_THROW(build_feed(tiny, 0, 4, 0), ValidationError);
}

TEST(Feed, PromptListsEveryPost) {
  const auto feed = build_feed(corpus(), 2, 3, 5);
  const std::string prompt = render_feed_prompt(feed);
  for (std::size_t i = 0; i < feed.size(); ++i) {
    EXPECT_NE(prompt.find("Post " + std::to_string(i + 1) + ": " + feed[i].text), std::string::npos);
  }
  EXPECT_EQ(MockAgent::negative_dose(prompt), 2);
}

TEST(DoseResponse, EchoAgentGivesAFlatCurve) {
  const std::vector<ContagionAgent> agents{
      {"echo", 0.0, std::make_shared<const ScriptedAgent>(std::array<double, 5>{0, 0, 0, 0, 1}, "a happy day")}};
  DoseResponseOptions opt;
  opt.trials_per_cell = 4;
  const auto r = run_dose_response(agents, corpus(), LexiconScorer{}, 1, opt);
  ASSERT_EQ(r.cells.size(), 16u);
  for (const auto& c : r.cells) {
    EXPECT_DOUBLE_EQ(c.mean, 1.0 / 3.0);
    EXPECT_EQ(c.std, 0.0);
    EXPECT_EQ(c.n, 4u);
  }
  EXPECT_NEAR(regress_dose(r, "echo").slope, 0.0, 1e-12);
  EXPECT_EQ(r.scorer_id, "lexicon-v1");
}

TEST(DoseResponse, MockSlopeIsRecovered) {
  const std::vector<ContagionAgent> agents{mock_agent("b3", 3.0, 0.02)};
  DoseResponseOptions opt;
  opt.trials_per_cell = 10;
  const auto r = run_dose_response(agents, corpus(), LexiconScorer{}, 9, opt);
  const auto reg = regress_dose(r, "b3");
  EXPECT_EQ(reg.n, 160u);
  EXPECT_NEAR(reg.slope, -0.06, 3 * reg.slope_stderr + 1e-3);
  EXPECT_NEAR(reg.intercept, 0.5, 0.05);
}

TEST(DoseResponse, HigherBiasGivesSteeperDecline) {
  std::vector<ContagionAgent> agents;
  for (double b : {1.0, 2.0, 3.0, 4.0}) agents.push_back(mock_agent("b" + std::to_string(static_cast<int>(b)), b, 0.02));
  DoseResponseOptions opt;
  opt.trials_per_cell = 8;
  const auto r = run_dose_response(agents, corpus(), LexiconScorer{}, 4, opt);
  double prev = 1.0;
  for (const auto& a : agents) {
    const double slope = regress_dose(r, a.label).slope;
    EXPECT_LT(slope, prev) << a.label;
    prev = slope;
  }
}

TEST(DoseResponse, SerialMatchesParallel) {
  const std::vector<ContagionAgent> agents{mock_agent("a", 2.0, 0.03, 32), mock_agent("b", 3.0, 0.03, 32)};
  DoseResponseOptions opt;
  opt.trials_per_cell = 3;
  opt.execution = Execution::Serial;
  const auto s = run_dose_response(agents, corpus(), LexiconScorer{}, 2, opt);
  opt.execution = Execution::Parallel;
  const auto p = run_dose_response(agents, corpus(), LexiconScorer{}, 2, opt);
  EXPECT_EQ(dose_response_csv(s), dose_response_csv(p));
}

TEST(DoseResponse, CsvHeaderAndRows) {
  const std::vector<ContagionAgent> agents{mock_agent("a", 2.0, 0.03, 32)};
  DoseResponseOptions opt;
  opt.doses = {0, 5};
  opt.trials_per_cell = 2;
  const std::string csv = dose_response_csv(run_dose_response(agents, corpus(), LexiconScorer{}, 2, opt));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "agent,cbi,dose,mean,std,n");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.rfind("a,2,", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST(DoseResponse, FailedTrialsAreCountedAndCellsMarked) {
  auto flaky = std::make_shared<const cobra::testing::CallbackAgent>([](const Request&) -> std::string {
    throw TransportError("timeout");
  });
  DoseResponseOptions opt;
  opt.doses = {0, 1};
  opt.trials_per_cell = 2;
  const auto r = run_dose_response({{"f", 1.0, flaky}}, corpus(), LexiconScorer{}, 1, opt);
  for (const auto& c : r.cells) {
    EXPECT_FALSE(c.ok);
    EXPECT_EQ(c.failed, 2u);
  }
  EXPECT_NE(dose_response_csv(r).find("f,1,0,,,0"), std::string::npos);
  EXPECT_THROW(regress_dose(r, "f"), ValidationError);
}

TEST(DoseResponse, ValidatesOptions) {
  const std::vector<ContagionAgent> agents{mock_agent("a", 2.0, 0.03)};
  DoseResponseOptions opt;
  opt.doses = {21};
  EXPECT_THROW(run_dose_response(agents, corpus(), LexiconScorer{}, 1, opt), ValidationError);
  EXPECT_THROW(run_dose_response({}, corpus(), LexiconScorer{}, 1), ValidationError);
  EXPECT_THROW(run_dose_response({agents[0], agents[0]}, corpus(), LexiconScorer{}, 1), ValidationError);
}

TEST(Presets, LevelsAndPersonas) {
  const auto levels = cobra_cbi_levels();
  ASSERT_EQ(levels.size(), 5u);
  EXPECT_DOUBLE_EQ(levels.front(), 2.55);
  EXPECT_DOUBLE_EQ(levels.back(), 3.13);
  EXPECT_EQ(baseline_persona_prompts().size(), 4u);
}
