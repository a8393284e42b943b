#pragma once

// Emotional-contagion experiment: agents with programmed bandwagon levels
// read a feed with a controlled number of negative posts, write a post of
// their own, and the post is sentiment-scored. Sweeping the dose gives one
// dose-response curve per agent.

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/backend.hpp"
#include "cobra/execution.hpp"
#include "cobra/sentiment.hpp"

namespace cobra {

enum class Valence { Negative, Neutral };

std::string_view to_string(Valence v);
Valence valence_from_string(std::string_view s);

struct Post {
  std::string id;
  std::string text;
  Valence valence = Valence::Neutral;
};

class PostCorpus {
 public:
  PostCorpus() = default;
  /// Throws ValidationError on duplicate or empty ids.
  explicit PostCorpus(std::vector<Post> posts);

  /// JSON lines: {"id": ..., "text": ..., "valence": "negative" | "neutral"}.
  static PostCorpus parse_jsonl(std::string_view text);
  static PostCorpus load_jsonl(const std::filesystem::path& path);
  static PostCorpus bundled();

  std::string to_jsonl() const;

  const std::vector<Post>& posts() const { return posts_; }
  const std::vector<std::size_t>& negative_indices() const { return negative_; }
  const std::vector<std::size_t>& neutral_indices() const { return neutral_; }

 private:
  std::vector<Post> posts_;
  std::vector<std::size_t> negative_;
  std::vector<std::size_t> neutral_;
};

/// Template-generated corpus: negative posts carry negative lexicon words,
/// neutral posts carry none. Deterministic per seed.
PostCorpus synthesize_corpus(std::size_t negative_count, std::size_t neutral_count, Seed seed);

/// `negative_count` negative and `filler_count` neutral posts, each drawn
/// without replacement, then shuffled. Throws when the corpus is too small.
std::vector<Post> build_feed(const PostCorpus& corpus, int negative_count, int filler_count, Seed seed);

/// Prompt shown to the agent; one "Post k: <text>" line per feed item.
std::string render_feed_prompt(const std::vector<Post>& feed);

struct ContagionAgent {
  std::string label;
  double cbi = 0.0;  // programmed (or nominal) bandwagon level
  AgentPtr agent;
};

struct DoseResponseOptions {
  std::vector<int> doses{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  int trials_per_cell = 30;
  int feed_size = 20;
  double max_trial_loss = 0.2;
  int max_tokens = 96;
  Execution execution = Execution::Parallel;
};

struct FeedTrial {
  std::string agent;
  double cbi = 0.0;
  int dose = 0;
  int trial = 0;
  std::vector<std::string> feed_ids;
  std::string generated_post;
  SentimentTriple sentiment;
  std::string error;  // non-empty when the trial failed

  bool ok() const { return error.empty(); }
};

struct DoseCell {
  std::string agent;
  double cbi = 0.0;
  int dose = 0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
  std::size_t failed = 0;
  bool ok = true;  // false above the allowed trial loss
};

struct DoseResponseResult {
  std::string scorer_id;
  std::vector<DoseCell> cells;   // agent order, then dose order
  std::vector<FeedTrial> trials;
};

DoseResponseResult run_dose_response(const std::vector<ContagionAgent>& agents, const PostCorpus& corpus,
                                     const SentimentScorer& scorer, Seed seed,
                                     const DoseResponseOptions& options = {});

/// Header "agent,cbi,dose,mean,std,n"; failed cells leave mean/std empty.
std::string dose_response_csv(const DoseResponseResult& result);

struct DoseRegression {
  std::string agent;
  double cbi = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  std::size_t n = 0;
};

/// Least squares of per-trial sentiment on dose for one agent.
DoseRegression regress_dose(const DoseResponseResult& result, const std::string& agent);

nlohmann::json to_json(const FeedTrial& trial);
nlohmann::json to_json(const DoseCell& cell);
nlohmann::json to_json(const DoseRegression& regression);

/// Natural-language baseline personas, from "no" to "much" bandwagon effect.
std::vector<std::string> baseline_persona_prompts();

/// Five programmed levels evenly spaced over [2.55, 3.13].
std::vector<double> cobra_cbi_levels();

}  // namespace cobra
