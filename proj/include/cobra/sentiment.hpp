#pragma once

// Sentiment scoring for generated posts. Valence is p_pos - p_neg.

#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace cobra {

struct SentimentTriple {
  double p_pos = 0.0;
  double p_neg = 0.0;
  double p_neu = 1.0;

  double valence() const { return p_pos - p_neg; }
};

class SentimentScorer {
 public:
  virtual ~SentimentScorer() = default;
  virtual std::string id() const = 0;
  virtual SentimentTriple score(std::string_view text) const = 0;
};

/// Word-count scorer over fixed lists: each lowercase alphabetic token counts
/// as positive, negative or neutral, and the triple is the share of each.
/// Empty text (no tokens) scores (0, 0, 1).
class LexiconScorer final : public SentimentScorer {
 public:
  std::string id() const override { return "lexicon-v1"; }
  SentimentTriple score(std::string_view text) const override;

  static std::span<const std::string_view> positive_words();
  static std::span<const std::string_view> negative_words();
  static bool is_positive(std::string_view lowercase_word);
  static bool is_negative(std::string_view lowercase_word);
};

SentimentTriple lexicon_score(std::string_view text);

std::shared_ptr<const SentimentScorer> make_lexicon_scorer();

}  // namespace cobra
