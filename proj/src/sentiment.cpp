#include "cobra/sentiment.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <string>

namespace cobra {

namespace {

// Sorted, so membership is a binary search.
constexpr std::array<std::string_view, 40> kPositive{
    "amazing",  "awesome",   "beautiful", "bright",    "calm",      "celebrate", "cheerful", "confident",
    "delighted", "excellent", "excited",   "fantastic", "fun",       "glad",      "good",     "grateful",
    "great",    "happy",     "helpful",   "hope",      "hopeful",   "inspired",  "joy",      "kind",
    "love",     "lovely",    "lucky",     "nice",      "optimistic", "peaceful", "pleased",  "proud",
    "relaxed",  "smile",     "sunny",     "support",   "thankful",  "win",       "wonderful", "yay"};

constexpr std::array<std::string_view, 40> kNegative{
    "afraid",    "angry",     "annoyed",   "anxious",  "awful",     "bad",      "betrayed", "bitter",
    "broken",    "cruel",     "depressed", "disaster", "disgusted", "dread",    "exhausted", "fail",
    "failed",    "fear",      "furious",   "grief",    "hate",      "hopeless", "horrible", "hurt",
    "lonely",    "lost",      "miserable", "pain",     "sad",       "scared",   "sick",     "sorry",
    "stressed",  "terrible",  "tired",     "ugly",     "unfair",    "upset",    "worried",  "worst"};

bool contains(std::span<const std::string_view> sorted, std::string_view w) {
  return std::binary_search(sorted.begin(), sorted.end(), w);
}

}  // namespace

std::span<const std::string_view> LexiconScorer::positive_words() { return kPositive; }
std::span<const std::string_view> LexiconScorer::negative_words() { return kNegative; }
bool LexiconScorer::is_positive(std::string_view w) { return contains(kPositive, w); }
bool LexiconScorer::is_negative(std::string_view w) { return contains(kNegative, w); }

SentimentTriple LexiconScorer::score(std::string_view text) const {
  std::size_t pos = 0, neg = 0, total = 0;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    ++total;
    if (is_positive(word)) ++pos;
    else if (is_negative(word)) ++neg;
    word.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u)) word.push_back(static_cast<char>(std::tolower(u)));
    else flush();
  }
  flush();
  if (total == 0) return {0.0, 0.0, 1.0};
  const double n = static_cast<double>(total);
  return {static_cast<double>(pos) / n, static_cast<double>(neg) / n, static_cast<double>(total - pos - neg) / n};
}

SentimentTriple lexicon_score(std::string_view text) { return LexiconScorer{}.score(text); }

std::shared_ptr<const SentimentScorer> make_lexicon_scorer() { return std::make_shared<LexiconScorer>(); }

}  // namespace cobra
