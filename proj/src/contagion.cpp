#include "cobra/contagion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "cobra/error.hpp"
#include "cobra/io.hpp"
#include "cobra/testbed.hpp"

namespace cobra {

namespace {

// Neutral vocabulary: none of these words is in the sentiment lexicon.
constexpr std::string_view kTopics[] = {
    "my commute", "the new job", "this apartment", "the group chat", "my landlord", "the weather",
    "the project", "the phone bill", "my team", "the neighbors", "school", "the traffic",
    "the bus schedule", "the budget", "my sleep", "the news", "the rent", "this city",
    "the office", "the hospital visit"};

constexpr std::string_view kNegativeTemplates[] = {
    "Feeling so {a} today. Everything about {t} is {b}.",
    "Another {a} week. Honestly {t} has left me {b}.",
    "I am {a} and {b}, and {t} keeps getting worse.",
    "Why is {t} always this {a}? I feel {b}.",
    "Can't stop thinking about {t}. So {a}, so {b}.",
    "Woke up {a} again. {T} is {b} and nobody cares.",
};

constexpr std::string_view kNeutralTemplates[] = {
    "Update on {t}: nothing new to report this {d}.",
    "Spent the {d} sorting out {t}. Will check again later.",
    "Quick note about {t} for anyone asking this {d}.",
    "Reading up on {t} during the {d}.",
    "Noticed a change with {t} this {d}. Details tomorrow.",
    "Planning around {t} for the rest of the {d}.",
};

constexpr std::string_view kDayParts[] = {"morning", "afternoon", "evening", "weekend", "week", "month"};

std::string fill(std::string_view tmpl, std::string_view a, std::string_view b, std::string_view t,
                 std::string_view d) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
      switch (tmpl[i + 1]) {
        case 'a': out += a; break;
        case 'b': out += b; break;
        case 't': out += t; break;
        case 'd': out += d; break;
        case 'T': {
          std::string cap(t);
          cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
          out += cap;
          break;
        }
        default: out += tmpl.substr(i, 3);
      }
      i += 2;
    } else {
      out.push_back(tmpl[i]);
    }
  }
  return out;
}

template <typename Array>
std::string_view pick(const Array& a, Rng& rng) {
  return a[rng.below(std::size(a))];
}

std::vector<std::size_t> sample_without_replacement(const std::vector<std::size_t>& pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> items = pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.below(items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string_view to_string(Valence v) { return v == Valence::Negative ? "negative" : "neutral"; }

Valence valence_from_string(std::string_view s) {
  if (s == "negative") return Valence::Negative;
  if (s == "neutral") return Valence::Neutral;
  throw ValidationError("unknown valence '" + std::string(s) + "' (expected negative or neutral)");
}

PostCorpus::PostCorpus(std::vector<Post> posts) : posts_(std::move(posts)) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < posts_.size(); ++i) {
    const Post& p = posts_[i];
    if (p.id.empty()) throw ValidationError("corpus post " + std::to_string(i) + " has an empty id");
    if (!seen.insert(p.id).second) throw ValidationError("corpus has duplicate post id '" + p.id + "'");
    (p.valence == Valence::Negative ? negative_ : neutral_).push_back(i);
  }
}

PostCorpus PostCorpus::parse_jsonl(std::string_view text) {
  std::vector<Post> posts;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      posts.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                       valence_from_string(j.at("valence").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return PostCorpus(std::move(posts));
}

PostCorpus PostCorpus::load_jsonl(const std::filesystem::path& path) { return parse_jsonl(read_text_file(path)); }

PostCorpus PostCorpus::bundled() { return load_jsonl(data_dir() / "contagion" / "corpus.jsonl"); }

std::string PostCorpus::to_jsonl() const {
  std::string out;
  for (const auto& p : posts_) {
    out += nlohmann::json{{"id", p.id}, {"text", p.text}, {"valence", to_string(p.valence)}}.dump();
    out += '\n';
  }
  return out;
}

PostCorpus synthesize_corpus(std::size_t negative_count, std::size_t neutral_count, Seed seed) {
  Rng rng(seed);
  const auto neg_words = LexiconScorer::negative_words();
  std::vector<Post> posts;
  std::set<std::string> texts;
  constexpr std::size_t kMaxAttempts = 1000000;
  std::size_t attempts = 0;
  while (posts.size() < negative_count) {
    if (++attempts > kMaxAttempts) throw ValidationError("cannot synthesize that many unique negative posts");
    const std::string_view a = neg_words[rng.below(neg_words.size())];
    const std::string_view b = neg_words[rng.below(neg_words.size())];
    if (a == b) continue;
    std::string text = fill(pick(kNegativeTemplates, rng), a, b, pick(kTopics, rng), "");
    if (!texts.insert(text).second) continue;
    posts.push_back({"neg-" + std::to_string(posts.size() + 1), std::move(text), Valence::Negative});
  }
  std::size_t neutral = 0;
  attempts = 0;
  while (neutral < neutral_count) {
    if (++attempts > kMaxAttempts) throw ValidationError("cannot synthesize that many unique neutral posts");
    std::string text = fill(pick(kNeutralTemplates, rng), "", "", pick(kTopics, rng), pick(kDayParts, rng));
    if (!texts.insert(text).second) continue;
    posts.push_back({"neu-" + std::to_string(++neutral), std::move(text), Valence::Neutral});
  }
  return PostCorpus(std::move(posts));
}

std::vector<Post> build_feed(const PostCorpus& corpus, int negative_count, int filler_count, Seed seed) {
  if (negative_count < 0 || filler_count < 0) throw ValidationError("feed counts must be >= 0");
  const auto neg = static_cast<std::size_t>(negative_count);
  const auto fill_n = static_cast<std::size_t>(filler_count);
  if (neg > corpus.negative_indices().size()) {
    throw ValidationError("insufficient corpus: " + std::to_string(neg) + " negative posts requested, " +
                          std::to_string(corpus.negative_indices().size()) + " available");
  }
  if (fill_n > corpus.neutral_indices().size()) {
    throw ValidationError("insufficient corpus: " + std::to_string(fill_n) + " neutral posts requested, " +
                          std::to_string(corpus.neutral_indices().size()) + " available");
  }
  Rng rng(seed);
  std::vector<std::size_t> chosen = sample_without_replacement(corpus.negative_indices(), neg, rng);
  const std::vector<std::size_t> filler = sample_without_replacement(corpus.neutral_indices(), fill_n, rng);
  chosen.insert(chosen.end(), filler.begin(), filler.end());
  shuffle(std::span<std::size_t>(chosen), rng);
  std::vector<Post> feed;
  feed.reserve(chosen.size());
  for (std::size_t i : chosen) feed.push_back(corpus.posts()[i]);
  return feed;
}

std::string render_feed_prompt(const std::vector<Post>& feed) {
  std::string out = "You are scrolling through your social media feed. These are the posts you just read:\n\n";
  for (std::size_t i = 0; i < feed.size(); ++i) {
    out += "Post " + std::to_string(i + 1) + ": " + feed[i].text + "\n";
  }
  out += "\nNow write a short post of your own (two or three sentences) to share with your followers.";
  return out;
}

DoseResponseResult run_dose_response(const std::vector<ContagionAgent>& agents, const PostCorpus& corpus,
                                     const SentimentScorer& scorer, Seed seed, const DoseResponseOptions& options) {
  if (agents.empty()) throw ValidationError("dose-response needs at least one agent");
  if (options.trials_per_cell < 1) throw ValidationError("trials_per_cell must be >= 1");
  if (options.doses.empty()) throw ValidationError("dose grid must not be empty");
  for (int d : options.doses) {
    if (d < 0 || d > options.feed_size) {
      throw ValidationError("dose " + std::to_string(d) + " outside [0, feed_size=" +
                            std::to_string(options.feed_size) + "]");
    }
  }
  {
    std::set<std::string> labels;
    for (const auto& a : agents) {
      if (!a.agent) throw ValidationError("contagion agent '" + a.label + "' has no backend");
      if (!labels.insert(a.label).second) throw ValidationError("duplicate contagion agent label '" + a.label + "'");
    }
  }
  // Fail on an undersized corpus before issuing any request.
  const int max_dose = *std::max_element(options.doses.begin(), options.doses.end());
  const int min_dose = *std::min_element(options.doses.begin(), options.doses.end());
  build_feed(corpus, max_dose, options.feed_size - max_dose, 0);
  build_feed(corpus, min_dose, options.feed_size - min_dose, 0);

  const std::size_t n_doses = options.doses.size();
  const auto trials = static_cast<std::size_t>(options.trials_per_cell);
  const std::size_t total = agents.size() * n_doses * trials;

  DoseResponseResult result;
  result.scorer_id = scorer.id();
  result.trials.resize(total);

  int workers = 0;
  for (const auto& a : agents) workers = workers == 0 ? a.agent->max_concurrency() : std::min(workers, a.agent->max_concurrency());

  const Seed feed_master = derive_seed(seed, "feed");
  for_each_index(total, options.execution, workers, [&](std::size_t k) {
    const std::size_t a = k / (n_doses * trials);
    const std::size_t d = (k / trials) % n_doses;
    const std::size_t t = k % trials;
    const ContagionAgent& agent = agents[a];
    const int dose = options.doses[d];

    FeedTrial& rec = result.trials[k];
    rec.agent = agent.label;
    rec.cbi = agent.cbi;
    rec.dose = dose;
    rec.trial = static_cast<int>(t);
    // Every agent reads the same feed in a given (dose, trial) cell.
    const std::vector<Post> feed =
        build_feed(corpus, dose, options.feed_size - dose, derive_seed(derive_seed(feed_master, d), "trial", t));
    for (const auto& p : feed) rec.feed_ids.push_back(p.id);

    Request req;
    req.user_text = render_feed_prompt(feed);
    req.system_prompt = agent.agent->config().system_prompt;
    req.temperature = agent.agent->config().temperature;
    req.max_tokens = options.max_tokens;
    req.seed = derive_seed(derive_seed(derive_seed(seed, agent.label), "dose", d), "trial", t);
    try {
      rec.generated_post = agent.agent->generate(req);
      rec.sentiment = scorer.score(rec.generated_post);
    } catch (const AuthError&) {
      throw;
    } catch (const BackendError& e) {
      rec.error = e.what();
    }
  });

  for (std::size_t a = 0; a < agents.size(); ++a) {
    for (std::size_t d = 0; d < n_doses; ++d) {
      DoseCell cell;
      cell.agent = agents[a].label;
      cell.cbi = agents[a].cbi;
      cell.dose = options.doses[d];
      std::vector<double> values;
      for (std::size_t t = 0; t < trials; ++t) {
        const FeedTrial& rec = result.trials[(a * n_doses + d) * trials + t];
        if (rec.ok()) values.push_back(rec.sentiment.valence());
        else ++cell.failed;
      }
      cell.n = values.size();
      cell.ok = static_cast<double>(cell.failed) <= options.max_trial_loss * static_cast<double>(trials) &&
                !values.empty();
      if (!values.empty()) {
        cell.mean = mean_of(values);
        if (values.size() > 1) {
          double ss = 0.0;
          for (double v : values) ss += (v - cell.mean) * (v - cell.mean);
          cell.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
        }
      }
      result.cells.push_back(cell);
    }
  }
  return result;
}

std::string dose_response_csv(const DoseResponseResult& result) {
  std::ostringstream out;
  out.precision(17);
  out << "agent,cbi,dose,mean,std,n\n";
  for (const auto& c : result.cells) {
    out << c.agent << ',' << c.cbi << ',' << c.dose << ',';
    if (c.ok) out << c.mean << ',' << c.std;
    else out << ',';
    out << ',' << c.n << '\n';
  }
  return out.str();
}

DoseRegression regress_dose(const DoseResponseResult& result, const std::string& agent) {
  std::vector<double> xs, ys;
  double cbi = 0.0;
  for (const auto& t : result.trials) {
    if (t.agent != agent || !t.ok()) continue;
    xs.push_back(t.dose);
    ys.push_back(t.sentiment.valence());
    cbi = t.cbi;
  }
  if (xs.size() < 3) throw ValidationError("dose regression for '" + agent + "' needs at least 3 successful trials");
  const double mx = mean_of(xs);
  const double my = mean_of(ys);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0) throw ValidationError("dose regression needs at least two distinct doses");
  DoseRegression r;
  r.agent = agent;
  r.cbi = cbi;
  r.n = xs.size();
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (r.intercept + r.slope * xs[i]);
    rss += e * e;
  }
  r.slope_stderr = std::sqrt(rss / static_cast<double>(xs.size() - 2) / sxx);
  return r;
}

nlohmann::json to_json(const FeedTrial& t) {
  nlohmann::json j{{"agent", t.agent},
                   {"cbi", t.cbi},
                   {"dose", t.dose},
                   {"trial", t.trial},
                   {"feed_ids", t.feed_ids},
                   {"generated_post", t.generated_post},
                   {"p_pos", t.sentiment.p_pos},
                   {"p_neg", t.sentiment.p_neg},
                   {"p_neu", t.sentiment.p_neu},
                   {"sentiment", t.sentiment.valence()}};
  if (!t.ok()) j["error"] = t.error;
  return j;
}

nlohmann::json to_json(const DoseCell& c) {
  return {{"agent", c.agent}, {"cbi", c.cbi},       {"dose", c.dose},     {"mean", c.mean},
          {"std", c.std},     {"n", c.n},           {"failed", c.failed}, {"ok", c.ok}};
}

nlohmann::json to_json(const DoseRegression& r) {
  return {{"agent", r.agent},         {"cbi", r.cbi}, {"slope", r.slope}, {"intercept", r.intercept},
          {"slope_stderr", r.slope_stderr}, {"n", r.n}};
}

std::vector<std::string> baseline_persona_prompts() {
  std::vector<std::string> out;
  for (const char* degree : {"no", "little", "some", "much"}) {
    out.push_back(std::string("You are a user with ") + degree + " Bandwagon Effect.");
  }
  return out;
}

std::vector<double> cobra_cbi_levels() {
  constexpr double kLow = 2.55;
  constexpr double kHigh = 3.13;
  std::vector<double> levels;
  for (int i = 0; i < 5; ++i) levels.push_back(kLow + (kHigh - kLow) * i / 4.0);
  levels.back() = kHigh;
  return levels;
}

}  // namespace cobra
