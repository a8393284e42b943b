#include "cobra/cbi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cobra/error.hpp"

namespace cobra {

OptionDistribution OptionDistribution::from_probs(const std::array<double, kOptionCount>& probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("option probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ValidationError("option probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
  return OptionDistribution(probs);
}

OptionDistribution OptionDistribution::normalized(const std::array<double, kOptionCount>& mass) {
  double total = 0.0;
  for (double m : mass) {
    if (!(m >= 0.0) || !std::isfinite(m)) throw ValidationError("option mass must be finite and non-negative");
    total += m;
  }
  if (total <= 0.0) throw ValidationError("no probability mass on any option");
  std::array<double, kOptionCount> p{};
  for (std::size_t i = 0; i < kOptionCount; ++i) p[i] = mass[i] / total;
  return OptionDistribution(p);
}

OptionDistribution OptionDistribution::point_mass(Option o) {
  std::array<double, kOptionCount> p{};
  p[index_of(o)] = 1.0;
  return OptionDistribution(p);
}

OptionDistribution OptionDistribution::uniform() {
  return OptionDistribution({0.2, 0.2, 0.2, 0.2, 0.2});
}

double weighted_score(const OptionDistribution& d) {
  double s = 0.0;
  for (std::size_t j = 0; j < kOptionCount; ++j) s += kLikertWeights[j] * d.at(j);
  return s;
}

CbiMeasurement compute_cbi(const std::string& paradigm_id, std::span<const VariantResponse> responses,
                           std::size_t expected_n) {
  if (responses.size() != expected_n) {
    throw ValidationError("expected " + std::to_string(expected_n) + " variant responses, got " +
                          std::to_string(responses.size()));
  }
  if (expected_n == 0) throw ValidationError("cannot compute a CBI over zero variants");

  std::vector<const VariantResponse*> ordered;
  ordered.reserve(responses.size());
  for (const auto& r : responses) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(),
            [](const VariantResponse* a, const VariantResponse* b) { return a->variant_index < b->variant_index; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->variant_index == ordered[i - 1]->variant_index) {
      throw ValidationError("duplicate response for variant " + std::to_string(ordered[i]->variant_index));
    }
  }

  CbiMeasurement m;
  m.paradigm_id = paradigm_id;
  m.n_variants = expected_n;
  m.source = ordered.front()->source;
  double sum = 0.0;
  for (const auto* r : ordered) {
    const double s = weighted_score(r->distribution);
    m.per_variant_scores.push_back(s);
    m.variant_indices.push_back(r->variant_index);
    m.total_samples += r->sample_count;
    m.parse_rejects += r->parse_rejects;
    if (r->source == ResponseSource::Frequencies) m.source = ResponseSource::Frequencies;
    sum += s;
  }
  const double n = static_cast<double>(expected_n);
  m.value = std::clamp(sum / n, 0.0, 4.0);
  if (expected_n > 1) {
    double ss = 0.0;
    for (double s : m.per_variant_scores) ss += (s - m.value) * (s - m.value);
    m.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return m;
}

OptionDistribution estimate_from_samples(std::span<const Option> choices) {
  if (choices.empty()) throw ValidationError("cannot estimate a distribution from zero samples");
  std::array<std::size_t, kOptionCount> counts{};
  for (Option o : choices) ++counts[index_of(o)];
  std::array<double, kOptionCount> p{};
  const double n = static_cast<double>(choices.size());
  for (std::size_t i = 0; i < kOptionCount; ++i) p[i] = static_cast<double>(counts[i]) / n;
  return OptionDistribution::from_probs(p);
}

OptionDistribution unpermute(const std::array<double, kOptionCount>& by_position,
                             const OptionPermutation& permutation) {
  std::array<double, kOptionCount> canonical{};
  for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
    canonical[index_of(permutation.canonical_at(pos))] = by_position[pos];
  }
  return OptionDistribution::from_probs(canonical);
}

std::array<double, kOptionCount> permute(const OptionDistribution& d, const OptionPermutation& permutation) {
  std::array<double, kOptionCount> by_position{};
  for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
    by_position[pos] = d[permutation.canonical_at(pos)];
  }
  return by_position;
}

}  // namespace cobra
