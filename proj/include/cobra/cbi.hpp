#pragma once

// Cognitive Bias Index: the mean, over prompt variants, of the Likert-weighted
// option expectation sum_j (5 - j) * P(O_j).

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cobra/testbed.hpp"

namespace cobra {

/// Probability vector over the canonical options O1..O5.
class OptionDistribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Throws ValidationError unless every entry lies in [0,1] and the entries
  /// sum to 1 within kSumTolerance.
  static OptionDistribution from_probs(const std::array<double, kOptionCount>& probs);

  /// Renormalizes non-negative mass; throws if the total is zero.
  static OptionDistribution normalized(const std::array<double, kOptionCount>& mass);

  static OptionDistribution point_mass(Option o);
  static OptionDistribution uniform();

  double operator[](Option o) const { return probs_[index_of(o)]; }
  double at(std::size_t canonical_index) const { return probs_.at(canonical_index); }
  const std::array<double, kOptionCount>& probs() const { return probs_; }

  bool operator==(const OptionDistribution&) const = default;

 private:
  explicit OptionDistribution(const std::array<double, kOptionCount>& p) : probs_(p) {}
  std::array<double, kOptionCount> probs_{};
};

/// sum_j (5 - j) * P(O_j), in [0, 4].
double weighted_score(const OptionDistribution& d);

enum class ResponseSource { ExactProbs, Frequencies };

struct VariantResponse {
  std::size_t variant_index = 0;
  OptionDistribution distribution = OptionDistribution::uniform();
  ResponseSource source = ResponseSource::ExactProbs;
  std::size_t sample_count = 0;  // 0 for ExactProbs
  OptionPermutation permutation_used = OptionPermutation::identity();
  /// Probability mass the agent put on the five option labels before
  /// renormalization (1 for Frequencies).
  double valid_mass = 1.0;
  std::size_t parse_rejects = 0;
};

struct CbiMeasurement {
  std::string paradigm_id;
  double value = 0.0;
  std::vector<double> per_variant_scores;  // ordered by variant index
  std::vector<std::size_t> variant_indices;
  std::size_t n_variants = 0;
  double standard_error = 0.0;
  ResponseSource source = ResponseSource::ExactProbs;
  std::size_t total_samples = 0;
  std::size_t parse_rejects = 0;
  std::vector<std::size_t> dropped_variants;
};

/// Aggregates one response per variant. Throws ValidationError on duplicate
/// variant indices or when |responses| != expected_n.
CbiMeasurement compute_cbi(const std::string& paradigm_id, std::span<const VariantResponse> responses,
                           std::size_t expected_n);

/// Empirical frequencies of sampled canonical options. Throws on empty input.
OptionDistribution estimate_from_samples(std::span<const Option> choices);

/// Mass per presented position -> canonical order (exact moves, no arithmetic).
OptionDistribution unpermute(const std::array<double, kOptionCount>& by_position,
                             const OptionPermutation& permutation);

/// Canonical order -> mass per presented position.
std::array<double, kOptionCount> permute(const OptionDistribution& d, const OptionPermutation& permutation);

}  // namespace cobra
