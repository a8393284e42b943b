#pragma once

// Classic social experiment testbed: paradigms, scenario templates with
// scene-adjustable placeholders, the canonical 5-point Likert scale and the
// randomized presentation of its options.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cobra/rng.hpp"

namespace cobra {

inline constexpr std::size_t kOptionCount = 5;

/// Canonical Likert option. O1 encodes the highest bias, O5 the lowest.
enum class Option : std::uint8_t { O1 = 0, O2, O3, O4, O5 };

constexpr std::size_t index_of(Option o) { return static_cast<std::size_t>(o); }
Option option_at(std::size_t canonical_index);

/// Weight (5 - j) of option O_j: 4, 3, 2, 1, 0.
inline constexpr std::array<int, kOptionCount> kLikertWeights{4, 3, 2, 1, 0};

/// Names the built-in bias types; documents may register others.
namespace bias_types {
inline constexpr std::string_view kAuthority = "Authority";
inline constexpr std::string_view kBandwagon = "Bandwagon";
inline constexpr std::string_view kConfirmation = "Confirmation";
inline constexpr std::string_view kFraming = "Framing";
}  // namespace bias_types

struct LikertOptionSet {
  std::array<std::string, kOptionCount> options;

  const std::string& text(Option o) const { return options[index_of(o)]; }
  static constexpr const std::array<int, kOptionCount>& weights() { return kLikertWeights; }
};

struct PlaceholderBinding {
  std::map<std::string, std::string> values;
  std::vector<std::string> tags;
};

struct ParadigmSpec {
  std::string id;
  std::string name;
  std::string bias;  // BiasType id, e.g. "Authority"
  std::string template_text;
  std::vector<PlaceholderBinding> bindings;
  LikertOptionSet options;
  std::size_t expected_variant_count = 0;
};

struct PromptVariant {
  std::string paradigm_id;
  std::size_t index = 0;
  std::string rendered_scenario;
  LikertOptionSet options;
};

enum class LabelScheme : std::uint8_t { Letters, Digits, Roman };

std::string_view to_string(LabelScheme scheme);
const std::array<std::string, kOptionCount>& labels_for(LabelScheme scheme);

/// Bijection from presented position (0..4) to canonical option, plus the
/// label scheme the options were shown under.
class OptionPermutation {
 public:
  static OptionPermutation identity(LabelScheme scheme = LabelScheme::Letters);

  /// Throws ValidationError unless `to_canonical` is a permutation of 0..4.
  static OptionPermutation from_mapping(const std::array<std::size_t, kOptionCount>& to_canonical,
                                        LabelScheme scheme = LabelScheme::Letters);

  /// Permutation with the given lexicographic rank in [0, 120).
  static OptionPermutation from_rank(std::size_t rank, LabelScheme scheme = LabelScheme::Letters);

  Option canonical_at(std::size_t position) const { return option_at(to_canonical_[position]); }
  std::size_t position_of(Option o) const { return to_position_[index_of(o)]; }
  LabelScheme scheme() const { return scheme_; }
  const std::array<std::size_t, kOptionCount>& mapping() const { return to_canonical_; }

  std::size_t rank() const;
  bool is_identity() const;
  OptionPermutation inverse() const;

  bool operator==(const OptionPermutation&) const = default;

 private:
  OptionPermutation() = default;

  std::array<std::size_t, kOptionCount> to_canonical_{};
  std::array<std::size_t, kOptionCount> to_position_{};
  LabelScheme scheme_ = LabelScheme::Letters;
};

struct PresentedPrompt {
  PromptVariant variant;
  OptionPermutation permutation = OptionPermutation::identity();
  std::array<std::string, kOptionCount> labels;
  std::string full_text;
};

// --- templates ---------------------------------------------------------------

/// Placeholder names (`{{name}}`) in order of first appearance.
std::vector<std::string> template_placeholders(std::string_view text);

/// Substitutes every `{{name}}`; throws ValidationError on an unbound name.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

// --- loading -----------------------------------------------------------------

/// Parses one testbed document (a single paradigm object, or a bias-type
/// document with a `paradigms` array) and validates every invariant.
std::vector<ParadigmSpec> load_testbed(const nlohmann::json& document);
std::vector<ParadigmSpec> load_testbed_file(const std::filesystem::path& path);

/// Throws ValidationError naming the offending field.
void validate_paradigm(const ParadigmSpec& spec);

/// Directory holding the bundled data (`COBRA_DATA_DIR` env var overrides the
/// compiled-in default).
std::filesystem::path data_dir();

/// The 8 bundled paradigms, in bias-type order.
std::vector<ParadigmSpec> load_bundled_testbed();

class Testbed {
 public:
  Testbed() = default;
  explicit Testbed(std::vector<ParadigmSpec> paradigms);

  static Testbed bundled();

  const ParadigmSpec& find(std::string_view paradigm_id) const;
  bool contains(std::string_view paradigm_id) const;
  std::vector<const ParadigmSpec*> for_bias(std::string_view bias) const;
  const std::vector<ParadigmSpec>& paradigms() const { return paradigms_; }

 private:
  std::vector<ParadigmSpec> paradigms_;
};

// --- variants & presentation ---------------------------------------------------

/// One variant per binding, in binding order.
std::vector<PromptVariant> expand_variants(const ParadigmSpec& spec);

/// Renders the scenario followed by the options in permuted order.
PresentedPrompt present(const PromptVariant& variant, const OptionPermutation& permutation);

/// Draws the permutation and label scheme from `seed`.
PresentedPrompt randomize_presentation(const PromptVariant& variant, Seed seed);

OptionPermutation random_permutation(Seed seed);

}  // namespace cobra
