#include "cobra/testbed.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cobra/error.hpp"

#ifndef COBRA_DEFAULT_DATA_DIR
#define COBRA_DEFAULT_DATA_DIR "data"
#endif

namespace cobra {

namespace {

constexpr std::string_view kOpen = "{{";
constexpr std::string_view kClose = "}}";

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ValidationError(where + ": " + what);
}

const nlohmann::json& require(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(where + "." + key, "missing required field");
  return *it;
}

std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) fail(where + "." + key, "expected a string");
  return v.get<std::string>();
}

ParadigmSpec parse_paradigm(const nlohmann::json& j, const std::string& where,
                            const std::string& inherited_bias) {
  if (!j.is_object()) fail(where, "expected an object");
  ParadigmSpec spec;
  spec.id = require_string(j, "paradigm_id", where);
  spec.name = j.value("name", spec.id);
  if (j.contains("bias_type")) {
    if (!j["bias_type"].is_string()) fail(where + ".bias_type", "expected a string");
    spec.bias = j["bias_type"].get<std::string>();
  } else {
    spec.bias = inherited_bias;
  }
  if (spec.bias.empty()) fail(where + ".bias_type", "missing required field");
  spec.template_text = require_string(j, "template", where);

  const auto& opts = require(j, "options", where);
  if (!opts.is_array()) fail(where + ".options", "expected an array");
  if (opts.size() != kOptionCount) {
    fail(where + ".options",
         "expected exactly 5 options, got " + std::to_string(opts.size()));
  }
  for (std::size_t i = 0; i < kOptionCount; ++i) {
    if (!opts[i].is_string()) fail(where + ".options[" + std::to_string(i) + "]", "expected a string");
    spec.options.options[i] = opts[i].get<std::string>();
  }

  const auto& weights = require(j, "weights", where);
  if (!weights.is_array() || weights.size() != kOptionCount) {
    fail(where + ".weights", "expected exactly 5 weights [4,3,2,1,0]");
  }
  for (std::size_t i = 0; i < kOptionCount; ++i) {
    if (!weights[i].is_number_integer() || weights[i].get<int>() != kLikertWeights[i]) {
      fail(where + ".weights", "weights must be [4,3,2,1,0]");
    }
  }

  const auto& bindings = require(j, "placeholders", where);
  if (!bindings.is_array()) fail(where + ".placeholders", "expected an array");
  for (std::size_t b = 0; b < bindings.size(); ++b) {
    const std::string bw = where + ".placeholders[" + std::to_string(b) + "]";
    const auto& bj = bindings[b];
    if (!bj.is_object()) fail(bw, "expected an object");
    PlaceholderBinding binding;
    const auto& values = require(bj, "values", bw);
    if (!values.is_object()) fail(bw + ".values", "expected an object");
    for (const auto& [k, v] : values.items()) {
      if (!v.is_string()) fail(bw + ".values." + k, "expected a string");
      binding.values.emplace(k, v.get<std::string>());
    }
    if (bj.contains("tags")) {
      if (!bj["tags"].is_array()) fail(bw + ".tags", "expected an array");
      for (const auto& t : bj["tags"]) {
        if (!t.is_string()) fail(bw + ".tags", "expected strings");
        binding.tags.push_back(t.get<std::string>());
      }
    }
    spec.bindings.push_back(std::move(binding));
  }

  if (j.contains("expected_variants")) {
    const auto& ev = j["expected_variants"];
    if (!ev.is_number_unsigned()) fail(where + ".expected_variants", "expected a non-negative integer");
    spec.expected_variant_count = ev.get<std::size_t>();
  } else {
    spec.expected_variant_count = spec.bindings.size();
  }

  try {
    validate_paradigm(spec);
  } catch (const ValidationError& e) {
    fail(where, e.what());
  }
  return spec;
}

}  // namespace

Option option_at(std::size_t canonical_index) {
  if (canonical_index >= kOptionCount) {
    throw ValidationError("option index " + std::to_string(canonical_index) + " out of range");
  }
  return static_cast<Option>(canonical_index);
}

std::string_view to_string(LabelScheme scheme) {
  switch (scheme) {
    case LabelScheme::Letters: return "letters";
    case LabelScheme::Digits: return "digits";
    case LabelScheme::Roman: return "roman";
  }
  return "letters";
}

const std::array<std::string, kOptionCount>& labels_for(LabelScheme scheme) {
  static const std::array<std::string, kOptionCount> letters{"A", "B", "C", "D", "E"};
  static const std::array<std::string, kOptionCount> digits{"1", "2", "3", "4", "5"};
  static const std::array<std::string, kOptionCount> roman{"I", "II", "III", "IV", "V"};
  switch (scheme) {
    case LabelScheme::Digits: return digits;
    case LabelScheme::Roman: return roman;
    case LabelScheme::Letters: break;
  }
  return letters;
}

// --- OptionPermutation ---------------------------------------------------------

OptionPermutation OptionPermutation::identity(LabelScheme scheme) {
  return from_mapping({0, 1, 2, 3, 4}, scheme);
}

OptionPermutation OptionPermutation::from_mapping(const std::array<std::size_t, kOptionCount>& to_canonical,
                                                  LabelScheme scheme) {
  OptionPermutation p;
  std::array<bool, kOptionCount> seen{};
  for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
    const std::size_t c = to_canonical[pos];
    if (c >= kOptionCount || seen[c]) {
      throw ValidationError("option mapping is not a bijection on {1..5}");
    }
    seen[c] = true;
    p.to_canonical_[pos] = c;
    p.to_position_[c] = pos;
  }
  p.scheme_ = scheme;
  return p;
}

OptionPermutation OptionPermutation::from_rank(std::size_t rank, LabelScheme scheme) {
  if (rank >= 120) throw ValidationError("permutation rank must be < 120");
  std::vector<std::size_t> pool{0, 1, 2, 3, 4};
  std::array<std::size_t, kOptionCount> mapping{};
  std::size_t radix = 24;
  for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
    const std::size_t digit = rank / radix;
    rank %= radix;
    mapping[pos] = pool[digit];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(digit));
    if (pos + 1 < kOptionCount) radix /= (kOptionCount - 1 - pos);
  }
  return from_mapping(mapping, scheme);
}

std::size_t OptionPermutation::rank() const {
  std::size_t r = 0;
  for (std::size_t i = 0; i < kOptionCount; ++i) {
    std::size_t smaller_later = 0;
    for (std::size_t j = i + 1; j < kOptionCount; ++j) {
      if (to_canonical_[j] < to_canonical_[i]) ++smaller_later;
    }
    r = r * (kOptionCount - i) + smaller_later;
  }
  return r;
}

bool OptionPermutation::is_identity() const {
  for (std::size_t i = 0; i < kOptionCount; ++i) {
    if (to_canonical_[i] != i) return false;
  }
  return true;
}

OptionPermutation OptionPermutation::inverse() const {
  return from_mapping(to_position_, scheme_);
}

// --- templates -----------------------------------------------------------------

std::vector<std::string> template_placeholders(std::string_view text) {
  std::vector<std::string> names;
  std::size_t pos = 0;
  while ((pos = text.find(kOpen, pos)) != std::string_view::npos) {
    const auto end = text.find(kClose, pos + kOpen.size());
    if (end == std::string_view::npos) {
      throw ValidationError("template: unterminated placeholder at offset " + std::to_string(pos));
    }
    std::string name = trim(text.substr(pos + kOpen.size(), end - pos - kOpen.size()));
    if (name.empty()) throw ValidationError("template: empty placeholder name");
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(std::move(name));
    pos = end + kClose.size();
  }
  return names;
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size() * 2);
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find(kOpen, pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    const auto close = text.find(kClose, open + kOpen.size());
    if (close == std::string_view::npos) {
      throw ValidationError("template: unterminated placeholder at offset " + std::to_string(open));
    }
    out.append(text.substr(pos, open - pos));
    const std::string name = trim(text.substr(open + kOpen.size(), close - open - kOpen.size()));
    const auto it = values.find(name);
    if (it == values.end()) throw ValidationError("template: placeholder '" + name + "' is not bound");
    out.append(it->second);
    pos = close + kClose.size();
  }
  return out;
}

// --- loading -------------------------------------------------------------------

void validate_paradigm(const ParadigmSpec& spec) {
  if (spec.id.empty()) throw ValidationError("paradigm_id: must be non-empty");
  if (spec.bias.empty()) throw ValidationError("bias_type: must be non-empty");
  for (std::size_t i = 0; i < kOptionCount; ++i) {
    if (trim(spec.options.options[i]).empty()) {
      throw ValidationError("options[" + std::to_string(i) + "]: must be non-empty");
    }
  }
  const auto names = template_placeholders(spec.template_text);
  if (spec.bindings.empty()) throw ValidationError("placeholders: at least one binding required");
  for (std::size_t b = 0; b < spec.bindings.size(); ++b) {
    const auto& binding = spec.bindings[b];
    const std::string where = "placeholders[" + std::to_string(b) + "]";
    if (binding.values.empty()) throw ValidationError(where + ".values: must be non-empty");
    for (const auto& name : names) {
      if (!binding.values.contains(name)) {
        throw ValidationError(where + ".values: missing placeholder '" + name + "'");
      }
    }
    for (const auto& [k, v] : binding.values) {
      if (v.find(kOpen) != std::string::npos || v.find(kClose) != std::string::npos) {
        throw ValidationError(where + ".values." + k + ": contains an unresolved placeholder marker");
      }
      if (trim(v).empty()) throw ValidationError(where + ".values." + k + ": must be non-empty");
    }
  }
  if (spec.expected_variant_count != spec.bindings.size()) {
    throw ValidationError("expected_variants: declared " + std::to_string(spec.expected_variant_count) +
                          " but placeholders expand to " + std::to_string(spec.bindings.size()));
  }
}

std::vector<ParadigmSpec> load_testbed(const nlohmann::json& document) {
  if (!document.is_object()) throw ValidationError("testbed document: expected a JSON object");
  if (document.contains("schema_version")) {
    const auto& v = document["schema_version"];
    if (!v.is_number_integer() || v.get<int>() != 1) {
      throw ValidationError("schema_version: unsupported testbed schema version");
    }
  }
  std::vector<ParadigmSpec> out;
  if (document.contains("paradigms")) {
    const std::string bias = document.value("bias_type", std::string{});
    const auto& arr = document["paradigms"];
    if (!arr.is_array() || arr.empty()) throw ValidationError("paradigms: expected a non-empty array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      out.push_back(parse_paradigm(arr[i], "paradigms[" + std::to_string(i) + "]", bias));
    }
  } else {
    out.push_back(parse_paradigm(document, "paradigm", {}));
  }
  std::set<std::string> ids;
  for (const auto& p : out) {
    if (!ids.insert(p.id).second) throw ValidationError("paradigm_id: duplicate id '" + p.id + "'");
  }
  return out;
}

std::vector<ParadigmSpec> load_testbed_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open testbed document " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON: " + e.what());
  }
  try {
    return load_testbed(doc);
  } catch (const ValidationError& e) {
    throw ValidationError(path.filename().string() + ": " + e.what());
  }
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("COBRA_DATA_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return COBRA_DEFAULT_DATA_DIR;
}

std::vector<ParadigmSpec> load_bundled_testbed() {
  std::vector<ParadigmSpec> all;
  for (const char* name : {"authority.json", "bandwagon.json", "confirmation.json", "framing.json"}) {
    auto part = load_testbed_file(data_dir() / "testbed" / name);
    std::move(part.begin(), part.end(), std::back_inserter(all));
  }
  return all;
}

Testbed::Testbed(std::vector<ParadigmSpec> paradigms) : paradigms_(std::move(paradigms)) {
  std::set<std::string> ids;
  for (const auto& p : paradigms_) {
    validate_paradigm(p);
    if (!ids.insert(p.id).second) throw ValidationError("paradigm_id: duplicate id '" + p.id + "'");
  }
}

Testbed Testbed::bundled() { return Testbed(load_bundled_testbed()); }

const ParadigmSpec& Testbed::find(std::string_view paradigm_id) const {
  for (const auto& p : paradigms_) {
    if (p.id == paradigm_id) return p;
  }
  throw ValidationError("unknown paradigm '" + std::string(paradigm_id) + "'");
}

bool Testbed::contains(std::string_view paradigm_id) const {
  return std::any_of(paradigms_.begin(), paradigms_.end(),
                     [&](const ParadigmSpec& p) { return p.id == paradigm_id; });
}

std::vector<const ParadigmSpec*> Testbed::for_bias(std::string_view bias) const {
  std::vector<const ParadigmSpec*> out;
  for (const auto& p : paradigms_) {
    if (p.bias == bias) out.push_back(&p);
  }
  return out;
}

// --- variants & presentation ---------------------------------------------------

std::vector<PromptVariant> expand_variants(const ParadigmSpec& spec) {
  std::vector<PromptVariant> variants;
  variants.reserve(spec.bindings.size());
  for (std::size_t i = 0; i < spec.bindings.size(); ++i) {
    variants.push_back(PromptVariant{spec.id, i, render_template(spec.template_text, spec.bindings[i].values),
                                     spec.options});
  }
  return variants;
}

PresentedPrompt present(const PromptVariant& variant, const OptionPermutation& permutation) {
  PresentedPrompt p{variant, permutation, labels_for(permutation.scheme()), {}};
  std::ostringstream text;
  text << variant.rendered_scenario << "\n";
  for (std::size_t pos = 0; pos < kOptionCount; ++pos) {
    text << p.labels[pos] << ". " << variant.options.text(permutation.canonical_at(pos)) << "\n";
  }
  text << "Answer with the label of exactly one option (" << p.labels[0] << ", " << p.labels[1] << ", "
       << p.labels[2] << ", " << p.labels[3] << " or " << p.labels[4] << ").";
  p.full_text = text.str();
  return p;
}

OptionPermutation random_permutation(Seed seed) {
  Rng rng(seed);
  std::array<std::size_t, kOptionCount> mapping{0, 1, 2, 3, 4};
  shuffle(std::span<std::size_t>(mapping), rng);
  const auto scheme = static_cast<LabelScheme>(rng.below(3));
  return OptionPermutation::from_mapping(mapping, scheme);
}

PresentedPrompt randomize_presentation(const PromptVariant& variant, Seed seed) {
  return present(variant, random_permutation(seed));
}

}  // namespace cobra
