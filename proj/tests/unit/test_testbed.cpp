#include <gtest/gtest.h>

#include <map>
#include <set>

#include "cobra/error.hpp"
#include "cobra/rng.hpp"
#include "cobra/testbed.hpp"
#include "test_support.hpp"

using namespace cobra;
using nlohmann::json;

namespace {

json single_paradigm(std::size_t bindings) {
  json p{{"paradigm_id", "demo"},
         {"name", "Demo"},
         {"bias_type", "Bandwagon"},
         {"template", "Most of your {{group}} chose {{choice}}. What do you do?"},
         {"options", {"Follow", "Lean follow", "Unsure", "Lean own", "Own"}},
         {"weights", {4, 3, 2, 1, 0}},
         {"placeholders", json::array()}};
  for (std::size_t i = 0; i < bindings; ++i) {
    p["placeholders"].push_back({{"values", {{"group", "friends" + std::to_string(i)}, {"choice", "red"}}}});
  }
  return p;
}

}  // namespace

TEST(Testbed, BundledAuthorityHasMilgramAndStanfordPrison) {
  const auto ps = load_testbed_file(data_dir() / "testbed" / "authority.json");
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[0].id, "milgram_obedience");
  EXPECT_EQ(expand_variants(ps[0]).size(), 75u);
  EXPECT_EQ(ps[1].id, "stanford_prison");
  EXPECT_EQ(expand_variants(ps[1]).size(), 30u);
}

TEST(Testbed, BundledFramingHasTwoFifteenVariantParadigms) {
  const auto ps = load_testbed_file(data_dir() / "testbed" / "framing.json");
  ASSERT_EQ(ps.size(), 2u);
  for (const auto& p : ps) EXPECT_EQ(expand_variants(p).size(), 15u) << p.id;
}

TEST(Testbed, BundledVariantCounts) {
  const std::map<std::string, std::size_t> expected{
      {"milgram_obedience", 75}, {"stanford_prison", 30}, {"asch_line", 15},     {"hotel_towel", 15},
      {"wason_selection", 15},   {"biased_information", 15}, {"asian_disease", 15}, {"investment_insurance", 15}};
  const auto& tb = cobra::testing::bundled_testbed();
  ASSERT_EQ(tb.paradigms().size(), 8u);
  for (const auto& p : tb.paradigms()) {
    EXPECT_EQ(expand_variants(p).size(), expected.at(p.id)) << p.id;
    EXPECT_EQ(p.expected_variant_count, expected.at(p.id));
  }
  for (const char* bias : {"Authority", "Bandwagon", "Confirmation", "Framing"}) {
    EXPECT_EQ(tb.for_bias(bias).size(), 2u) << bias;
  }
}

TEST(Testbed, FourOptionsIsASchemaViolation) {
  json p = single_paradigm(1);
  p["options"] = {"a", "b", "c", "d"};
  p["weights"] = {4, 3, 2, 1};
  EXPECT_THROW(load_testbed(p), ValidationError);
}

TEST(Testbed, WrongWeightsRejected) {
  json p = single_paradigm(1);
  p["weights"] = {0, 1, 2, 3, 4};
  EXPECT_THROW(load_testbed(p), ValidationError);
}

TEST(Testbed, UnboundPlaceholderRejected) {
  json p = single_paradigm(1);
  p["placeholders"][0]["values"].erase("choice");
  EXPECT_THROW(load_testbed(p), ValidationError);
}

TEST(Testbed, DeclaredVariantCountMustMatch) {
  json p = single_paradigm(3);
  p["expected_variants"] = 4;
  EXPECT_THROW(load_testbed(p), ValidationError);
}

TEST(Testbed, SingleBindingRendersTemplate) {
  const auto ps = load_testbed(single_paradigm(1));
  const auto vs = expand_variants(ps.at(0));
  ASSERT_EQ(vs.size(), 1u);
  EXPECT_EQ(vs[0].rendered_scenario, "Most of your friends0 chose red. What do you do?");
  EXPECT_EQ(vs[0].rendered_scenario.find("{{"), std::string::npos);
}

TEST(Testbed, ExpansionIsDeterministic) {
  for (const auto& p : cobra::testing::bundled_testbed().paradigms()) {
    const auto a = expand_variants(p);
    const auto b = expand_variants(p);
    ASSERT_EQ(a.size(), b.size());
    std::set<std::string> texts;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].rendered_scenario, b[i].rendered_scenario);
      EXPECT_EQ(a[i].index, i);
      EXPECT_EQ(a[i].rendered_scenario.find("{{"), std::string::npos);
      texts.insert(a[i].rendered_scenario);
    }
    EXPECT_EQ(texts.size(), a.size()) << "duplicate variants in " << p.id;
  }
}

TEST(Testbed, PinnedSeedGivesCanonicalLettersPresentation) {
  const auto v = expand_variants(cobra::testing::bundled_testbed().find("asch_line"))[0];
  const PresentedPrompt p = randomize_presentation(v, 110);
  EXPECT_TRUE(p.permutation.is_identity());
  EXPECT_EQ(p.permutation.scheme(), LabelScheme::Letters);
  for (std::size_t i = 0; i < kOptionCount; ++i) {
    EXPECT_NE(p.full_text.find(std::string(1, static_cast<char>('A' + i)) + ". " + v.options.options[i]),
              std::string::npos);
  }
}

TEST(Testbed, PresentationIsDeterministic) {
  const auto v = expand_variants(cobra::testing::bundled_testbed().find("milgram_obedience"))[7];
  for (Seed s : {0ull, 1ull, 42ull, 987654321ull}) {
    EXPECT_EQ(randomize_presentation(v, s).full_text, randomize_presentation(v, s).full_text);
  }
}

TEST(Testbed, PermutationsAreUniformOverSeeds) {
  constexpr int kSeeds = 10000;
  std::array<int, 120> counts{};
  std::array<int, 3> schemes{};
  for (int s = 0; s < kSeeds; ++s) {
    const OptionPermutation p = random_permutation(derive_seed(2024, "perm", s));
    ++counts[p.rank()];
    ++schemes[static_cast<int>(p.scheme())];
  }
  double chi2 = 0.0;
  const double expected = kSeeds / 120.0;
  for (int c : counts) {
    EXPECT_NEAR(c / static_cast<double>(kSeeds), 1.0 / 120.0, 0.01);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // 119 degrees of freedom: the 0.999 quantile is about 173.
  EXPECT_LT(chi2, 173.0);
  for (int c : schemes) EXPECT_NEAR(c / static_cast<double>(kSeeds), 1.0 / 3.0, 0.02);
}

TEST(Testbed, PermutationComposedWithInverseIsIdentity) {
  for (std::size_t r = 0; r < 120; ++r) {
    const OptionPermutation p = OptionPermutation::from_rank(r);
    EXPECT_EQ(p.rank(), r);
    const OptionPermutation inv = p.inverse();
    for (std::size_t i = 0; i < kOptionCount; ++i) {
      EXPECT_EQ(inv.mapping()[p.mapping()[i]], i);
      EXPECT_EQ(p.position_of(p.canonical_at(i)), i);
    }
  }
}

TEST(Testbed, FromMappingRejectsNonPermutation) {
  EXPECT_THROW(OptionPermutation::from_mapping({0, 0, 1, 2, 3}), ValidationError);
  EXPECT_THROW(OptionPermutation::from_mapping({0, 1, 2, 3, 5}), ValidationError);
}

TEST(Testbed, LabelSchemes) {
  EXPECT_EQ(labels_for(LabelScheme::Letters)[4], "E");
  EXPECT_EQ(labels_for(LabelScheme::Digits)[0], "1");
  EXPECT_EQ(labels_for(LabelScheme::Roman)[3], "IV");
}

TEST(Testbed, UnknownParadigmLookupThrows) {
  EXPECT_THROW(cobra::testing::bundled_testbed().find("nope"), ValidationError);
  EXPECT_FALSE(cobra::testing::bundled_testbed().contains("nope"));
}
