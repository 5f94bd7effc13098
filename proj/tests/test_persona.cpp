#include <doctest.h>

#include <set>

#include "ramo/error.hpp"
#include "ramo/persona.hpp"
#include "support.hpp"

using namespace ramo;

namespace {

CultureProfile flat_profile(Region region, double mean, double sd) {
  CultureProfile p;
  p.region = region;
  p.means = CultureFactors::from_values({mean, mean, mean, mean, mean, mean});
  p.std_dev = sd;
  return p;
}

PersonaPool single_entry_pool() {
  PersonaPool pool;
  pool.entries[Region::Germany].push_back({34, Gender::Male, "einen Master-Abschluss",
                                           "Maschinenbauingenieur",
                                           {"Pragmatismus", "Pünktlichkeit"},
                                           "verheiratet",
                                           "Sie unterstützen die Energiewende."});
  return pool;
}

// Reference German and Chinese personas with fixed factor values.
Persona reference_persona(Region region) {
  Persona p;
  p.id = persona_id(region, 0);
  p.region = region;
  p.agent_type = AgentType::CultureAware;
  p.age = 34;
  p.gender = Gender::Male;
  p.traits = {"a", "b"};
  if (region == Region::Germany) {
    p.education = "einen Master-Abschluss";
    p.profession = "Maschinenbauingenieur";
    p.marital_status = "verheiratet";
    p.factors = CultureFactors::from_values({41.68, 69.1, 49.47, 54.67, 46.06, 48.4});
  } else {
    p.education = "bachelor degree";
    p.profession = "software engineer";
    p.marital_status = "married";
    p.factors = CultureFactors::from_values({90.51, 44.77, 54.19, 13.77, 80.94, 44.98});
  }
  return p;
}

}  // namespace

TEST_CASE("zero std_dev returns the means exactly") {
  CultureProfile profile;
  profile.region = Region::MainlandChina;
  profile.means = CultureFactors::from_values({80, 20, 66, 30, 87, 24});
  profile.std_dev = 0.0;
  for (std::uint64_t seed : {0ull, 1ull, 987654321ull}) {
    CHECK(sample_culture_factors(profile, seed) == profile.means);
  }
}

TEST_CASE("sampling is deterministic per seed and varies across seeds") {
  const auto profile = flat_profile(Region::Germany, 50, 10);
  CHECK(sample_culture_factors(profile, 42) == sample_culture_factors(profile, 42));
  CHECK_FALSE(sample_culture_factors(profile, 42) == sample_culture_factors(profile, 43));
}

TEST_CASE("law of large numbers over 100000 draws") {
  // Oracle: the sampler itself, summarized. N(50, 10) has mean 50 and
  // P(|x - 50| > 40) ~ 6e-5.
  const auto profile = flat_profile(Region::HongKongSAR, 50, 10);
  double sum = 0.0;
  std::size_t inside = 0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; count < 100000; ++seed) {
    for (double v : sample_culture_factors(profile, seed).values()) {
      if (count == 100000) break;
      sum += v;
      inside += (v >= 10.0 && v <= 90.0) ? 1 : 0;
      ++count;
    }
  }
  const double mean = sum / static_cast<double>(count);
  CHECK(mean >= 49.8);
  CHECK(mean <= 50.2);
  CHECK(static_cast<double>(inside) / static_cast<double>(count) >= 0.999);
}

TEST_CASE("clamp invariant holds for wide distributions near the bounds") {
  for (double mean : {0.0, 3.0, 97.0, 100.0}) {
    const auto profile = flat_profile(Region::Germany, mean, 40);
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      for (double v : sample_culture_factors(profile, seed).values()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 100.0);
      }
    }
  }
}

TEST_CASE("profile validation") {
  auto p = flat_profile(Region::Germany, 50, -1);
  CHECK_THROWS_AS(p.validate(), Error);
  p = flat_profile(Region::Germany, 120, 10);
  CHECK_THROWS_AS(p.validate(), Error);
  CHECK_NOTHROW(flat_profile(Region::Germany, 50, 10).validate());
}

TEST_CASE("persona ids use the regional prefix and are unique") {
  CHECK(persona_id(Region::MainlandChina, 0) == "BJ001");
  CHECK(persona_id(Region::Germany, 0) == "DE001");
  CHECK(persona_id(Region::HongKongSAR, 199) == "HK200");
  CHECK(persona_id(Region::HongKongSAR, 1234) == "HK1235");

  const auto pool = single_entry_pool();
  const auto profile = flat_profile(Region::Germany, 50, 10);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < 200; ++i) {
    ids.insert(build_persona(Region::Germany, AgentType::CultureAware, pool, profile, i, i).id);
  }
  CHECK(ids.size() == 200);
}

TEST_CASE("build_persona copies the roster entry and is deterministic") {
  const auto pool = single_entry_pool();
  const auto profile = flat_profile(Region::Germany, 50, 10);
  const auto a = build_persona(Region::Germany, AgentType::CultureAware, pool, profile, 7, 0);
  const auto b = build_persona(Region::Germany, AgentType::CultureAware, pool, profile, 7, 0);
  CHECK(a == b);
  CHECK(a.age == 34);
  CHECK(a.gender == Gender::Male);
  CHECK(a.education == "einen Master-Abschluss");
  CHECK(a.profession == "Maschinenbauingenieur");
  CHECK(a.marital_status == "verheiratet");
  CHECK(a.factors == sample_culture_factors(profile, 7));
}

TEST_CASE("build_persona errors") {
  const auto pool = single_entry_pool();
  CHECK_THROWS_WITH_AS(
      build_persona(Region::MainlandChina, AgentType::CultureAware, pool,
                    flat_profile(Region::MainlandChina, 50, 10), 1, 0),
      doctest::Contains("EmptyPool"), Error);
  CHECK_THROWS_AS(build_persona(Region::Germany, AgentType::CultureAware, pool,
                                flat_profile(Region::HongKongSAR, 50, 10), 1, 0),
                  Error);
}

TEST_CASE("score formatting follows the regional decimal convention") {
  CHECK(format_score(41.68, Language::German) == "41,68");
  CHECK(format_score(69.1, Language::German) == "69,1");
  CHECK(format_score(69.1000001, Language::German) == "69,1");
  CHECK(format_score(90.51, Language::SimplifiedChinese) == "90.51");
  CHECK(format_score(50.0, Language::English) == "50");
  CHECK(format_score(0.0, Language::English) == "0");
  CHECK(format_score(13.765, Language::English).size() <= 5);
}

TEST_CASE("culture-aware German prompt carries comma-decimal factors and the questions") {
  const Persona p = reference_persona(Region::Germany);
  const auto text = render_prompt(p, {Language::German, "Szenario."},
                                  default_question_block(Language::German, p.agent_type));
  for (const char* needle : {"41,68 in Machtdistanz", "69,1 in Individualismus",
                             "49,47", "54,67", "46,06", "48,4 in Genussorientierung",
                             "Sie sind DE001 aus Deutschland", "34 Jahre alt, männlich",
                             "Ein höherer Wert bedeutet eine stärkere Ausprägung",
                             "Szenario.",
                             "wie ist Ihre Haltung gegenüber der Regierung"}) {
    CHECK_MESSAGE(text.find(needle) != std::string::npos, needle);
  }
}

TEST_CASE("culture-aware Chinese prompt uses the Chinese persona block") {
  Persona p = reference_persona(Region::MainlandChina);
  const auto text = render_prompt(p, {Language::SimplifiedChinese, "场景。"},
                                  default_question_block(Language::SimplifiedChinese,
                                                         p.agent_type));
  CHECK(text.find("您是来自中国的BJ001") != std::string::npos);
  CHECK(text.find("权力距离得分为 90.51") != std::string::npos);
  CHECK(text.find("放纵得分为 44.98") != std::string::npos);
  CHECK(text.find("分数越大表示该维度的趋势越强") != std::string::npos);
}

TEST_CASE("default prompts carry no persona block") {
  Persona p = reference_persona(Region::Germany);
  p.agent_type = AgentType::Default;
  const LocalizedText scenario{Language::English, "Scenario text."};
  const auto questions = default_question_block(Language::English, AgentType::Default);
  const auto text = render_prompt(p, scenario, questions);
  CHECK(text == "Scenario text.\n\n" + questions.text);
  CHECK(text.find("power distance") == std::string::npos);
  CHECK(text.find("41") == std::string::npos);
  CHECK(text.find("DE001") == std::string::npos);
  CHECK(text.find("cultural") == std::string::npos);
}

TEST_CASE("language mismatches are rejected") {
  const Persona de = reference_persona(Region::Germany);
  CHECK_THROWS_WITH_AS(
      render_prompt(de, {Language::English, "x"},
                    default_question_block(Language::German, AgentType::CultureAware)),
      doctest::Contains("LanguageMismatch"), Error);
  CHECK_THROWS_AS(render_prompt(de, {Language::German, "x"},
                                default_question_block(Language::English,
                                                       AgentType::CultureAware)),
                  Error);
  Persona def = de;
  def.agent_type = AgentType::Default;
  CHECK_THROWS_AS(render_prompt(def, {Language::German, "x"},
                                default_question_block(Language::English, AgentType::Default)),
                  Error);
}

TEST_CASE("golden prompts, one fixture persona per region") {
  using namespace ramo::testing;
  for (Region region : kAllRegions) {
    const auto text = golden_prompt(region, AgentType::CultureAware);
    CHECK_MESSAGE(matches_golden(golden_name(region, AgentType::CultureAware), text),
                  region_code(region));
    const auto def = golden_prompt(region, AgentType::Default);
    CHECK_MESSAGE(matches_golden(golden_name(region, AgentType::Default), def),
                  region_code(region));
  }
}

TEST_CASE("shipped config files load") {
  using namespace ramo::testing;
  const auto profiles = load_culture_profiles(config_dir() / "culture_profiles.json");
  CHECK(profiles.size() == 3);
  CHECK(profiles.at(Region::Germany).std_dev == 10.0);
  const auto pool = load_persona_pool(config_dir() / "persona_pool.json");
  for (Region r : kAllRegions) CHECK_FALSE(pool.for_region(r).empty());
  const auto& de = pool.for_region(Region::Germany).front();
  CHECK(de.age == 34);
  CHECK(de.profession == "Maschinenbauingenieur");
}

TEST_CASE("config parse errors point at the field") {
  const auto dir = ramo::testing::temp_dir("persona-config");
  json_util::write_text(dir / "bad.json", "{\"profiles\": [ {\"region\": \"XX\"} ]}");
  CHECK_THROWS_WITH_AS(load_culture_profiles(dir / "bad.json"),
                       doctest::Contains("profiles[0]"), Error);
  json_util::write_text(dir / "syntax.json", "{\n  \"entries\": [\n    {,}\n  ]\n}");
  CHECK_THROWS_WITH_AS(load_persona_pool(dir / "syntax.json"), doctest::Contains(":3:"), Error);
}
