#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ramo/region.hpp"

namespace ramo {

// Hofstede 6-D scores, each on a 0..100 scale.
struct CultureFactors {
  double power_distance = 0.0;
  double individualism = 0.0;
  double masculinity = 0.0;
  double uncertainty_avoidance = 0.0;
  double long_term_orientation = 0.0;
  double indulgence = 0.0;

  static constexpr std::size_t kCount = 6;
  static const std::array<const char*, kCount> kKeys;

  std::array<double, kCount> values() const;
  static CultureFactors from_values(const std::array<double, kCount>& v);

  bool operator==(const CultureFactors&) const = default;
};

struct CultureProfile {
  Region region = Region::HongKongSAR;
  CultureFactors means;
  double std_dev = 10.0;

  // Throws ConfigError if std_dev < 0 or a mean is outside [0, 100].
  void validate() const;
};

enum class Gender { Male, Female, Other };

std::string_view gender_name(Gender g);
std::optional<Gender> parse_gender(std::string_view name);

// One roster row. Free-text fields are already in the region's language.
struct DemographicEntry {
  int age = 0;
  Gender gender = Gender::Other;
  std::string education;
  std::string profession;
  std::vector<std::string> traits;
  std::string marital_status;
  std::string policy_attitudes;

  bool operator==(const DemographicEntry&) const = default;
};

struct PersonaPool {
  std::map<Region, std::vector<DemographicEntry>> entries;

  const std::vector<DemographicEntry>& for_region(Region region) const;
};

struct Persona {
  std::string id;
  Region region = Region::HongKongSAR;
  AgentType agent_type = AgentType::CultureAware;
  int age = 0;
  Gender gender = Gender::Other;
  std::string education;
  std::string profession;
  std::vector<std::string> traits;
  std::string marital_status;
  std::string policy_attitudes;
  CultureFactors factors;

  bool operator==(const Persona&) const = default;
};

struct LocalizedText {
  Language language = Language::English;
  std::string text;

  bool operator==(const LocalizedText&) const = default;
};

// Each dimension ~ N(mean, std_dev), clamped to [0, 100].
CultureFactors sample_culture_factors(const CultureProfile& profile, std::uint64_t seed);

// "<prefix><index+1, zero padded to 3>", e.g. index 0 in MainlandChina -> "BJ001".
std::string persona_id(Region region, std::size_t index);

// Pool entries are cycled by index; factors are freshly sampled from `seed`.
Persona build_persona(Region region, AgentType agent_type, const PersonaPool& pool,
                      const CultureProfile& profile, std::uint64_t seed,
                      std::size_t index);

// Two decimals with trailing zeros dropped; German uses a decimal comma.
std::string format_score(double value, Language lang);

// Closing questions appended after the scenario.
LocalizedText default_question_block(Language lang, AgentType agent_type);

// Culture-aware agents get a persona block in their region's language.
// Default agents get the English scenario and questions only.
std::string render_prompt(const Persona& persona, const LocalizedText& scenario,
                          const LocalizedText& questions);

std::map<Region, CultureProfile> load_culture_profiles(const std::filesystem::path& path);
PersonaPool load_persona_pool(const std::filesystem::path& path);

// One roster row without its region key.
nlohmann::ordered_json demographic_to_json(const DemographicEntry& entry);
DemographicEntry demographic_from_json(const nlohmann::json& item, const std::string& where);

}  // namespace ramo
