#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace ramo {

enum class Region { HongKongSAR, MainlandChina, Germany };
enum class Language { English, SimplifiedChinese, German };
enum class AgentType { Default, CultureAware };
enum class Condition { Control, RedTape };

inline constexpr std::array<Region, 3> kAllRegions = {
    Region::HongKongSAR, Region::MainlandChina, Region::Germany};

constexpr Language language_of(Region region) {
  switch (region) {
    case Region::HongKongSAR: return Language::English;
    case Region::MainlandChina: return Language::SimplifiedChinese;
    case Region::Germany: return Language::German;
  }
  return Language::English;
}

// Short machine codes: "HK", "CN", "DE".
std::string_view region_code(Region region);
std::optional<Region> parse_region(std::string_view code);

// Prefix used for persona ids ("HK", "BJ", "DE").
std::string_view persona_prefix(Region region);

// BCP-47-ish tags: "en", "zh-Hans", "de".
std::string_view language_tag(Language lang);
std::optional<Language> parse_language(std::string_view tag);

std::string_view agent_type_name(AgentType type);
std::optional<AgentType> parse_agent_type(std::string_view name);

std::string_view condition_name(Condition cond);
std::optional<Condition> parse_condition(std::string_view name);

// Region display name in the given interface language.
std::string_view region_display_name(Region region, Language lang);

}  // namespace ramo
