#include "ramo/region.hpp"

namespace ramo {

std::string_view region_code(Region region) {
  switch (region) {
    case Region::HongKongSAR: return "HK";
    case Region::MainlandChina: return "CN";
    case Region::Germany: return "DE";
  }
  return "";
}

std::optional<Region> parse_region(std::string_view code) {
  if (code == "HK") return Region::HongKongSAR;
  if (code == "CN") return Region::MainlandChina;
  if (code == "DE") return Region::Germany;
  return std::nullopt;
}

std::string_view persona_prefix(Region region) {
  switch (region) {
    case Region::HongKongSAR: return "HK";
    case Region::MainlandChina: return "BJ";
    case Region::Germany: return "DE";
  }
  return "";
}

std::string_view language_tag(Language lang) {
  switch (lang) {
    case Language::English: return "en";
    case Language::SimplifiedChinese: return "zh-Hans";
    case Language::German: return "de";
  }
  return "";
}

std::optional<Language> parse_language(std::string_view tag) {
  if (tag == "en") return Language::English;
  if (tag == "zh-Hans") return Language::SimplifiedChinese;
  if (tag == "de") return Language::German;
  return std::nullopt;
}

std::string_view agent_type_name(AgentType type) {
  return type == AgentType::Default ? "default" : "culture-aware";
}

std::optional<AgentType> parse_agent_type(std::string_view name) {
  if (name == "default") return AgentType::Default;
  if (name == "culture-aware") return AgentType::CultureAware;
  return std::nullopt;
}

std::string_view condition_name(Condition cond) {
  return cond == Condition::Control ? "control" : "red-tape";
}

std::optional<Condition> parse_condition(std::string_view name) {
  if (name == "control") return Condition::Control;
  if (name == "red-tape") return Condition::RedTape;
  return std::nullopt;
}

std::string_view region_display_name(Region region, Language lang) {
  switch (lang) {
    case Language::English:
      switch (region) {
        case Region::HongKongSAR: return "Hong Kong SAR";
        case Region::MainlandChina: return "Mainland China";
        case Region::Germany: return "Germany";
      }
      break;
    case Language::SimplifiedChinese:
      switch (region) {
        case Region::HongKongSAR: return "中国香港特别行政区";
        case Region::MainlandChina: return "中国大陆";
        case Region::Germany: return "德国";
      }
      break;
    case Language::German:
      switch (region) {
        case Region::HongKongSAR: return "Sonderverwaltungszone Hongkong";
        case Region::MainlandChina: return "Festlandchina";
        case Region::Germany: return "Deutschland";
      }
      break;
  }
  return "";
}

}  // namespace ramo
