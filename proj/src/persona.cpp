#include "ramo/persona.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"
#include "ramo/rng.hpp"

namespace ramo {

const std::array<const char*, CultureFactors::kCount> CultureFactors::kKeys = {
    "power_distance",        "individualism",         "masculinity",
    "uncertainty_avoidance", "long_term_orientation", "indulgence"};

std::array<double, CultureFactors::kCount> CultureFactors::values() const {
  return {power_distance,        individualism,         masculinity,
          uncertainty_avoidance, long_term_orientation, indulgence};
}

CultureFactors CultureFactors::from_values(const std::array<double, kCount>& v) {
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

void CultureProfile::validate() const {
  if (!(std_dev >= 0.0)) {
    throw Error(ErrorCode::ConfigError,
                fmt::format("{}: std_dev must be >= 0", region_code(region)));
  }
  for (double m : means.values()) {
    if (!(m >= 0.0 && m <= 100.0)) {
      throw Error(ErrorCode::ConfigError,
                  fmt::format("{}: mean {} outside [0, 100]", region_code(region), m));
    }
  }
}

std::string_view gender_name(Gender g) {
  switch (g) {
    case Gender::Male: return "male";
    case Gender::Female: return "female";
    case Gender::Other: return "other";
  }
  return "other";
}

std::optional<Gender> parse_gender(std::string_view name) {
  if (name == "male") return Gender::Male;
  if (name == "female") return Gender::Female;
  if (name == "other") return Gender::Other;
  return std::nullopt;
}

const std::vector<DemographicEntry>& PersonaPool::for_region(Region region) const {
  static const std::vector<DemographicEntry> kEmpty;
  auto it = entries.find(region);
  return it == entries.end() ? kEmpty : it->second;
}

CultureFactors sample_culture_factors(const CultureProfile& profile, std::uint64_t seed) {
  Rng rng(seed);
  std::array<double, CultureFactors::kCount> out{};
  const auto means = profile.means.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Always draw, even for std_dev == 0, so streams stay aligned.
    const double draw = rng.normal(means[i], profile.std_dev);
    out[i] = profile.std_dev == 0.0 ? means[i] : std::clamp(draw, 0.0, 100.0);
  }
  return CultureFactors::from_values(out);
}

std::string persona_id(Region region, std::size_t index) {
  return fmt::format("{}{:03}", persona_prefix(region), index + 1);
}

Persona build_persona(Region region, AgentType agent_type, const PersonaPool& pool,
                      const CultureProfile& profile, std::uint64_t seed,
                      std::size_t index) {
  const auto& roster = pool.for_region(region);
  if (roster.empty()) {
    throw Error(ErrorCode::EmptyPool,
                fmt::format("no demographic entries for region {}", region_code(region)));
  }
  if (profile.region != region) {
    throw Error(ErrorCode::ConfigError,
                fmt::format("culture profile is for {}, persona region is {}",
                            region_code(profile.region), region_code(region)));
  }
  const DemographicEntry& row = roster[index % roster.size()];

  Persona p;
  p.id = persona_id(region, index);
  p.region = region;
  p.agent_type = agent_type;
  p.age = row.age;
  p.gender = row.gender;
  p.education = row.education;
  p.profession = row.profession;
  p.traits = row.traits;
  p.marital_status = row.marital_status;
  p.policy_attitudes = row.policy_attitudes;
  p.factors = sample_culture_factors(profile, seed);
  return p;
}

std::string format_score(double value, Language lang) {
  std::string s = fmt::format("{:.2f}", value);
  while (!s.empty() && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s == "-0") s = "0";
  if (lang == Language::German) std::replace(s.begin(), s.end(), '.', ',');
  return s;
}

LocalizedText default_question_block(Language lang, AgentType agent_type) {
  const bool cultural = agent_type == AgentType::CultureAware;
  switch (lang) {
    case Language::English:
      return {lang, std::string("What's your feeling towards this event?\n"
                                "Think about if it is easy/troublesome for you to do that.") +
                        (cultural ? " Please follow the cultural factors you have and make the "
                                    "reaction based on your cultural background."
                                  : "") +
                        "\nAnd what's your attitude towards the government who made this "
                        "policy/procedure?"};
    case Language::SimplifiedChinese:
      return {lang, std::string("您对本次活动有何感想？\n想想你这样做是否容易/困难。") +
                        (cultural ? "请遵循您所拥有的文化因素并根据您的文化背景做出反应。" : "") +
                        "\n您对制定这项政策/程序的政府持什么态度？"};
    case Language::German:
      return {lang,
              std::string("Was denkst du über diese Veranstaltung?\n"
                          "Überlegen Sie, ob es für Sie einfach/mühsam ist, das zu tun.") +
                  (cultural ? " Bitte beachten Sie die kulturellen Faktoren, die Sie haben, und "
                              "reagieren Sie entsprechend Ihrem kulturellen Hintergrund."
                            : "") +
                  "\nUnd wie ist Ihre Haltung gegenüber der Regierung, die diese "
                  "Richtlinie/dieses Verfahren erlassen hat?"};
  }
  return {};
}

namespace {

std::string_view localized_gender(Gender g, Language lang) {
  switch (lang) {
    case Language::English:
      return g == Gender::Male ? "male" : g == Gender::Female ? "female" : "person";
    case Language::SimplifiedChinese:
      return g == Gender::Male ? "男性" : g == Gender::Female ? "女性" : "人士";
    case Language::German:
      return g == Gender::Male ? "männlich" : g == Gender::Female ? "weiblich" : "divers";
  }
  return "";
}

std::string join_traits(const std::vector<std::string>& traits, Language lang) {
  std::string out;
  for (std::size_t i = 0; i < traits.size(); ++i) {
    if (i > 0) {
      if (lang == Language::SimplifiedChinese) {
        out += "、";
      } else if (lang == Language::German && i + 1 == traits.size()) {
        out += " und ";
      } else {
        out += ", ";
      }
    }
    out += traits[i];
  }
  return out;
}

std::string persona_block(const Persona& p) {
  const Language lang = language_of(p.region);
  const auto f = p.factors.values();
  auto s = [&](std::size_t i) { return format_score(f[i], lang); };
  const std::string traits = join_traits(p.traits, lang);
  const std::string_view gender = localized_gender(p.gender, lang);

  switch (lang) {
    case Language::English:
      return fmt::format(
          "You are {} from Hong Kong. You are a {} years old {}. You have a {} and work as a {}.\n"
          "Your personality traits include {}. You are {}.\n"
          "You got some opinions and have some attitudes to your region's policy: {}\n"
          "Culture factor wise, you got a score of {} in power distance, {} in individualism, "
          "{} in masculinity, {} in uncertainty avoidance, {} in long term orientation, and {} "
          "in indulgence.\n"
          "Larger score denotes stronger tendency in that dimension.",
          p.id, p.age, gender, p.education, p.profession, traits, p.marital_status,
          p.policy_attitudes, s(0), s(1), s(2), s(3), s(4), s(5));
    case Language::SimplifiedChinese:
      return fmt::format(
          "您是来自中国的{}。您是一名 {} 岁{}。您拥有{}并担任{}。\n"
          "您的性格特征包括{}。您{}。\n"
          "大家对你们地区的政策有了一些看法和态度：{}\n"
          "就文化因素而言，权力距离得分为 {}，个人主义得分为 {}，男子气概得分为 {}，"
          "避免不确定性得分为 {}，长期取向得分为 {}，放纵得分为 {}。\n"
          "分数越大表示该维度的趋势越强。",
          p.id, p.age, gender, p.education, p.profession, traits, p.marital_status,
          p.policy_attitudes, s(0), s(1), s(2), s(3), s(4), s(5));
    case Language::German:
      return fmt::format(
          "Sie sind {} aus Deutschland. Sie sind {} Jahre alt, {}, haben {} und arbeiten als "
          "{}.\n"
          "Zu Ihren Persönlichkeitsmerkmalen zählen {}. Sie sind {}.\n"
          "Sie haben eine Meinung zur Politik Ihrer Region: {}\n"
          "Im Hinblick auf die Kulturfaktoren erzielten Sie folgende Werte: {} in Machtdistanz, "
          "{} in Individualismus, {} in Maskulinität, {} in Unsicherheitsvermeidung, {} in "
          "Langzeitorientierung und {} in Genussorientierung.\n"
          "Ein höherer Wert bedeutet eine stärkere Ausprägung in der jeweiligen Dimension.",
          p.id, p.age, gender, p.education, p.profession, traits, p.marital_status,
          p.policy_attitudes, s(0), s(1), s(2), s(3), s(4), s(5));
  }
  return {};
}

}  // namespace

std::string render_prompt(const Persona& persona, const LocalizedText& scenario,
                          const LocalizedText& questions) {
  const Language expected = persona.agent_type == AgentType::CultureAware
                                ? language_of(persona.region)
                                : Language::English;
  for (const LocalizedText* part : {&scenario, &questions}) {
    if (part->language != expected) {
      throw Error(ErrorCode::LanguageMismatch,
                  fmt::format("{} agent {} expects '{}' text, got '{}'",
                              agent_type_name(persona.agent_type), persona.id,
                              language_tag(expected), language_tag(part->language)));
    }
  }
  if (persona.agent_type == AgentType::Default) {
    return scenario.text + "\n\n" + questions.text;
  }
  return persona_block(persona) + "\n\n" + scenario.text + "\n\n" + questions.text;
}

namespace {

Region region_field(const json_util::json& obj, std::string_view where) {
  const std::string code = json_util::string_field(obj, "region", where);
  auto region = parse_region(code);
  if (!region) json_util::fail(where, fmt::format("unknown region '{}'", code));
  return *region;
}

}  // namespace

std::map<Region, CultureProfile> load_culture_profiles(const std::filesystem::path& path) {
  const auto doc = json_util::read_file(path);
  const std::string origin = path.string();
  std::map<Region, CultureProfile> out;
  const auto& profiles = json_util::array_field(doc, "profiles", origin);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const std::string where = fmt::format("{}: profiles[{}]", origin, i);
    const auto& item = profiles[i];
    CultureProfile profile;
    profile.region = region_field(item, where);
    profile.std_dev = item.contains("std_dev") ? json_util::number_field(item, "std_dev", where)
                                               : 10.0;
    const auto& means = json_util::field(item, "means", where);
    std::array<double, CultureFactors::kCount> v{};
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = json_util::number_field(means, CultureFactors::kKeys[k], where + ".means");
    }
    profile.means = CultureFactors::from_values(v);
    try {
      profile.validate();
    } catch (const Error& e) {
      json_util::fail(where, e.detail());
    }
    out[profile.region] = profile;
  }
  return out;
}

DemographicEntry demographic_from_json(const json_util::json& item, const std::string& where) {
  DemographicEntry row;
  row.age = static_cast<int>(json_util::integer_field(item, "age", where));
  const std::string gender = json_util::string_field(item, "gender", where);
  auto g = parse_gender(gender);
  if (!g) json_util::fail(where, fmt::format("unknown gender '{}'", gender));
  row.gender = *g;
  row.education = json_util::string_field(item, "education", where);
  row.profession = json_util::string_field(item, "profession", where);
  for (const auto& t : json_util::array_field(item, "traits", where)) {
    if (!t.is_string()) json_util::fail(where + ".traits", "expected strings");
    row.traits.push_back(t.get<std::string>());
  }
  row.marital_status = json_util::string_field(item, "marital_status", where);
  row.policy_attitudes = json_util::string_field(item, "policy_attitudes", where);
  return row;
}

nlohmann::ordered_json demographic_to_json(const DemographicEntry& entry) {
  nlohmann::ordered_json out;
  out["age"] = entry.age;
  out["gender"] = gender_name(entry.gender);
  out["education"] = entry.education;
  out["profession"] = entry.profession;
  out["traits"] = entry.traits;
  out["marital_status"] = entry.marital_status;
  out["policy_attitudes"] = entry.policy_attitudes;
  return out;
}

PersonaPool load_persona_pool(const std::filesystem::path& path) {
  const auto doc = json_util::read_file(path);
  const std::string origin = path.string();
  PersonaPool pool;
  const auto& entries = json_util::array_field(doc, "entries", origin);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string where = fmt::format("{}: entries[{}]", origin, i);
    const auto& item = entries[i];
    const Region region = region_field(item, where);
    DemographicEntry row = demographic_from_json(item, where);
    pool.entries[region].push_back(std::move(row));
  }
  return pool;
}

}  // namespace ramo
