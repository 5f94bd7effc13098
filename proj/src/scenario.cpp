#include "ramo/scenario.hpp"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"

namespace ramo {

using json_util::json;

std::size_t PolicyProcedure::red_tape_count() const {
  return static_cast<std::size_t>(
      std::count_if(steps.begin(), steps.end(), [](const auto& s) { return s.red_tape; }));
}

std::vector<std::size_t> PolicyProcedure::red_tape_items() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].red_tape) out.push_back(i);
  }
  return out;
}

void PolicyProcedure::validate() const {
  if (steps.empty()) {
    throw Error(ErrorCode::ValidationError, fmt::format("procedure '{}' has no steps", id));
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& step = steps[i];
    if (source == ProcedureSource::Custom && step.red_tape) {
      throw Error(ErrorCode::ValidationError,
                  fmt::format("custom procedure '{}' cannot flag step {} as red tape", id, i));
    }
    if (step.superseded_by) {
      const std::size_t j = *step.superseded_by;
      if (j >= steps.size() || !steps[j].red_tape || step.red_tape) {
        throw Error(ErrorCode::ValidationError,
                    fmt::format("procedure '{}' step {}: superseded_by must name a red-tape "
                                "step and belong to a regular step",
                                id, i));
      }
    }
  }
}

namespace {

std::string procedure_header(Language lang, std::string_view title) {
  switch (lang) {
    case Language::English:
      return fmt::format(
          "Now you need to go through a public/government related event: {}. The policy "
          "procedure is as follows:",
          title);
    case Language::SimplifiedChinese:
      return fmt::format("现在您需要进行公共/政府相关活动：{}。政策程序如下：", title);
    case Language::German:
      return fmt::format(
          "Nun müssen Sie an einer öffentlichen/staatlichen Veranstaltung teilnehmen: {}. Das "
          "politische Verfahren ist wie folgt:",
          title);
  }
  return {};
}

}  // namespace

Scenario compile_procedure(const PolicyProcedure& procedure,
                           const std::set<std::size_t>& selected_red_tape) {
  for (std::size_t idx : selected_red_tape) {
    if (idx >= procedure.steps.size()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  fmt::format("procedure '{}' has {} steps, selected index {}", procedure.id,
                              procedure.steps.size(), idx));
    }
    if (!procedure.steps[idx].red_tape) {
      throw Error(ErrorCode::NotEligible,
                  fmt::format("procedure '{}' step {} is not a red-tape item", procedure.id,
                              idx));
    }
  }

  const Language lang = language_of(procedure.region);
  const std::string header = procedure_header(lang, procedure.title);

  Scenario out;
  out.id = procedure.id;
  out.region = procedure.region;

  std::string control = header;
  std::size_t n = 0;
  for (const auto& step : procedure.steps) {
    if (step.red_tape) continue;
    control += fmt::format("\n{}. {}", ++n, step.text);
  }

  std::string red = header;
  n = 0;
  for (std::size_t i = 0; i < procedure.steps.size(); ++i) {
    const auto& step = procedure.steps[i];
    if (step.red_tape) {
      if (!selected_red_tape.contains(i)) continue;
      red += fmt::format("\n{}. {}", ++n, step.text);
      out.red_tape_lines.push_back(n);
    } else {
      if (step.superseded_by && selected_red_tape.contains(*step.superseded_by)) continue;
      red += fmt::format("\n{}. {}", ++n, step.text);
    }
  }

  out.control = {lang, std::move(control)};
  out.red_tape = {lang, std::move(red)};
  return out;
}

PolicyProcedure make_custom_procedure(std::string id, Region region, std::string title,
                                      std::string_view body) {
  PolicyProcedure p;
  p.id = std::move(id);
  p.region = region;
  p.title = std::move(title);
  p.source = ProcedureSource::Custom;

  std::size_t start = 0;
  while (start <= body.size()) {
    std::size_t end = body.find('\n', start);
    if (end == std::string_view::npos) end = body.size();
    std::string_view line = body.substr(start, end - start);
    start = end + 1;

    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!line.empty() && is_space(line.front())) line.remove_prefix(1);
    while (!line.empty() && is_space(line.back())) line.remove_suffix(1);
    std::size_t digits = 0;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) {
      ++digits;
    }
    if (digits > 0 && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) {
      line.remove_prefix(digits + 1);
      while (!line.empty() && is_space(line.front())) line.remove_prefix(1);
    }
    if (!line.empty()) p.steps.push_back({std::string(line), false, std::nullopt});
  }
  if (p.steps.empty()) {
    throw Error(ErrorCode::ValidationError, "custom policy text is empty");
  }
  return p;
}

const Scenario* FixtureSet::find_scenario(std::string_view id, Region region) const {
  for (const auto& s : scenarios) {
    if (s.id == id && s.region == region) return &s;
  }
  return nullptr;
}

const PolicyProcedure* FixtureSet::find_procedure(std::string_view id, Region region) const {
  for (const auto& p : procedures) {
    if (p.id == id && p.region == region) return &p;
  }
  return nullptr;
}

std::vector<const PolicyProcedure*> FixtureSet::procedures_for(Region region) const {
  std::vector<const PolicyProcedure*> out;
  for (const auto& p : procedures) {
    if (p.region == region) out.push_back(&p);
  }
  return out;
}

namespace {

Region read_region(const json& item, const std::string& where) {
  const std::string code = json_util::string_field(item, "region", where);
  auto r = parse_region(code);
  if (!r) json_util::fail(where, fmt::format("unknown region '{}'", code));
  return *r;
}

Language read_language(const json& item, const std::string& where, Region region) {
  const std::string tag = json_util::string_field(item, "lang", where);
  auto lang = parse_language(tag);
  if (!lang) json_util::fail(where, fmt::format("unknown language tag '{}'", tag));
  if (*lang != language_of(region)) {
    json_util::fail(where, fmt::format("language '{}' does not match region {}", tag,
                                       region_code(region)));
  }
  return *lang;
}

}  // namespace

FixtureSet load_fixtures(const std::filesystem::path& path) {
  const json doc = json_util::read_file(path);
  const std::string origin = path.string();
  FixtureSet out;

  if (doc.contains("scenarios")) {
    const auto& arr = json_util::array_field(doc, "scenarios", origin);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = fmt::format("{}: scenarios[{}]", origin, i);
      const auto& item = arr[i];
      Scenario s;
      s.id = json_util::string_field(item, "id", where);
      s.region = read_region(item, where);
      const Language lang = read_language(item, where, s.region);
      s.control = {lang, json_util::string_field(item, "control", where)};
      s.red_tape = {lang, json_util::string_field(item, "red_tape", where)};
      if (item.contains("red_tape_lines")) {
        for (const auto& n : json_util::array_field(item, "red_tape_lines", where)) {
          if (!n.is_number_unsigned()) json_util::fail(where + ".red_tape_lines", "expected integers");
          s.red_tape_lines.push_back(n.get<std::size_t>());
        }
      }
      s.non_canonical = item.contains("non_canonical") &&
                        json_util::bool_field(item, "non_canonical", where);
      out.scenarios.push_back(std::move(s));
    }
  }

  if (doc.contains("procedures")) {
    const auto& arr = json_util::array_field(doc, "procedures", origin);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = fmt::format("{}: procedures[{}]", origin, i);
      const auto& item = arr[i];
      PolicyProcedure p;
      p.id = json_util::string_field(item, "id", where);
      p.region = read_region(item, where);
      read_language(item, where, p.region);
      p.title = json_util::string_field(item, "title", where);
      const std::string source = json_util::string_field(item, "source", where);
      if (source == "predefined") {
        p.source = ProcedureSource::Predefined;
      } else if (source == "custom") {
        p.source = ProcedureSource::Custom;
      } else {
        json_util::fail(where + ".source", fmt::format("unknown source '{}'", source));
      }
      const auto& steps = json_util::array_field(item, "steps", where);
      for (std::size_t k = 0; k < steps.size(); ++k) {
        const std::string sw = fmt::format("{}.steps[{}]", where, k);
        ProcedureStep step;
        step.text = json_util::string_field(steps[k], "text", sw);
        step.red_tape = json_util::bool_field(steps[k], "red_tape", sw);
        if (steps[k].contains("superseded_by")) {
          const long long j = json_util::integer_field(steps[k], "superseded_by", sw);
          if (j < 0) json_util::fail(sw + ".superseded_by", "must be >= 0");
          step.superseded_by = static_cast<std::size_t>(j);
        }
        p.steps.push_back(std::move(step));
      }
      try {
        p.validate();
      } catch (const Error& e) {
        json_util::fail(where, e.detail());
      }
      out.procedures.push_back(std::move(p));
    }
  }
  return out;
}

void save_fixtures(const std::filesystem::path& path, const FixtureSet& fixtures) {
  json doc = json::object();
  doc["scenarios"] = json::array();
  for (const auto& s : fixtures.scenarios) {
    json item = {{"id", s.id},
                 {"region", region_code(s.region)},
                 {"lang", language_tag(s.control.language)},
                 {"control", s.control.text},
                 {"red_tape", s.red_tape.text}};
    if (!s.red_tape_lines.empty()) item["red_tape_lines"] = s.red_tape_lines;
    if (s.non_canonical) item["non_canonical"] = true;
    doc["scenarios"].push_back(std::move(item));
  }
  doc["procedures"] = json::array();
  for (const auto& p : fixtures.procedures) {
    json steps = json::array();
    for (const auto& step : p.steps) {
      json js = {{"text", step.text}, {"red_tape", step.red_tape}};
      if (step.superseded_by) js["superseded_by"] = *step.superseded_by;
      steps.push_back(std::move(js));
    }
    doc["procedures"].push_back(
        {{"id", p.id},
         {"region", region_code(p.region)},
         {"lang", language_tag(language_of(p.region))},
         {"title", p.title},
         {"source", p.source == ProcedureSource::Predefined ? "predefined" : "custom"},
         {"steps", std::move(steps)}});
  }
  json_util::write_file(path, doc);
}

}  // namespace ramo
