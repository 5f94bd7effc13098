#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ramo/persona.hpp"
#include "ramo/region.hpp"

namespace ramo {

// A stimulus with one narrative per condition, in one language.
struct Scenario {
  std::string id;
  Region region = Region::HongKongSAR;
  LocalizedText control;
  LocalizedText red_tape;
  // 1-based step numbers in the red-tape text that are red tape (for
  // highlighting). Empty for free narratives.
  std::vector<std::size_t> red_tape_lines;
  // Translated here rather than taken from a canonical source.
  bool non_canonical = false;

  const LocalizedText& text(Condition cond) const {
    return cond == Condition::Control ? control : red_tape;
  }
  std::size_t red_tape_count() const { return red_tape_lines.size(); }

  bool operator==(const Scenario&) const = default;
};

struct ProcedureStep {
  std::string text;
  bool red_tape = false;
  // Index of a red-tape step that replaces this step when selected.
  std::optional<std::size_t> superseded_by;

  bool operator==(const ProcedureStep&) const = default;
};

enum class ProcedureSource { Predefined, Custom };

struct PolicyProcedure {
  std::string id;
  Region region = Region::HongKongSAR;
  std::string title;  // in language_of(region)
  std::vector<ProcedureStep> steps;
  ProcedureSource source = ProcedureSource::Predefined;

  std::size_t red_tape_count() const;
  // Indices of red-tape-eligible steps, ascending.
  std::vector<std::size_t> red_tape_items() const;
  // Throws ValidationError on broken structure (custom with red tape,
  // dangling superseded_by, empty steps).
  void validate() const;

  bool operator==(const PolicyProcedure&) const = default;
};

// Control omits every red-tape step; RedTape interleaves the selected ones
// in their original order. Both are renumbered 1..n.
Scenario compile_procedure(const PolicyProcedure& procedure,
                           const std::set<std::size_t>& selected_red_tape);

// Builds a Custom procedure from free text, one step per non-empty line.
// Leading "3." / "3)" numbering is stripped. Throws ValidationError if empty.
PolicyProcedure make_custom_procedure(std::string id, Region region, std::string title,
                                      std::string_view body);

struct FixtureSet {
  std::vector<Scenario> scenarios;
  std::vector<PolicyProcedure> procedures;

  const Scenario* find_scenario(std::string_view id, Region region) const;
  const PolicyProcedure* find_procedure(std::string_view id, Region region) const;
  std::vector<const PolicyProcedure*> procedures_for(Region region) const;

  bool operator==(const FixtureSet&) const = default;
};

inline constexpr std::string_view kCanonicalScenarioId = "university-payment";

FixtureSet load_fixtures(const std::filesystem::path& path);
void save_fixtures(const std::filesystem::path& path, const FixtureSet& fixtures);

}  // namespace ramo
