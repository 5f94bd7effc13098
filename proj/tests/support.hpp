#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "ramo/gateway.hpp"
#include "ramo/json_util.hpp"
#include "ramo/orchestrator.hpp"
#include "ramo/persona.hpp"
#include "ramo/scenario.hpp"

namespace ramo::testing {

inline std::filesystem::path source_dir() { return RAMO_SOURCE_DIR; }
inline std::filesystem::path config_dir() { return source_dir() / "config"; }
inline std::filesystem::path golden_dir() { return source_dir() / "tests" / "golden"; }

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ramo-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline constexpr std::uint64_t kGoldenSeed = 20240607;

// Prompt used by the golden files: first roster entry of the region, the
// canonical red-tape narrative, seeded factors.
inline std::string golden_prompt(Region region, AgentType type) {
  const auto profiles = load_culture_profiles(config_dir() / "culture_profiles.json");
  const auto pool = load_persona_pool(config_dir() / "persona_pool.json");
  const auto fixtures = load_fixtures(config_dir() / "scenarios.json");
  const Persona p = build_persona(region, type, pool, profiles.at(region), kGoldenSeed, 0);
  const Region text_region = type == AgentType::Default ? Region::HongKongSAR : region;
  const Scenario* s = fixtures.find_scenario(kCanonicalScenarioId, text_region);
  return render_prompt(p, s->red_tape, default_question_block(language_of(text_region), type));
}

inline std::string golden_name(Region region, AgentType type) {
  return std::string("prompt_") + std::string(region_code(region)) + "_" +
         std::string(agent_type_name(type)) + ".txt";
}

// Compares against the frozen file. RAMO_UPDATE_GOLDEN=1 rewrites it.
inline bool matches_golden(const std::string& name, const std::string& actual) {
  const auto path = golden_dir() / name;
  if (const char* update = std::getenv("RAMO_UPDATE_GOLDEN"); update && std::string(update) == "1") {
    json_util::write_text(path, actual);
    return true;
  }
  if (!std::filesystem::exists(path)) return false;
  return json_util::read_text(path) == actual;
}

// Experiment over the shipped config with a mock model.
inline ExperimentConfig mock_config(Region region, AgentType type, std::size_t agents,
                                    std::size_t runs, std::uint64_t seed) {
  const auto profiles = load_culture_profiles(config_dir() / "culture_profiles.json");
  const auto fixtures = load_fixtures(config_dir() / "scenarios.json");
  ExperimentConfig cfg;
  cfg.region = region;
  cfg.agent_type = type;
  cfg.model.kind = ProviderKind::Mock;
  cfg.model.model_name = "mock";
  cfg.pool = load_persona_pool(config_dir() / "persona_pool.json");
  cfg.profile = profiles.at(region);
  const Region text_region = type == AgentType::Default ? Region::HongKongSAR : region;
  cfg.scenario = *fixtures.find_scenario(kCanonicalScenarioId, text_region);
  cfg.agents_per_region = agents;
  cfg.runs = runs;
  cfg.base_seed = seed;
  return cfg;
}

// Uniform baseline with the given per-emotion deltas.
inline MockSetup uniform_mock(const EmotionSet& set, double baseline,
                              const std::vector<double>& delta, double noise) {
  MockSetup m{set, {}};
  m.effect.baseline.assign(set.size(), baseline);
  m.effect.red_tape_delta = delta;
  m.effect.noise = noise;
  return m;
}

}  // namespace ramo::testing
