#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ramo/gateway.hpp"
#include "ramo/persona.hpp"
#include "ramo/scenario.hpp"

namespace ramo {

// Row-major runs x emotions matrix of paired differences.
struct DiffMatrix {
  std::size_t runs = 0;
  std::size_t emotions = 0;
  std::vector<double> values;

  DiffMatrix() = default;
  DiffMatrix(std::size_t n_runs, std::size_t n_emotions)
      : runs(n_runs), emotions(n_emotions), values(n_runs * n_emotions, 0.0) {}

  double& at(std::size_t run, std::size_t emotion) { return values[run * emotions + emotion]; }
  double at(std::size_t run, std::size_t emotion) const { return values[run * emotions + emotion]; }
};

struct ExperimentConfig {
  Region region = Region::HongKongSAR;
  AgentType agent_type = AgentType::CultureAware;
  ProviderConfig model;
  // Default agents need the English text; culture-aware agents need the
  // region's language.
  Scenario scenario;
  EmotionSet emotions = EmotionSet::default_set();
  CultureProfile profile;
  PersonaPool pool;
  std::size_t agents_per_region = 200;
  std::size_t runs = 10;
  std::uint64_t base_seed = 0;
  // A run fails when either group keeps less than this share of its agents.
  double min_group_retention = 0.8;

  // Throws ConfigError.
  void validate() const;
};

struct AgentReaction {
  std::string persona_id;
  Condition condition = Condition::Control;
  EmotionVector vector;
  int attempts = 1;
  std::vector<std::string> warnings;

  bool operator==(const AgentReaction&) const = default;
};

struct Exclusion {
  std::string persona_id;
  Condition condition = Condition::Control;
  std::string reason;

  bool operator==(const Exclusion&) const = default;
};

struct RunRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::vector<AgentReaction> reactions;  // agent index order
  std::vector<Exclusion> exclusions;
  EmotionVector mean_control;
  EmotionVector mean_redtape;

  bool operator==(const RunRecord&) const = default;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunRecord> runs;
};

// Seed for run `index`; pairwise distinct for a fixed base seed.
std::uint64_t run_seed(std::uint64_t base_seed, std::size_t index);

// Seeded balanced split: the first ceil(n/2) shuffled agents are Control.
std::vector<Condition> assign_conditions(std::size_t agents, std::uint64_t seed);

// Full prompt sent to the provider: rendered persona prompt plus the reply
// format instruction.
std::string simulation_prompt(const Persona& persona, const Scenario& scenario,
                              Condition condition, const EmotionSet& emotions);

ExperimentResult run_experiment(const ExperimentConfig& cfg, Gateway& gateway);

using ProgressFn = std::function<void(std::size_t run, std::size_t runs)>;
ExperimentResult run_experiment(const ExperimentConfig& cfg, Gateway& gateway,
                                const ProgressFn& progress);

// Builds the gateway from cfg.model (mock backed by `mock`).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const MockSetup& mock);

// Every agent sees the same condition; one run. Used by the interactive
// service.
struct CohortResult {
  std::uint64_t seed = 0;
  std::vector<AgentReaction> reactions;
  std::vector<Exclusion> exclusions;
  EmotionVector mean;
};

CohortResult simulate_cohort(const ExperimentConfig& cfg, Condition condition, Gateway& gateway);

// Arithmetic mean per emotion in the given order.
EmotionVector mean_vector(const std::vector<const EmotionVector*>& vectors, std::size_t dims);

DiffMatrix paired_differences(const ExperimentResult& result);

nlohmann::ordered_json result_to_json(const ExperimentResult& result);
ExperimentResult result_from_json(const nlohmann::json& doc, std::string_view origin);
void write_result(const std::filesystem::path& path, const ExperimentResult& result);
ExperimentResult read_result(const std::filesystem::path& path);

}  // namespace ramo
