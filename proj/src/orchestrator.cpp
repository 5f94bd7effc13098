#include "ramo/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include <fmt/format.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"
#include "ramo/rng.hpp"

namespace ramo {

using json_util::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kPersonaStream = 0x7065727375ull;
constexpr std::uint64_t kReactionStream = 0x7265616374ull;
constexpr std::uint64_t kSplitStream = 0x73706c6974ull;

Language expected_language(const ExperimentConfig& cfg) {
  return cfg.agent_type == AgentType::Default ? Language::English : language_of(cfg.region);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (agents_per_region < 2) {
    throw Error(ErrorCode::ConfigError, "agents_per_region must be >= 2");
  }
  if (runs < 1) throw Error(ErrorCode::ConfigError, "runs must be >= 1");
  if (!(min_group_retention > 0.0 && min_group_retention <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "min_group_retention must be in (0, 1]");
  }
  if (profile.region != region) {
    throw Error(ErrorCode::ConfigError, "culture profile region differs from experiment region");
  }
  profile.validate();
  model.validate();
  const Language lang = expected_language(*this);
  if (scenario.control.language != lang || scenario.red_tape.language != lang) {
    throw Error(ErrorCode::ConfigError,
                fmt::format("{} agents in {} need '{}' scenario text",
                            agent_type_name(agent_type), region_code(region),
                            language_tag(lang)));
  }
}

std::uint64_t run_seed(std::uint64_t base_seed, std::size_t index) {
  return derive_seed(base_seed, index);
}

std::vector<Condition> assign_conditions(std::size_t agents, std::uint64_t seed) {
  std::vector<std::size_t> order(agents);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, kSplitStream));
  for (std::size_t i = agents; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<Condition> out(agents, Condition::RedTape);
  const std::size_t control = (agents + 1) / 2;
  for (std::size_t k = 0; k < control; ++k) out[order[k]] = Condition::Control;
  return out;
}

std::string simulation_prompt(const Persona& persona, const Scenario& scenario,
                              Condition condition, const EmotionSet& emotions) {
  const LocalizedText& text = scenario.text(condition);
  const auto questions = default_question_block(text.language, persona.agent_type);
  return render_prompt(persona, text, questions) + "\n\n" +
         reply_instructions(emotions, text.language);
}

EmotionVector mean_vector(const std::vector<const EmotionVector*>& vectors, std::size_t dims) {
  EmotionVector out;
  out.scores.assign(dims, 0.0);
  if (vectors.empty()) return out;
  for (const EmotionVector* v : vectors) {
    for (std::size_t e = 0; e < dims; ++e) out.scores[e] += v->scores.at(e);
  }
  for (double& s : out.scores) s /= static_cast<double>(vectors.size());
  return out;
}

namespace {

struct Job {
  Persona persona;
  Condition condition;
  std::uint64_t seed;
};

struct Outcome {
  std::optional<AgentReaction> reaction;
  std::optional<Exclusion> exclusion;
};

bool is_fatal(ErrorCode code) {
  return code == ErrorCode::AuthError || code == ErrorCode::InvalidKey ||
         code == ErrorCode::ConfigError || code == ErrorCode::LanguageMismatch;
}

// Fetches one reaction per job with at most gateway.parallelism() workers.
// Results land in job order regardless of completion order.
std::vector<Outcome> collect(const std::vector<Job>& jobs, const ExperimentConfig& cfg,
                             Gateway& gateway) {
  std::vector<Outcome> out(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex fatal_mu;
  std::optional<Error> fatal;

  auto worker = [&] {
    while (!abort) {
      const std::size_t j = next++;
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      try {
        ChatRequest req;
        req.prompt = simulation_prompt(job.persona, cfg.scenario, job.condition, cfg.emotions);
        req.agent_id = job.persona.id;
        req.condition = job.condition;
        req.seed = job.seed;
        Reaction r = gateway.react(req);
        out[j].reaction = AgentReaction{job.persona.id, job.condition, std::move(r.vector),
                                        r.attempts, std::move(r.warnings)};
      } catch (const Error& e) {
        if (is_fatal(e.code())) {
          std::lock_guard lock(fatal_mu);
          if (!fatal) fatal = e;
          abort = true;
          return;
        }
        out[j].exclusion = Exclusion{job.persona.id, job.condition, e.what()};
      }
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(gateway.parallelism()), jobs.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (fatal) {
    throw Error(ErrorCode::ProviderFailure, fatal->what());
  }
  return out;
}

std::vector<Job> make_jobs(const ExperimentConfig& cfg, std::uint64_t seed,
                           const std::vector<Condition>& conditions) {
  std::vector<Job> jobs;
  jobs.reserve(conditions.size());
  const std::uint64_t persona_seed = derive_seed(seed, kPersonaStream);
  const std::uint64_t reaction_seed = derive_seed(seed, kReactionStream);
  for (std::size_t j = 0; j < conditions.size(); ++j) {
    jobs.push_back({build_persona(cfg.region, cfg.agent_type, cfg.pool, cfg.profile,
                                  derive_seed(persona_seed, j), j),
                    conditions[j], derive_seed(reaction_seed, j)});
  }
  return jobs;
}

void check_retention(std::size_t intended, std::size_t kept, double min_share,
                     Condition cond, std::size_t run) {
  if (intended == 0) return;
  if (kept == 0 || static_cast<double>(kept) < min_share * static_cast<double>(intended) - 1e-9) {
    throw Error(ErrorCode::RunDegraded,
                fmt::format("run {}: {} group kept {} of {} agents", run, condition_name(cond),
                            kept, intended));
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, Gateway& gateway,
                                const ProgressFn& progress) {
  cfg.validate();
  if (gateway.emotions() != cfg.emotions) {
    throw Error(ErrorCode::ConfigError, "gateway emotion set differs from experiment");
  }
  const std::size_t dims = cfg.emotions.size();

  ExperimentResult result;
  result.config = cfg;
  for (std::size_t i = 0; i < cfg.runs; ++i) {
    RunRecord run;
    run.index = i;
    run.seed = run_seed(cfg.base_seed, i);
    const auto conditions = assign_conditions(cfg.agents_per_region, run.seed);
    const auto jobs = make_jobs(cfg, run.seed, conditions);
    auto outcomes = collect(jobs, cfg, gateway);

    std::size_t intended[2] = {0, 0};
    for (Condition c : conditions) ++intended[c == Condition::RedTape ? 1 : 0];
    for (auto& o : outcomes) {
      if (o.reaction) run.reactions.push_back(std::move(*o.reaction));
      if (o.exclusion) run.exclusions.push_back(std::move(*o.exclusion));
    }

    std::vector<const EmotionVector*> control, red;
    for (const auto& r : run.reactions) {
      (r.condition == Condition::Control ? control : red).push_back(&r.vector);
    }
    check_retention(intended[0], control.size(), cfg.min_group_retention, Condition::Control, i);
    check_retention(intended[1], red.size(), cfg.min_group_retention, Condition::RedTape, i);
    run.mean_control = mean_vector(control, dims);
    run.mean_redtape = mean_vector(red, dims);
    result.runs.push_back(std::move(run));
    if (progress) progress(i + 1, cfg.runs);
  }
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, Gateway& gateway) {
  return run_experiment(cfg, gateway, ProgressFn{});
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const MockSetup& mock) {
  Gateway gateway(std::shared_ptr<ChatProvider>(make_provider(cfg.model, mock)), cfg.emotions,
                  cfg.model.parallelism);
  return run_experiment(cfg, gateway);
}

CohortResult simulate_cohort(const ExperimentConfig& cfg, Condition condition, Gateway& gateway) {
  cfg.validate();
  CohortResult out;
  out.seed = run_seed(cfg.base_seed, 0);
  const std::vector<Condition> conditions(cfg.agents_per_region, condition);
  auto outcomes = collect(make_jobs(cfg, out.seed, conditions), cfg, gateway);
  for (auto& o : outcomes) {
    if (o.reaction) out.reactions.push_back(std::move(*o.reaction));
    if (o.exclusion) out.exclusions.push_back(std::move(*o.exclusion));
  }
  std::vector<const EmotionVector*> vs;
  for (const auto& r : out.reactions) vs.push_back(&r.vector);
  check_retention(conditions.size(), vs.size(), cfg.min_group_retention, condition, 0);
  out.mean = mean_vector(vs, cfg.emotions.size());
  return out;
}

DiffMatrix paired_differences(const ExperimentResult& result) {
  const std::size_t dims = result.config.emotions.size();
  DiffMatrix d(result.runs.size(), dims);
  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const auto& run = result.runs[i];
    for (std::size_t e = 0; e < dims; ++e) {
      d.at(i, e) = run.mean_redtape.scores.at(e) - run.mean_control.scores.at(e);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::string_view kResultFormat = "ramo.experiment/1";

ojson factors_json(const CultureFactors& f) {
  ojson out = ojson::object();
  const auto v = f.values();
  for (std::size_t k = 0; k < v.size(); ++k) out[CultureFactors::kKeys[k]] = v[k];
  return out;
}

CultureFactors factors_from(const json& obj, const std::string& where) {
  std::array<double, CultureFactors::kCount> v{};
  for (std::size_t k = 0; k < v.size(); ++k) {
    v[k] = json_util::number_field(obj, CultureFactors::kKeys[k], where);
  }
  return CultureFactors::from_values(v);
}

template <typename T, typename Parse>
T parsed(const json& obj, std::string_view key, const std::string& where, Parse parse) {
  const std::string s = json_util::string_field(obj, key, where);
  auto v = parse(s);
  if (!v) json_util::fail(fmt::format("{}.{}", where, key), fmt::format("unknown value '{}'", s));
  return *v;
}

}  // namespace

ojson result_to_json(const ExperimentResult& result) {
  const auto& cfg = result.config;
  ojson doc;
  doc["format"] = kResultFormat;
  doc["software_version"] = RAMO_VERSION;
  doc["generator"] = kGeneratorName;

  ojson c;
  c["region"] = region_code(cfg.region);
  c["agent_type"] = agent_type_name(cfg.agent_type);
  c["model"] = cfg.model.to_json();
  c["agents_per_region"] = cfg.agents_per_region;
  c["runs"] = cfg.runs;
  c["base_seed"] = cfg.base_seed;
  c["min_group_retention"] = cfg.min_group_retention;
  c["emotions"] = cfg.emotions.labels();
  c["culture_profile"] = {{"std_dev", cfg.profile.std_dev},
                          {"means", factors_json(cfg.profile.means)}};
  ojson roster = ojson::array();
  for (const auto& entry : cfg.pool.for_region(cfg.region)) {
    roster.push_back(demographic_to_json(entry));
  }
  c["persona_pool"] = std::move(roster);
  ojson sc;
  sc["id"] = cfg.scenario.id;
  sc["region"] = region_code(cfg.scenario.region);
  sc["lang"] = language_tag(cfg.scenario.control.language);
  sc["control"] = cfg.scenario.control.text;
  sc["red_tape"] = cfg.scenario.red_tape.text;
  sc["red_tape_lines"] = cfg.scenario.red_tape_lines;
  c["scenario"] = std::move(sc);
  doc["config"] = std::move(c);

  ojson runs = ojson::array();
  for (const auto& run : result.runs) {
    ojson r;
    r["index"] = run.index;
    r["seed"] = run.seed;
    r["mean_control"] = emotion_vector_to_json(cfg.emotions, run.mean_control);
    r["mean_red_tape"] = emotion_vector_to_json(cfg.emotions, run.mean_redtape);
    ojson ex = ojson::array();
    for (const auto& e : run.exclusions) {
      ex.push_back({{"agent", e.persona_id},
                    {"condition", condition_name(e.condition)},
                    {"reason", e.reason}});
    }
    r["exclusions"] = std::move(ex);
    ojson reactions = ojson::array();
    for (const auto& a : run.reactions) {
      ojson item;
      item["agent"] = a.persona_id;
      item["condition"] = condition_name(a.condition);
      item["scores"] = emotion_vector_to_json(cfg.emotions, a.vector);
      item["attempts"] = a.attempts;
      if (!a.warnings.empty()) item["warnings"] = a.warnings;
      reactions.push_back(std::move(item));
    }
    r["reactions"] = std::move(reactions);
    runs.push_back(std::move(r));
  }
  doc["runs"] = std::move(runs);
  return doc;
}

ExperimentResult result_from_json(const json& doc, std::string_view origin) {
  const std::string where(origin);
  if (json_util::string_field(doc, "format", where) != kResultFormat) {
    json_util::fail(where, "unsupported result format");
  }
  ExperimentResult out;
  auto& cfg = out.config;
  const json& c = json_util::field(doc, "config", where);
  const std::string cw = where + ".config";
  cfg.region = parsed<Region>(c, "region", cw, parse_region);
  cfg.agent_type = parsed<AgentType>(c, "agent_type", cw, parse_agent_type);

  const json& m = json_util::field(c, "model", cw);
  cfg.model.kind = parsed<ProviderKind>(m, "kind", cw + ".model", parse_provider_kind);
  cfg.model.endpoint = json_util::string_field(m, "endpoint", cw + ".model");
  cfg.model.model_name = json_util::string_field(m, "model", cw + ".model");
  if (m.contains("temperature") && m.at("temperature").is_number()) {
    cfg.model.temperature = m.at("temperature").get<double>();
  }
  cfg.model.max_retries = static_cast<int>(json_util::integer_field(m, "max_retries", cw));
  cfg.model.parallelism = static_cast<int>(json_util::integer_field(m, "parallelism", cw));

  cfg.agents_per_region = static_cast<std::size_t>(json_util::integer_field(c, "agents_per_region", cw));
  cfg.runs = static_cast<std::size_t>(json_util::integer_field(c, "runs", cw));
  const json& seed = json_util::field(c, "base_seed", cw);
  if (!seed.is_number_unsigned()) json_util::fail(cw + ".base_seed", "expected an unsigned integer");
  cfg.base_seed = seed.get<std::uint64_t>();
  cfg.min_group_retention = json_util::number_field(c, "min_group_retention", cw);

  std::vector<std::string> labels;
  for (const auto& l : json_util::array_field(c, "emotions", cw)) labels.push_back(l.get<std::string>());
  cfg.emotions = EmotionSet(std::move(labels));

  const json& prof = json_util::field(c, "culture_profile", cw);
  cfg.profile.region = cfg.region;
  cfg.profile.std_dev = json_util::number_field(prof, "std_dev", cw + ".culture_profile");
  cfg.profile.means = factors_from(json_util::field(prof, "means", cw), cw + ".culture_profile.means");

  const auto& roster = json_util::array_field(c, "persona_pool", cw);
  for (std::size_t k = 0; k < roster.size(); ++k) {
    cfg.pool.entries[cfg.region].push_back(
        demographic_from_json(roster[k], fmt::format("{}.persona_pool[{}]", cw, k)));
  }

  const json& sc = json_util::field(c, "scenario", cw);
  const std::string sw = cw + ".scenario";
  cfg.scenario.id = json_util::string_field(sc, "id", sw);
  cfg.scenario.region = parsed<Region>(sc, "region", sw, parse_region);
  const Language lang = parsed<Language>(sc, "lang", sw, parse_language);
  cfg.scenario.control = {lang, json_util::string_field(sc, "control", sw)};
  cfg.scenario.red_tape = {lang, json_util::string_field(sc, "red_tape", sw)};
  for (const auto& n : json_util::array_field(sc, "red_tape_lines", sw)) {
    cfg.scenario.red_tape_lines.push_back(n.get<std::size_t>());
  }

  const auto& runs = json_util::array_field(doc, "runs", where);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string rw = fmt::format("{}.runs[{}]", where, i);
    const json& r = runs[i];
    RunRecord run;
    run.index = static_cast<std::size_t>(json_util::integer_field(r, "index", rw));
    run.seed = json_util::field(r, "seed", rw).get<std::uint64_t>();
    run.mean_control = emotion_vector_from_json(cfg.emotions, json_util::field(r, "mean_control", rw),
                                                rw + ".mean_control");
    run.mean_redtape = emotion_vector_from_json(cfg.emotions, json_util::field(r, "mean_red_tape", rw),
                                                rw + ".mean_red_tape");
    for (const auto& e : json_util::array_field(r, "exclusions", rw)) {
      run.exclusions.push_back({json_util::string_field(e, "agent", rw),
                                parsed<Condition>(e, "condition", rw, parse_condition),
                                json_util::string_field(e, "reason", rw)});
    }
    const auto& reactions = json_util::array_field(r, "reactions", rw);
    for (std::size_t k = 0; k < reactions.size(); ++k) {
      const std::string aw = fmt::format("{}.reactions[{}]", rw, k);
      const json& a = reactions[k];
      AgentReaction ar;
      ar.persona_id = json_util::string_field(a, "agent", aw);
      ar.condition = parsed<Condition>(a, "condition", aw, parse_condition);
      ar.vector = emotion_vector_from_json(cfg.emotions, json_util::field(a, "scores", aw), aw + ".scores");
      ar.attempts = static_cast<int>(json_util::integer_field(a, "attempts", aw));
      if (a.contains("warnings")) {
        for (const auto& w : a.at("warnings")) ar.warnings.push_back(w.get<std::string>());
      }
      run.reactions.push_back(std::move(ar));
    }
    out.runs.push_back(std::move(run));
  }
  return out;
}

void write_result(const std::filesystem::path& path, const ExperimentResult& result) {
  json_util::write_text(path, result_to_json(result).dump(2) + "\n");
}

ExperimentResult read_result(const std::filesystem::path& path) {
  const json doc = json_util::read_file(path);
  try {
    return result_from_json(doc, path.string());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace ramo
