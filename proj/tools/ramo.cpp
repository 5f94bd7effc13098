#include <atomic>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"
#include "ramo/metrics.hpp"
#include "ramo/orchestrator.hpp"
#include "ramo/service.hpp"
#include "ramo/store.hpp"

namespace fs = std::filesystem;
using namespace ramo;

namespace {

constexpr const char* kKeyEnv = "RAMO_API_KEY";

enum Exit { kOk = 0, kRuntime = 1, kUsage = 2 };

// Flags shared by `simulate` and `grid`.
struct SetupPaths {
  fs::path config_dir = RAMO_DEFAULT_CONFIG_DIR;
  fs::path fixtures;
  fs::path profiles;
  fs::path pool;
  fs::path mock_effect;

  fs::path or_default(const fs::path& p, const char* name) const {
    return p.empty() ? config_dir / name : p;
  }
};

struct SimulateArgs {
  std::string region;
  std::string agent_type = "culture-aware";
  std::string provider = "mock";
  std::size_t agents = 200;
  std::size_t runs = 10;
  std::uint64_t seed = 0;
  fs::path out;
  std::string model = "gpt-4o";
  std::string endpoint;
  std::optional<double> temperature;
  int parallelism = 4;
  int max_retries = 3;
  std::string scenario{kCanonicalScenarioId};
  std::vector<std::string> emotions;
  bool quiet = false;
};

const std::map<std::string, std::string> kRegionChoices = {{"HK", "HK"}, {"CN", "CN"}, {"DE", "DE"}};

std::string api_key_from_env() {
  const char* v = std::getenv(kKeyEnv);
  return v ? v : "";
}

MockSetup load_mock_or_default(const SetupPaths& paths, const EmotionSet& emotions, bool mock) {
  if (mock) return load_mock_setup(paths.or_default(paths.mock_effect, "mock_effect.json"));
  return MockSetup{emotions, {}};
}

ExperimentConfig build_experiment(const SimulateArgs& a, const SetupPaths& paths, MockSetup* mock_out) {
  ExperimentConfig cfg;
  cfg.region = *parse_region(a.region);
  cfg.agent_type = *parse_agent_type(a.agent_type);
  cfg.model = provider_defaults();
  cfg.model.kind = *parse_provider_kind(a.provider);
  cfg.model.model_name = a.model;
  if (!a.endpoint.empty()) cfg.model.endpoint = a.endpoint;
  cfg.model.temperature = a.temperature;
  cfg.model.parallelism = a.parallelism;
  cfg.model.max_retries = a.max_retries;
  if (cfg.model.kind == ProviderKind::HttpChat) {
    cfg.model.api_key = api_key_from_env();
    if (cfg.model.api_key.empty()) {
      throw Error(ErrorCode::ConfigError, fmt::format("set {} for the http provider", kKeyEnv));
    }
  }

  const bool mock = cfg.model.kind == ProviderKind::Mock;
  MockSetup setup = load_mock_or_default(paths, EmotionSet::default_set(), mock);
  if (!a.emotions.empty()) {
    EmotionSet requested(a.emotions);
    if (mock && requested != setup.emotions) {
      throw Error(ErrorCode::ConfigError, "--emotions differs from the mock effect file");
    }
    setup.emotions = requested;
  }
  cfg.emotions = setup.emotions;

  const auto profiles = load_culture_profiles(paths.or_default(paths.profiles, "culture_profiles.json"));
  cfg.profile = profiles.at(cfg.region);
  cfg.pool = load_persona_pool(paths.or_default(paths.pool, "persona_pool.json"));
  const auto fixtures = load_fixtures(paths.or_default(paths.fixtures, "scenarios.json"));
  // Default agents read the English text.
  const Region text_region = cfg.agent_type == AgentType::Default ? Region::HongKongSAR : cfg.region;
  const Scenario* s = fixtures.find_scenario(a.scenario, text_region);
  if (!s) {
    throw Error(ErrorCode::ConfigError, fmt::format("no scenario '{}' for {}", a.scenario,
                                                    region_code(text_region)));
  }
  cfg.scenario = *s;
  cfg.agents_per_region = a.agents;
  cfg.runs = a.runs;
  cfg.base_seed = a.seed;
  if (mock_out) *mock_out = std::move(setup);
  return cfg;
}

ExperimentResult execute(const ExperimentConfig& cfg, const MockSetup& mock, bool quiet) {
  Gateway gateway(std::shared_ptr<ChatProvider>(make_provider(cfg.model, mock)), cfg.emotions,
                  cfg.model.parallelism);
  return run_experiment(cfg, gateway, [&](std::size_t done, std::size_t total) {
    if (!quiet) std::cerr << fmt::format("run {}/{} done\n", done, total);
  });
}

int cmd_simulate(const SimulateArgs& a, const SetupPaths& paths) {
  MockSetup mock{EmotionSet::default_set(), {}};
  const auto cfg = build_experiment(a, paths, &mock);
  const auto result = execute(cfg, mock, a.quiet);
  write_result(a.out, result);
  std::size_t excluded = 0;
  for (const auto& r : result.runs) excluded += r.exclusions.size();
  if (!a.quiet) {
    std::cerr << fmt::format("wrote {} ({} runs, {} agents, {} excluded)\n", a.out.string(),
                             result.runs.size(), cfg.agents_per_region, excluded);
  }
  return kOk;
}

struct EvaluateArgs {
  std::vector<fs::path> results;
  fs::path ground_truth = fs::path(RAMO_DEFAULT_CONFIG_DIR) / "ground_truth.json";
  std::size_t permutations = 2000;
  double percentile = 95.0;
  std::uint64_t seed = 0;
  fs::path out;
  fs::path table;
};

int cmd_evaluate(const EvaluateArgs& a) {
  std::vector<ExperimentResult> results;
  for (const auto& p : a.results) results.push_back(read_result(p));
  const auto gt = load_ground_truth(a.ground_truth);
  SigTestConfig cfg;
  cfg.permutations = a.permutations;
  cfg.confidence_percentile = a.percentile;
  cfg.seed = a.seed;
  const auto report = alignment_report(results, gt, cfg);
  const std::string table = report_to_table(report);
  if (!a.out.empty()) json_util::write_text(a.out, report_to_json(report).dump(2) + "\n");
  if (!a.table.empty()) json_util::write_text(a.table, table);
  std::cout << table;
  return kOk;
}

struct GridArgs {
  fs::path config;
  bool quiet = false;
};

// {"out_dir", "agents", "runs", "seed", "regions": [..], "agent_types": [..],
//  "models": [{"name", provider fields...}]}
int cmd_grid(const GridArgs& g, const SetupPaths& paths) {
  const auto doc = json_util::read_file(g.config);
  const std::string where = g.config.string();
  fs::path out_dir = json_util::string_field(doc, "out_dir", where);
  if (out_dir.is_relative()) out_dir = g.config.parent_path() / out_dir;

  SimulateArgs base;
  if (doc.contains("agents")) base.agents = static_cast<std::size_t>(json_util::integer_field(doc, "agents", where));
  if (doc.contains("runs")) base.runs = static_cast<std::size_t>(json_util::integer_field(doc, "runs", where));
  if (doc.contains("seed")) base.seed = json_util::field(doc, "seed", where).get<std::uint64_t>();
  if (doc.contains("scenario")) base.scenario = json_util::string_field(doc, "scenario", where);
  base.quiet = g.quiet;

  std::vector<std::string> regions = {"HK", "CN", "DE"};
  if (doc.contains("regions")) regions = doc.at("regions").get<std::vector<std::string>>();
  std::vector<std::string> types = {"default", "culture-aware"};
  if (doc.contains("agent_types")) types = doc.at("agent_types").get<std::vector<std::string>>();
  for (const auto& r : regions) {
    if (!parse_region(r)) json_util::fail(where + ".regions", fmt::format("unknown region '{}'", r));
  }
  for (const auto& t : types) {
    if (!parse_agent_type(t)) json_util::fail(where + ".agent_types", fmt::format("unknown agent type '{}'", t));
  }

  const auto& models = json_util::array_field(doc, "models", where);
  for (std::size_t m = 0; m < models.size(); ++m) {
    const std::string mw = fmt::format("{}.models[{}]", where, m);
    const json_util::json& item = models[m];
    const std::string name = json_util::string_field(item, "name", mw);
    json_util::json provider_fields = item;
    provider_fields.erase("name");
    const ProviderConfig pc = provider_config_from_json(provider_fields, mw, provider_defaults());
    for (const auto& r : regions) {
      for (const auto& t : types) {
        SimulateArgs a = base;
        a.region = r;
        a.agent_type = t;
        a.provider = std::string(provider_kind_name(pc.kind));
        a.model = pc.model_name;
        a.endpoint = pc.endpoint;
        a.temperature = pc.temperature;
        a.parallelism = pc.parallelism;
        a.max_retries = pc.max_retries;
        a.out = out_dir / fmt::format("{}_{}_{}.json", name, r, t);
        if (!g.quiet) std::cerr << fmt::format("{} {} {}\n", name, r, t);
        cmd_simulate(a, paths);
        std::cout << a.out.string() << "\n";
      }
    }
  }
  return kOk;
}

struct ServeArgs {
  fs::path config;
  std::string host;
  int port = -1;
};

int cmd_serve(const ServeArgs& a) {
  ServiceConfig cfg = load_service_config(a.config);
  if (!a.host.empty()) cfg.host = a.host;
  if (a.port >= 0) cfg.port = a.port;

  // Signals are taken by a dedicated thread so shutdown runs outside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  Service service(cfg);
  const int port = service.bind();
  std::cerr << fmt::format("listening on http://{}:{}\n", cfg.host, port);
  std::atomic<bool> done{false};
  std::jthread waiter([&] {
    const timespec tick{0, 200'000'000};
    while (!done) {
      if (sigtimedwait(&set, nullptr, &tick) > 0) {
        service.stop();
        return;
      }
    }
  });
  service.listen();
  done = true;
  waiter.join();
  std::cerr << "stopped\n";
  return kOk;
}

struct ExportArgs {
  fs::path store;
  fs::path out;
  std::string from;
  std::string to;
};

int cmd_export(const ExportArgs& a) {
  TimeRange range;
  auto stamp = [](const std::string& s, const char* flag) -> std::optional<Millis> {
    if (s.empty()) return std::nullopt;
    auto t = parse_timestamp(s);
    if (!t) throw CLI::ValidationError(flag, "expected YYYY-MM-DDTHH:MM:SS.mmmZ");
    return t;
  };
  range.from = stamp(a.from, "--from");
  range.to = stamp(a.to, "--to");
  if (!fs::exists(a.store)) throw Error(ErrorCode::IoError, fmt::format("no store at {}", a.store.string()));
  Store store(a.store);
  const auto n = export_feedback(store, a.out, range);
  std::cerr << fmt::format("wrote {} records to {}\n", n, a.out.string());
  return kOk;
}

void add_setup_flags(CLI::App* cmd, SetupPaths& p) {
  cmd->add_option("--config-dir", p.config_dir, "Directory with the default data files")
      ->capture_default_str();
  cmd->add_option("--fixtures", p.fixtures, "Scenario and procedure fixtures (JSON)");
  cmd->add_option("--profiles", p.profiles, "Culture profiles (JSON)");
  cmd->add_option("--pool", p.pool, "Persona demographic pool (JSON)");
  cmd->add_option("--effect", p.mock_effect, "Mock provider effect profile (JSON)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Red-tape emotion simulation with culture-aware LLM agents"};
  app.set_version_flag("--version", RAMO_VERSION);
  app.require_subcommand(1);

  SetupPaths paths;
  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run one experiment and write a result file");
  simulate->add_option("--region", sim.region, "HK, CN or DE")->required()->check(CLI::IsMember(kRegionChoices));
  simulate->add_option("--agent-type", sim.agent_type, "default or culture-aware")
      ->capture_default_str()
      ->check(CLI::IsMember({"default", "culture-aware"}));
  simulate->add_option("--provider", sim.provider, "mock or http (key from RAMO_API_KEY)")
      ->capture_default_str()
      ->check(CLI::IsMember({"mock", "http"}));
  simulate->add_option("--agents", sim.agents, "Agents per run")->capture_default_str()->check(CLI::Range(2, 100000));
  simulate->add_option("--runs", sim.runs, "Independent runs")->capture_default_str()->check(CLI::Range(1, 10000));
  simulate->add_option("--seed", sim.seed, "Base seed")->capture_default_str();
  simulate->add_option("--out", sim.out, "Result file")->required();
  simulate->add_option("--model", sim.model, "Model name")->capture_default_str();
  simulate->add_option("--endpoint", sim.endpoint, "Chat-completions URL (default: $RAMO_PROVIDER_ENDPOINT or OpenAI)");
  simulate->add_option("--temperature", sim.temperature, "Sampling temperature (default: provider default)");
  simulate->add_option("--parallelism", sim.parallelism, "Concurrent requests")->capture_default_str()->check(CLI::Range(1, 1024));
  simulate->add_option("--max-retries", sim.max_retries, "Retries per request")->capture_default_str()->check(CLI::Range(0, 20));
  simulate->add_option("--scenario", sim.scenario, "Scenario id")->capture_default_str();
  simulate->add_option("--emotions", sim.emotions, "Emotion labels (comma separated)")->delimiter(',');
  simulate->add_flag("--quiet", sim.quiet, "No progress output");
  add_setup_flags(simulate, paths);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Compute the alignment report for result files");
  evaluate->add_option("--results", ev.results, "Result files")->required()->expected(1, -1)->check(CLI::ExistingFile);
  evaluate->add_option("--ground-truth", ev.ground_truth, "Human ground truth (JSON)")->capture_default_str();
  evaluate->add_option("--permutations", ev.permutations, "Sign-flip permutations")->capture_default_str()->check(CLI::PositiveNumber);
  evaluate->add_option("--percentile", ev.percentile, "Null percentile")->capture_default_str()->check(CLI::Range(0.001, 99.999));
  evaluate->add_option("--seed", ev.seed, "Permutation seed")->capture_default_str();
  evaluate->add_option("--out", ev.out, "Report file (JSON)");
  evaluate->add_option("--table", ev.table, "Also write the text table here");

  GridArgs grid;
  auto* grid_cmd = app.add_subcommand("grid", "Run every model x region x agent type from a config file");
  grid_cmd->add_option("--config", grid.config, "Grid config (JSON)")->required()->check(CLI::ExistingFile);
  grid_cmd->add_flag("--quiet", grid.quiet, "No progress output");
  add_setup_flags(grid_cmd, paths);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP API");
  serve_cmd->add_option("--config", serve.config, "Service config (JSON)")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", serve.host, "Override the listen host");
  serve_cmd->add_option("--port", serve.port, "Override the listen port")->check(CLI::Range(0, 65535));

  ExportArgs ex;
  auto* export_cmd = app.add_subcommand("export-feedback", "Write slider feedback as CSV");
  export_cmd->add_option("--store", ex.store, "Store file")->required();
  export_cmd->add_option("--out", ex.out, "CSV file")->required();
  export_cmd->add_option("--from", ex.from, "Earliest timestamp, inclusive");
  export_cmd->add_option("--to", ex.to, "Latest timestamp, inclusive");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, paths);
    if (*evaluate) return cmd_evaluate(ev);
    if (*grid_cmd) return cmd_grid(grid, paths);
    if (*serve_cmd) return cmd_serve(serve);
    if (*export_cmd) return cmd_export(ex);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
