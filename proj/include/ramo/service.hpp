#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "ramo/error.hpp"
#include "ramo/gateway.hpp"
#include "ramo/orchestrator.hpp"
#include "ramo/persona.hpp"
#include "ramo/scenario.hpp"
#include "ramo/store.hpp"

namespace ramo {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path store_path = "ramo.db";
  std::optional<std::filesystem::path> ui_dir;
  std::filesystem::path fixtures;
  std::filesystem::path culture_profiles;
  std::filesystem::path persona_pool;
  std::filesystem::path mock_effect;  // used when provider.kind is mock
  ProviderConfig provider;            // api_key comes from each session
  EmotionSet emotions = EmotionSet::default_set();
  std::size_t cohort_agents = 20;
  std::chrono::minutes session_idle{60};

  void validate() const;
};

// Relative paths resolve against the config file's directory. Throws
// ParseError or ConfigError.
ServiceConfig load_service_config(const std::filesystem::path& path);

// Localized, user-facing error message.
std::string error_message(ErrorCode code, Language lang);
// Localized axis label; unknown labels pass through.
std::string emotion_display_name(std::string_view label, Language lang);

// HTTP API server. Routes live under /api; the UI bundle (if configured) is
// served from /.
class Service {
 public:
  // `clock` drives session expiry; defaults to the system clock.
  explicit Service(ServiceConfig config, Clock clock = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listen socket and returns the port. Throws BindError.
  int bind();
  // Serves until stop(). bind() must have succeeded.
  void listen();
  void stop();
  bool running() const;

  const ServiceConfig& config() const;
  // Experiment setup used for a simulate call; exposed for cross-checking.
  ExperimentConfig cohort_config(Region region, const Scenario& scenario, std::uint64_t seed,
                                 const std::string& api_key) const;
  const MockSetup& mock_setup() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ramo
