#include "ramo/service.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <map>
#include <mutex>

#include <fmt/format.h>
#include <httplib.h>
#include <openssl/rand.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"
#include "ramo/orchestrator.hpp"

namespace ramo {

using json_util::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(ErrorCode::ConfigError, "port must be in [0, 65535]");
  if (cohort_agents < 1) throw Error(ErrorCode::ConfigError, "cohort_agents must be >= 1");
  if (session_idle.count() < 1) throw Error(ErrorCode::ConfigError, "session_idle must be >= 1 minute");
  if (ui_dir && !std::filesystem::is_directory(*ui_dir)) {
    throw Error(ErrorCode::ConfigError, fmt::format("ui_dir {} is not a directory", ui_dir->string()));
  }
  provider.validate();
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  const json doc = json_util::read_file(path);
  const std::string where = path.string();
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  ServiceConfig cfg;
  if (doc.contains("listen")) {
    const json& l = json_util::field(doc, "listen", where);
    if (l.contains("host")) cfg.host = json_util::string_field(l, "host", where + ".listen");
    if (l.contains("port")) cfg.port = static_cast<int>(json_util::integer_field(l, "port", where + ".listen"));
  }
  if (doc.contains("store")) cfg.store_path = resolve(json_util::string_field(doc, "store", where));
  if (doc.contains("ui_dir") && !doc.at("ui_dir").is_null()) {
    cfg.ui_dir = resolve(json_util::string_field(doc, "ui_dir", where));
  }
  cfg.fixtures = resolve(json_util::string_field(doc, "fixtures", where));
  cfg.culture_profiles = resolve(json_util::string_field(doc, "culture_profiles", where));
  cfg.persona_pool = resolve(json_util::string_field(doc, "persona_pool", where));
  if (doc.contains("mock_effect")) cfg.mock_effect = resolve(json_util::string_field(doc, "mock_effect", where));
  cfg.provider = provider_defaults();
  if (doc.contains("provider")) {
    cfg.provider = provider_config_from_json(doc.at("provider"), where + ".provider", cfg.provider);
  }
  if (doc.contains("emotions")) {
    std::vector<std::string> labels;
    for (const auto& l : json_util::array_field(doc, "emotions", where)) {
      if (!l.is_string()) json_util::fail(where + ".emotions", "expected strings");
      labels.push_back(l.get<std::string>());
    }
    cfg.emotions = EmotionSet(std::move(labels));
  }
  if (doc.contains("cohort_agents")) {
    cfg.cohort_agents = static_cast<std::size_t>(json_util::integer_field(doc, "cohort_agents", where));
  }
  if (doc.contains("session_idle_minutes")) {
    cfg.session_idle = std::chrono::minutes(json_util::integer_field(doc, "session_idle_minutes", where));
  }
  if (cfg.provider.kind == ProviderKind::Mock && cfg.mock_effect.empty()) {
    throw Error(ErrorCode::ConfigError, "mock provider needs mock_effect");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Localization

std::string error_message(ErrorCode code, Language lang) {
  struct Row {
    ErrorCode code;
    const char* en;
    const char* zh;
    const char* de;
  };
  static const Row kRows[] = {
      {ErrorCode::InvalidKey, "The API key was rejected. Please check it and try again.",
       "API 密钥无效，请检查后重试。",
       "Der API-Schlüssel wurde abgelehnt. Bitte prüfen Sie ihn und versuchen Sie es erneut."},
      {ErrorCode::UnsupportedRegion, "This region is not supported.", "不支持该地区。",
       "Diese Region wird nicht unterstützt."},
      {ErrorCode::UnknownSession, "Your session has expired. Please start again.",
       "会话已过期，请重新开始。", "Ihre Sitzung ist abgelaufen. Bitte beginnen Sie erneut."},
      {ErrorCode::ValidationError, "The request is invalid.", "请求无效。",
       "Die Anfrage ist ungültig."},
      {ErrorCode::IndexOutOfRange, "A selected procedure step does not exist.",
       "所选的流程步骤不存在。", "Ein ausgewählter Verfahrensschritt existiert nicht."},
      {ErrorCode::NotEligible, "A selected step cannot be toggled as red tape.",
       "所选步骤不能作为繁文缛节切换。",
       "Ein ausgewählter Schritt kann nicht als Bürokratie umgeschaltet werden."},
      {ErrorCode::ParseError, "The request body could not be read.", "无法读取请求内容。",
       "Der Inhalt der Anfrage konnte nicht gelesen werden."},
      {ErrorCode::ProviderFailure, "The language model service failed. Please try again later.",
       "语言模型服务出错，请稍后再试。",
       "Der Sprachmodell-Dienst ist fehlgeschlagen. Bitte versuchen Sie es später erneut."},
      {ErrorCode::RunDegraded, "Too many simulated agents failed to answer. Please try again.",
       "过多模拟代理未能作答，请重试。",
       "Zu viele simulierte Agenten haben nicht geantwortet. Bitte versuchen Sie es erneut."},
  };
  for (const auto& r : kRows) {
    if (r.code == code) {
      return lang == Language::SimplifiedChinese ? r.zh : lang == Language::German ? r.de : r.en;
    }
  }
  switch (lang) {
    case Language::SimplifiedChinese: return "服务器内部错误。";
    case Language::German: return "Interner Serverfehler.";
    default: return "Internal server error.";
  }
}

std::string emotion_display_name(std::string_view label, Language lang) {
  struct Row {
    const char* label;
    const char* en;
    const char* zh;
    const char* de;
  };
  static const Row kRows[] = {
      {"anger", "Anger", "愤怒", "Wut"},
      {"contempt", "Contempt", "蔑视", "Verachtung"},
      {"disgust", "Disgust", "厌恶", "Ekel"},
      {"fear", "Fear", "恐惧", "Angst"},
      {"joy", "Joy", "喜悦", "Freude"},
      {"sadness", "Sadness", "悲伤", "Traurigkeit"},
      {"surprise", "Surprise", "惊讶", "Überraschung"},
      {"frustration", "Frustration", "挫败", "Frustration"},
      {"confusion", "Confusion", "困惑", "Verwirrung"},
  };
  for (const auto& r : kRows) {
    if (label == r.label) {
      return lang == Language::SimplifiedChinese ? r.zh : lang == Language::German ? r.de : r.en;
    }
  }
  return std::string(label);
}

// ---------------------------------------------------------------------------

namespace {

// Hands out turns in arrival order.
class TicketLock {
 public:
  void lock() {
    std::unique_lock lk(mu_);
    const std::uint64_t ticket = next_++;
    cv_.wait(lk, [&] { return serving_ == ticket; });
  }
  void unlock() {
    {
      std::lock_guard lk(mu_);
      ++serving_;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t next_ = 0;
  std::uint64_t serving_ = 0;
};

struct SessionSlot {
  std::string store_id;
  Region region = Region::HongKongSAR;
  Language lang = Language::English;
  std::string api_key;  // memory only
  std::shared_ptr<TicketLock> turn = std::make_shared<TicketLock>();
};

std::string random_hex(std::size_t bytes) {
  std::vector<unsigned char> buf(bytes);
  if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) {
    throw Error(ErrorCode::IoError, "random source unavailable");
  }
  std::string out;
  out.reserve(bytes * 2);
  for (unsigned char b : buf) out += fmt::format("{:02x}", b);
  return out;
}

std::uint64_t random_seed() {
  std::uint64_t v = 0;
  if (RAND_bytes(reinterpret_cast<unsigned char*>(&v), sizeof v) != 1) {
    throw Error(ErrorCode::IoError, "random source unavailable");
  }
  return v;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationError:
    case ErrorCode::UnsupportedRegion:
    case ErrorCode::IndexOutOfRange:
    case ErrorCode::NotEligible:
    case ErrorCode::ParseError:
      return 400;
    case ErrorCode::InvalidKey:
    case ErrorCode::UnknownSession:
      return 401;
    case ErrorCode::ProviderFailure:
    case ErrorCode::RunDegraded:
    case ErrorCode::AuthError:
    case ErrorCode::RateLimited:
    case ErrorCode::TransportError:
    case ErrorCode::ProviderError:
      return 502;
    default:
      return 500;
  }
}

// Client errors carry the technical detail; server-side ones do not.
bool detail_is_safe(ErrorCode code) { return http_status(code) == 400; }

std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  for (std::size_t pos; (pos = text.find(secret)) != std::string::npos;) {
    text.replace(pos, secret.size(), "[redacted]");
  }
  return text;
}

void send_json(httplib::Response& res, int status, const ojson& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, const Error& e, Language lang, const std::string& secret) {
  ojson body;
  body["error"]["code"] = to_string(e.code());
  body["error"]["message"] = error_message(e.code(), lang);
  if (detail_is_safe(e.code())) body["error"]["detail"] = redact(e.detail(), secret);
  send_json(res, http_status(e.code()), body);
}

json parse_body(const httplib::Request& req) {
  try {
    json body = json::parse(req.body);
    if (!body.is_object()) throw Error(ErrorCode::ParseError, "body must be a JSON object");
    return body;
  } catch (const json::parse_error&) {
    throw Error(ErrorCode::ParseError, "body is not valid JSON");
  }
}

std::string body_string(const json& body, const char* key) {
  if (!body.contains(key) || !body.at(key).is_string()) {
    throw Error(ErrorCode::ValidationError, fmt::format("'{}' must be a string", key));
  }
  return body.at(key).get<std::string>();
}

ojson emotions_json(const EmotionSet& set, Language lang) {
  ojson names = ojson::object();
  for (const auto& l : set.labels()) names[l] = emotion_display_name(l, lang);
  return names;
}

ojson scores_json(const std::vector<std::string>& labels, const std::vector<double>& scores) {
  ojson out = ojson::object();
  for (std::size_t k = 0; k < labels.size(); ++k) out[labels[k]] = scores.at(k);
  return out;
}

ojson optional_int_json(const std::optional<int>& v) { return v ? ojson(*v) : ojson(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------

struct Service::Impl {
  ServiceConfig cfg;
  FixtureSet fixtures;
  std::map<Region, CultureProfile> profiles;
  PersonaPool pool;
  MockSetup mock{EmotionSet::default_set(), {}};
  std::unique_ptr<Store> store;
  httplib::Server server;
  int bound_port = -1;
  std::atomic<bool> listening{false};

  std::mutex sessions_mu;
  std::map<std::string, SessionSlot> sessions;

  explicit Impl(ServiceConfig c, Clock clock) : cfg(std::move(c)) {
    cfg.validate();
    fixtures = load_fixtures(cfg.fixtures);
    profiles = load_culture_profiles(cfg.culture_profiles);
    pool = load_persona_pool(cfg.persona_pool);
    if (cfg.provider.kind == ProviderKind::Mock) {
      mock = load_mock_setup(cfg.mock_effect);
      if (mock.emotions != cfg.emotions) {
        throw Error(ErrorCode::ConfigError, "mock effect emotions differ from the service emotions");
      }
    } else {
      mock.emotions = cfg.emotions;
    }
    for (Region r : kAllRegions) {
      if (!profiles.contains(r)) {
        throw Error(ErrorCode::ConfigError,
                    fmt::format("no culture profile for {}", region_code(r)));
      }
    }
    store = std::make_unique<Store>(cfg.store_path, StoreOptions{cfg.session_idle, std::move(clock)});
    routes();
  }

  // Token lookup that also honours store-side expiry.
  SessionSlot session_for(const httplib::Request& req) {
    std::string token;
    const auto auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
    if (token.empty()) token = req.get_param_value("token");
    std::lock_guard lock(sessions_mu);
    auto it = sessions.find(token);
    if (token.empty() || it == sessions.end()) {
      throw Error(ErrorCode::UnknownSession, "unknown session token");
    }
    if (!store->session(it->second.store_id)) {
      sessions.erase(it);
      throw Error(ErrorCode::UnknownSession, "session expired");
    }
    return it->second;
  }

  // Runs a handler and turns typed errors into localized JSON errors.
  template <typename F>
  void guarded(httplib::Response& res, const Language& lang, const std::string& secret, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      send_error(res, e, lang, secret);
    } catch (const std::exception&) {
      send_error(res, Error(ErrorCode::IoError, "internal"), lang, secret);
    }
  }

  ExperimentConfig cohort(Region region, const Scenario& scenario, std::uint64_t seed,
                          const std::string& key) const {
    ExperimentConfig c;
    c.region = region;
    c.agent_type = AgentType::CultureAware;
    c.model = cfg.provider;
    c.model.api_key = key;
    c.scenario = scenario;
    c.emotions = cfg.emotions;
    c.profile = profiles.at(region);
    c.pool = pool;
    c.agents_per_region = cfg.cohort_agents;
    c.runs = 1;
    c.base_seed = seed;
    return c;
  }

  void routes() {
    server.set_payload_max_length(1 << 20);
    // No SO_REUSEPORT: a second server on the same port must fail to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
    });

    server.Get("/api/regions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto lang = parse_language(req.get_param_value("lang")).value_or(Language::English);
      ojson regions = ojson::array();
      for (Region r : kAllRegions) {
        regions.push_back({{"code", region_code(r)},
                           {"name", region_display_name(r, lang)},
                           {"native_name", region_display_name(r, language_of(r))},
                           {"ui_language", language_tag(language_of(r))}});
      }
      send_json(res, 200, {{"regions", regions}});
    });

    server.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      Language lang = Language::English;
      std::string key;
      guarded(res, lang, key, [&] {
        const json body = parse_body(req);
        key = body.contains("api_key") && body.at("api_key").is_string()
                  ? body.at("api_key").get<std::string>()
                  : std::string();
        const auto region = parse_region(body.contains("region") && body.at("region").is_string()
                                             ? body.at("region").get<std::string>()
                                             : std::string());
        if (!region) throw Error(ErrorCode::UnsupportedRegion, "region must be HK, CN or DE");
        lang = language_of(*region);
        ProviderConfig probe = cfg.provider;
        probe.api_key = key;
        probe_key(probe);

        SessionSlot slot;
        slot.store_id = store->create_session(*region, lang);
        slot.region = *region;
        slot.lang = lang;
        slot.api_key = key;
        const std::string token = random_hex(16);
        {
          std::lock_guard lock(sessions_mu);
          sessions.emplace(token, std::move(slot));
        }
        ojson out;
        out["token"] = token;
        out["region"] = region_code(*region);
        out["region_name"] = region_display_name(*region, lang);
        out["ui_language"] = language_tag(lang);
        out["emotion_order"] = cfg.emotions.labels();
        out["emotion_names"] = emotions_json(cfg.emotions, lang);
        out["idle_timeout_seconds"] = std::chrono::seconds(cfg.session_idle).count();
        send_json(res, 201, out);
      });
    });

    server.Get("/api/policies", [this](const httplib::Request& req, httplib::Response& res) {
      Language lang = Language::English;
      guarded(res, lang, "", [&] {
        const SessionSlot s = session_for(req);
        lang = s.lang;
        store->touch(s.store_id);
        ojson list = ojson::array();
        for (const PolicyProcedure* p : fixtures.procedures_for(s.region)) {
          ojson steps = ojson::array();
          for (std::size_t k = 0; k < p->steps.size(); ++k) {
            ojson step;
            step["number"] = k + 1;
            step["text"] = p->steps[k].text;
            step["red_tape"] = p->steps[k].red_tape;
            if (p->steps[k].superseded_by) step["superseded_by"] = *p->steps[k].superseded_by;
            steps.push_back(std::move(step));
          }
          list.push_back({{"id", p->id},
                          {"title", p->title},
                          {"source", procedure_source_name(p->source)},
                          {"red_tape_items", p->red_tape_items()},
                          {"steps", std::move(steps)}});
        }
        send_json(res, 200, {{"region", region_code(s.region)},
                             {"ui_language", language_tag(s.lang)},
                             {"policies", std::move(list)}});
      });
    });

    server.Post("/api/simulate", [this](const httplib::Request& req, httplib::Response& res) {
      Language lang = Language::English;
      std::string key;
      guarded(res, lang, key, [&] {
        const SessionSlot s = session_for(req);
        lang = s.lang;
        key = s.api_key;
        const json body = parse_body(req);
        simulate(s, body, res);
      });
    });

    server.Get("/api/history", [this](const httplib::Request& req, httplib::Response& res) {
      Language lang = Language::English;
      guarded(res, lang, "", [&] {
        const SessionSlot s = session_for(req);
        lang = s.lang;
        store->touch(s.store_id);
        std::optional<std::string> policy;
        if (req.has_param("policy_id")) policy = req.get_param_value("policy_id");
        ojson entries = ojson::array();
        for (const auto& e : store->history(s.store_id, policy)) {
          entries.push_back({{"ordinal", e.ordinal},
                             {"timestamp", format_timestamp(e.timestamp)},
                             {"policy_id", e.policy_id},
                             {"policy_source", procedure_source_name(e.policy_source)},
                             {"red_tape_count", optional_int_json(e.red_tape_count)},
                             {"selected_red_tape", e.selected_red_tape},
                             {"emotions", scores_json(e.emotion_labels, e.emotions.scores)},
                             {"slider", optional_int_json(e.slider)}});
        }
        send_json(res, 200, {{"emotion_order", cfg.emotions.labels()},
                             {"emotion_names", emotions_json(cfg.emotions, lang)},
                             {"entries", std::move(entries)}});
      });
    });

    if (cfg.ui_dir) server.set_mount_point("/", cfg.ui_dir->string());
  }

  void simulate(const SessionSlot& s, const json& body, httplib::Response& res) {
    const bool has_policy = body.contains("policy_id");
    const bool has_custom = body.contains("custom");
    if (has_policy == has_custom) {
      throw Error(ErrorCode::ValidationError, "give exactly one of 'policy_id' or 'custom'");
    }
    std::set<std::size_t> selected;
    if (body.contains("selected_red_tape")) {
      const json& sel = body.at("selected_red_tape");
      if (!sel.is_array()) throw Error(ErrorCode::ValidationError, "'selected_red_tape' must be an array");
      for (const auto& v : sel) {
        if (!v.is_number_unsigned()) {
          throw Error(ErrorCode::ValidationError, "red-tape items are step indices from red_tape_items");
        }
        selected.insert(v.get<std::size_t>());
      }
    }
    std::optional<int> slider;
    if (body.contains("slider") && !body.at("slider").is_null()) {
      const json& v = body.at("slider");
      if (!v.is_number_integer() || v.get<long long>() < 0 || v.get<long long>() > 100) {
        throw Error(ErrorCode::ValidationError, "'slider' must be an integer in [0, 100]");
      }
      slider = v.get<int>();
    }
    std::uint64_t seed = 0;
    if (body.contains("seed")) {
      if (!body.at("seed").is_number_unsigned()) {
        throw Error(ErrorCode::ValidationError, "'seed' must be a non-negative integer");
      }
      seed = body.at("seed").get<std::uint64_t>();
    } else {
      seed = random_seed();
    }

    PolicyProcedure procedure;
    if (has_policy) {
      const std::string id = body_string(body, "policy_id");
      const PolicyProcedure* p = fixtures.find_procedure(id, s.region);
      if (!p) throw Error(ErrorCode::ValidationError, fmt::format("unknown policy '{}'", id));
      procedure = *p;
    } else {
      const json& c = body.at("custom");
      if (!c.is_object()) throw Error(ErrorCode::ValidationError, "'custom' must be an object");
      if (!selected.empty()) {
        throw Error(ErrorCode::ValidationError, "custom policies have no red-tape items");
      }
      const std::string title = c.contains("title") ? body_string(c, "title") : std::string();
      procedure = make_custom_procedure("custom", s.region, title, body_string(c, "text"));
    }
    const Scenario scenario = compile_procedure(procedure, selected);

    const ExperimentConfig ec = cohort(s.region, scenario, seed, s.api_key);
    Gateway gateway(std::shared_ptr<ChatProvider>(make_provider(ec.model, mock)), cfg.emotions,
                    ec.model.parallelism);

    // Per-session FIFO so ordinals follow request order.
    std::lock_guard turn(*s.turn);
    const CohortResult result = simulate_cohort(ec, Condition::RedTape, gateway);

    SessionEntry entry;
    entry.policy_id = procedure.id;
    entry.policy_source = procedure.source;
    if (procedure.source == ProcedureSource::Predefined) {
      entry.red_tape_count = static_cast<int>(selected.size());
    }
    entry.selected_red_tape.assign(selected.begin(), selected.end());
    entry.emotion_labels = cfg.emotions.labels();
    entry.emotions = result.mean;
    entry.slider = slider;
    const std::string ordinal = store->append_entry(s.store_id, entry);

    ojson out;
    out["ordinal"] = ordinal;
    out["policy_id"] = entry.policy_id;
    out["policy_source"] = procedure_source_name(entry.policy_source);
    out["red_tape_count"] = optional_int_json(entry.red_tape_count);
    out["selected_red_tape"] = entry.selected_red_tape;
    out["emotion_order"] = cfg.emotions.labels();
    out["emotion_names"] = emotions_json(cfg.emotions, s.lang);
    out["emotions"] = scores_json(entry.emotion_labels, result.mean.scores);
    out["agents"] = result.reactions.size();
    out["excluded"] = result.exclusions.size();
    out["seed"] = seed;
    out["slider"] = optional_int_json(slider);
    send_json(res, 200, out);
  }
};

Service::Service(ServiceConfig config, Clock clock)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(clock))) {}

Service::~Service() { stop(); }

int Service::bind() {
  auto& s = impl_->server;
  const auto& c = impl_->cfg;
  const int port = c.port == 0 ? s.bind_to_any_port(c.host) : (s.bind_to_port(c.host, c.port) ? c.port : -1);
  if (port < 0) {
    throw Error(ErrorCode::BindError, fmt::format("cannot listen on {}:{}", c.host, c.port));
  }
  impl_->bound_port = port;
  return port;
}

void Service::listen() {
  if (impl_->bound_port < 0) throw Error(ErrorCode::BindError, "bind() was not called");
  impl_->listening = true;
  impl_->server.listen_after_bind();
  impl_->listening = false;
}

void Service::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool Service::running() const { return impl_->server.is_running(); }

const ServiceConfig& Service::config() const { return impl_->cfg; }

ExperimentConfig Service::cohort_config(Region region, const Scenario& scenario, std::uint64_t seed,
                                        const std::string& api_key) const {
  return impl_->cohort(region, scenario, seed, api_key);
}

const MockSetup& Service::mock_setup() const { return impl_->mock; }

}  // namespace ramo
