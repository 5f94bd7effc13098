#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "ramo/error.hpp"
#include "ramo/orchestrator.hpp"
#include "ramo/service.hpp"
#include "support.hpp"

using namespace ramo;
using namespace ramo::testing;
using nlohmann::json;

namespace {

constexpr const char* kKey = "sk-test-SERVICEKEY-4242";

ServiceConfig test_config(const std::string& name) {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.store_path = temp_dir(name) / "ramo.db";
  cfg.fixtures = config_dir() / "scenarios.json";
  cfg.culture_profiles = config_dir() / "culture_profiles.json";
  cfg.persona_pool = config_dir() / "persona_pool.json";
  cfg.mock_effect = config_dir() / "mock_effect.json";
  cfg.provider.kind = ProviderKind::Mock;
  return cfg;
}

// Service listening on an ephemeral port for the lifetime of the object.
class Running {
 public:
  explicit Running(ServiceConfig cfg, Clock clock = {})
      : service_(std::move(cfg), std::move(clock)), port_(service_.bind()),
        thread_([this] { service_.listen(); }), client_("127.0.0.1", port_) {
    while (!service_.running()) std::this_thread::yield();
  }
  ~Running() {
    service_.stop();
    thread_.join();
  }

  Service& service() { return service_; }
  int port() const { return port_; }

  std::pair<int, json> get(const std::string& path, const std::string& token = "") {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    auto res = client_.Get(path, h);
    REQUIRE(res);
    last_body = res->body;
    return {res->status, json::parse(res->body)};
  }
  std::pair<int, json> post(const std::string& path, const json& body, const std::string& token = "") {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    auto res = client_.Post(path, h, body.dump(), "application/json");
    REQUIRE(res);
    last_body = res->body;
    return {res->status, json::parse(res->body)};
  }
  std::string session(const std::string& region) {
    auto [status, body] = post("/api/sessions", {{"region", region}, {"api_key", kKey}});
    REQUIRE(status == 201);
    return body["token"].get<std::string>();
  }

  std::string last_body;

 private:
  Service service_;
  int port_;
  std::thread thread_;
  httplib::Client client_;
};

}  // namespace

TEST_CASE("regions") {
  Running srv(test_config("svc-regions"));
  auto [status, body] = srv.get("/api/regions");
  CHECK(status == 200);
  REQUIRE(body["regions"].size() == 3);
  CHECK(body["regions"][0]["code"] == "HK");
  CHECK(body["regions"][2]["ui_language"] == "de");
  CHECK(body["regions"][2]["native_name"] == "Deutschland");
  auto [s2, zh] = srv.get("/api/regions?lang=zh-Hans");
  CHECK(zh["regions"][2]["name"] == "德国");
}

TEST_CASE("sessions set the language from the region") {
  Running srv(test_config("svc-sessions"));
  auto [status, body] = srv.post("/api/sessions", {{"region", "DE"}, {"api_key", kKey}});
  CHECK(status == 201);
  CHECK(body["ui_language"] == "de");
  CHECK(body["emotion_names"]["anger"] == "Wut");
  const auto token = body["token"].get<std::string>();
  CHECK(token.size() == 32);
  CHECK(token.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(srv.session("DE") != token);
  CHECK(srv.last_body.find(kKey) == std::string::npos);

  auto [s_cn, cn] = srv.post("/api/sessions", {{"region", "CN"}, {"api_key", kKey}});
  CHECK(cn["ui_language"] == "zh-Hans");
}

TEST_CASE("session errors") {
  Running srv(test_config("svc-session-errors"));
  auto [s1, bad_key] = srv.post("/api/sessions", {{"region", "DE"}, {"api_key", "invalid-key"}});
  CHECK(s1 == 401);
  CHECK(bad_key["error"]["code"] == "InvalidKey");
  CHECK(bad_key["error"]["message"].get<std::string>().find("API-Schl") != std::string::npos);
  CHECK(srv.last_body.find("invalid-key") == std::string::npos);

  auto [s2, region] = srv.post("/api/sessions", {{"region", "XX"}, {"api_key", kKey}});
  CHECK(s2 == 400);
  CHECK(region["error"]["code"] == "UnsupportedRegion");

  auto [s3, empty] = srv.post("/api/sessions", {{"region", "HK"}, {"api_key", ""}});
  CHECK(s3 == 401);

  auto [s4, unknown] = srv.get("/api/history", "0123456789abcdef0123456789abcdef");
  CHECK(s4 == 401);
  CHECK(unknown["error"]["code"] == "UnknownSession");
}

TEST_CASE("policies are filtered by region") {
  Running srv(test_config("svc-policies"));
  const auto cn = srv.session("CN");
  auto [status, body] = srv.get("/api/policies", cn);
  CHECK(status == 200);
  REQUIRE(body["policies"].size() >= 1);
  for (const auto& p : body["policies"]) {
    CHECK(p["id"] == "beijing-passport");
    CHECK(p["title"].get<std::string>().find("护照") != std::string::npos);
    CHECK(p["red_tape_items"] == json::array({1, 2, 7, 8, 9}));
  }
  const auto de = srv.session("DE");
  auto [s2, de_body] = srv.get("/api/policies", de);
  for (const auto& p : de_body["policies"]) CHECK(p["id"] == "family-reunion-visa");
}

TEST_CASE("simulate matches the orchestrator and stores history") {
  Running srv(test_config("svc-simulate"));
  const auto token = srv.session("HK");
  const json req = {{"policy_id", "beijing-passport"},
                    {"selected_red_tape", {1, 7}},
                    {"slider", 70},
                    {"seed", 7}};
  auto [status, body] = srv.post("/api/simulate", req, token);
  REQUIRE(status == 200);
  CHECK(body["ordinal"] == "T1");
  CHECK(body["red_tape_count"] == 2);
  CHECK(body["agents"] == 20);
  CHECK(body["emotion_order"].size() == 9);

  // Oracle: same cohort through the orchestrator.
  const auto fixtures = load_fixtures(config_dir() / "scenarios.json");
  const auto scenario =
      compile_procedure(*fixtures.find_procedure("beijing-passport", Region::HongKongSAR), {1, 7});
  auto cfg = srv.service().cohort_config(Region::HongKongSAR, scenario, 7, kKey);
  const auto& mock = srv.service().mock_setup();
  Gateway gw(std::make_shared<MockChatProvider>(mock.emotions, mock.effect), mock.emotions, 2);
  const auto expected = simulate_cohort(cfg, Condition::RedTape, gw);
  for (std::size_t e = 0; e < mock.emotions.size(); ++e) {
    CHECK(body["emotions"][mock.emotions[e]].get<double>() == expected.mean.scores[e]);
  }

  // Same request and seed, same numbers; next ordinal.
  auto [s2, again] = srv.post("/api/simulate", req, token);
  CHECK(again["ordinal"] == "T2");
  CHECK(again["emotions"] == body["emotions"]);

  auto [s3, custom] = srv.post(
      "/api/simulate", {{"custom", {{"title", "Permit"}, {"text", "1. Apply\n2. Wait"}}}, {"seed", 1}},
      token);
  REQUIRE(s3 == 200);
  CHECK(custom["ordinal"] == "T3");
  CHECK(custom["red_tape_count"].is_null());
  CHECK(custom["policy_source"] == "custom");

  auto [s4, hist] = srv.get("/api/history?policy_id=beijing-passport", token);
  REQUIRE(hist["entries"].size() == 2);
  CHECK(hist["entries"][0]["ordinal"] == "T1");
  CHECK(hist["entries"][0]["slider"] == 70);
  CHECK(hist["entries"][0]["red_tape_count"] == 2);
  CHECK(hist["entries"][1]["ordinal"] == "T2");
  auto [s5, all] = srv.get("/api/history", token);
  CHECK(all["entries"].size() == 3);
}

TEST_CASE("fresh history is empty") {
  Running srv(test_config("svc-fresh"));
  const auto token = srv.session("DE");
  auto [status, body] = srv.get("/api/history", token);
  CHECK(status == 200);
  CHECK(body["entries"].empty());
  CHECK(body["emotion_names"]["joy"] == "Freude");
}

TEST_CASE("simulate validation is localized") {
  Running srv(test_config("svc-validate"));
  const auto token = srv.session("CN");
  auto [s1, b1] = srv.post("/api/simulate", {{"policy_id", "beijing-passport"}, {"selected_red_tape", {3}}}, token);
  CHECK(s1 == 400);
  CHECK(b1["error"]["code"] == "NotEligible");
  CHECK(b1["error"]["message"] == error_message(ErrorCode::NotEligible, Language::SimplifiedChinese));

  auto [s2, b2] = srv.post("/api/simulate", {{"policy_id", "nope"}}, token);
  CHECK(s2 == 400);
  CHECK(b2["error"]["code"] == "ValidationError");

  auto [s3, b3] = srv.post("/api/simulate", {{"policy_id", "beijing-passport"}, {"slider", 101}}, token);
  CHECK(s3 == 400);

  auto [s4, b4] = srv.post("/api/simulate",
                           {{"custom", {{"text", "step"}}}, {"selected_red_tape", {1}}}, token);
  CHECK(s4 == 400);

  auto [s5, b5] = srv.post("/api/simulate", {{"policy_id", "beijing-passport"}, {"selected_red_tape", {99}}}, token);
  CHECK(s5 == 400);
  CHECK(b5["error"]["code"] == "IndexOutOfRange");

  // Failed requests leave no history.
  auto [s6, hist] = srv.get("/api/history", token);
  CHECK(hist["entries"].empty());
}

TEST_CASE("concurrent simulate calls keep ordinals dense") {
  Running srv(test_config("svc-concurrent"));
  const auto token = srv.session("DE");
  std::vector<std::jthread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 6; ++t) {
    threads.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", srv.port());
      const json req = {{"policy_id", "family-reunion-visa"}, {"selected_red_tape", {1}}, {"seed", t}};
      auto res = c.Post("/api/simulate", {{"Authorization", "Bearer " + token}}, req.dump(),
                        "application/json");
      if (res && res->status == 200) ++ok;
    });
  }
  threads.clear();
  CHECK(ok == 6);
  auto [status, hist] = srv.get("/api/history", token);
  REQUIRE(hist["entries"].size() == 6);
  for (int k = 0; k < 6; ++k) CHECK(hist["entries"][k]["ordinal"] == "T" + std::to_string(k + 1));
}

TEST_CASE("expired sessions are rejected") {
  auto now = std::make_shared<std::atomic<Millis>>(1'000'000);
  auto cfg = test_config("svc-expiry");
  cfg.session_idle = std::chrono::minutes(5);
  Running srv(cfg, [now] { return now->load(); });
  const auto token = srv.session("HK");
  CHECK(srv.get("/api/history", token).first == 200);
  *now += 6 * 60 * 1000;
  auto [status, body] = srv.get("/api/history", token);
  CHECK(status == 401);
  CHECK(body["error"]["code"] == "UnknownSession");
}

TEST_CASE("the key never reaches disk") {
  auto cfg = test_config("svc-keyscan");
  const auto dir = cfg.store_path.parent_path();
  {
    Running srv(cfg);
    const auto token = srv.session("HK");
    srv.post("/api/simulate", {{"policy_id", "beijing-passport"}, {"slider", 30}, {"seed", 3}}, token);
    Store store(cfg.store_path);
    export_feedback(store, dir / "feedback.csv");
  }
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    const auto bytes = json_util::read_text(f.path());
    CHECK(bytes.find("SERVICEKEY") == std::string::npos);
  }
}

TEST_CASE("binding a used port fails") {
  Running first(test_config("svc-bind-a"));
  auto cfg = test_config("svc-bind-b");
  cfg.port = first.port();
  Service second(cfg);
  try {
    second.bind();
    FAIL("expected BindError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BindError);
  }
}

TEST_CASE("service config file") {
  const auto cfg = load_service_config(config_dir() / "service.json");
  CHECK(cfg.cohort_agents == 20);
  CHECK(cfg.provider.kind == ProviderKind::Mock);
  CHECK(cfg.provider.model_name == "gpt-4o");
  CHECK(cfg.fixtures == config_dir() / "scenarios.json");

  const auto dir = temp_dir("svc-config");
  json_util::write_text(dir / "bad.json", R"({"fixtures":"a","culture_profiles":"b","persona_pool":"c",
    "provider":{"kind":"http","api_key":"sk-no"}})");
  try {
    load_service_config(dir / "bad.json");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("sk-no") == std::string::npos);
  }
}

TEST_CASE("static ui files are served") {
  auto cfg = test_config("svc-static");
  const auto ui = cfg.store_path.parent_path() / "ui";
  json_util::write_text(ui / "index.html", "<html>ramo</html>");
  cfg.ui_dir = ui;
  Running srv(cfg);
  httplib::Client c("127.0.0.1", srv.port());
  auto res = c.Get("/index.html");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == "<html>ramo</html>");
}
