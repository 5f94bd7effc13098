#include "ramo/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"
#include "ramo/rng.hpp"

namespace ramo {

using json_util::json;

// ---------------------------------------------------------------------------
// Emotion set / vector

EmotionSet::EmotionSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw Error(ErrorCode::ConfigError, "emotion set is empty");
  std::set<std::string> seen;
  for (const auto& l : labels_) {
    if (l.empty()) throw Error(ErrorCode::ConfigError, "emotion label is empty");
    if (!seen.insert(l).second) {
      throw Error(ErrorCode::ConfigError, fmt::format("duplicate emotion label '{}'", l));
    }
  }
}

EmotionSet EmotionSet::default_set() {
  return EmotionSet({"anger", "contempt", "disgust", "fear", "joy", "sadness", "surprise",
                     "frustration", "confusion"});
}

std::optional<std::size_t> EmotionSet::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return i;
  }
  return std::nullopt;
}

nlohmann::ordered_json emotion_vector_to_json(const EmotionSet& set, const EmotionVector& v) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < set.size(); ++i) out[set[i]] = v.scores.at(i);
  return out;
}

EmotionVector emotion_vector_from_json(const EmotionSet& set, const json& obj,
                                       std::string_view where) {
  if (!obj.is_object() || obj.size() != set.size()) {
    json_util::fail(where, fmt::format("expected an object with {} emotion scores", set.size()));
  }
  EmotionVector v;
  v.scores.reserve(set.size());
  for (const auto& label : set.labels()) {
    v.scores.push_back(json_util::number_field(obj, label, where));
  }
  return v;
}

// ---------------------------------------------------------------------------
// Reply parsing

namespace {

std::string_view trim(std::string_view s) {
  auto sp = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '`' || c == '*'; };
  while (!s.empty() && sp(s.front())) s.remove_prefix(1);
  while (!s.empty() && sp(s.back())) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::optional<double> parse_number(std::string_view text) {
  std::string s(trim(text));
  std::replace(s.begin(), s.end(), ',', '.');
  if (s.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

ParsedReply parse_emotion_vector(std::string_view raw, const EmotionSet& emotions) {
  const auto lines = split_lines(raw);

  // Last EMOTIONS header wins; models sometimes echo the instructions first.
  std::optional<std::size_t> header;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lower(trim(lines[i])) == "emotions") header = i;
  }
  if (!header) throw Error(ErrorCode::MalformedOutput, "reply has no EMOTIONS block");

  std::vector<std::optional<std::string_view>> values(emotions.size());
  bool terminated = false;
  for (std::size_t i = *header + 1; i < lines.size(); ++i) {
    const std::string_view line = trim(lines[i]);
    if (lower(line) == "end") {
      terminated = true;
      break;
    }
    if (line.empty()) continue;
    std::size_t sep = line.find_first_of(":=");
    if (sep == std::string_view::npos) continue;
    const std::string label = lower(trim(line.substr(0, sep)));
    auto idx = emotions.index_of(label);
    if (!idx) continue;
    if (!values[*idx]) values[*idx] = line.substr(sep + 1);
  }
  if (!terminated) throw Error(ErrorCode::MalformedOutput, "EMOTIONS block is not closed by END");

  ParsedReply out;
  out.vector.scores.resize(emotions.size());
  for (std::size_t i = 0; i < emotions.size(); ++i) {
    if (!values[i]) throw Error(ErrorCode::MissingEmotion, emotions[i]);
    auto v = parse_number(*values[i]);
    if (!v) throw Error(ErrorCode::NonNumericScore, emotions[i]);
    double x = *v;
    if (x < 0.0 || x > 1.0) {
      const double clamped = std::clamp(x, 0.0, 1.0);
      out.warnings.push_back(fmt::format("{} score {} clamped to {}", emotions[i], x, clamped));
      x = clamped;
    }
    out.vector.scores[i] = x;
  }
  return out;
}

std::string format_emotion_block(const EmotionSet& emotions, const EmotionVector& v) {
  std::string out = "EMOTIONS\n";
  for (std::size_t i = 0; i < emotions.size(); ++i) {
    out += fmt::format("{}: {}\n", emotions[i], v.scores.at(i));
  }
  out += "END";
  return out;
}

namespace {

std::string block_template(const EmotionSet& emotions) {
  std::string out = "EMOTIONS\n";
  for (const auto& label : emotions.labels()) out += label + ": <number between 0 and 1>\n";
  out += "END";
  return out;
}

}  // namespace

std::string reply_instructions(const EmotionSet& emotions, Language lang) {
  std::string lead;
  switch (lang) {
    case Language::English:
      lead =
          "After your answer, rate how strongly you feel each emotion below as a probability "
          "between 0 and 1. The emotions are independent and do not need to sum to 1. End your "
          "reply with this block, keeping the English labels:";
      break;
    case Language::SimplifiedChinese:
      lead =
          "回答之后，请用 0 到 1 之间的概率评估您对下列每种情绪的感受强度。各情绪相互独立，"
          "总和不必为 1。请在回复末尾附上以下格式的区块，并保留英文标签：";
      break;
    case Language::German:
      lead =
          "Bewerten Sie nach Ihrer Antwort, wie stark Sie jede der folgenden Emotionen empfinden, "
          "als Wahrscheinlichkeit zwischen 0 und 1. Die Emotionen sind unabhängig und müssen sich "
          "nicht zu 1 addieren. Beenden Sie Ihre Antwort mit diesem Block und behalten Sie die "
          "englischen Bezeichnungen bei:";
      break;
  }
  return lead + "\n" + block_template(emotions);
}

std::string repair_instructions(const EmotionSet& emotions) {
  return "Your previous reply did not contain the required block. Reply again and end with "
         "exactly this block, one number between 0 and 1 per line:\n" +
         block_template(emotions);
}

// ---------------------------------------------------------------------------
// Provider config

std::string_view provider_kind_name(ProviderKind kind) {
  return kind == ProviderKind::Mock ? "mock" : "http";
}

std::optional<ProviderKind> parse_provider_kind(std::string_view name) {
  if (name == "mock") return ProviderKind::Mock;
  if (name == "http") return ProviderKind::HttpChat;
  return std::nullopt;
}

void ProviderConfig::validate() const {
  if (parallelism < 1) throw Error(ErrorCode::ConfigError, "parallelism must be >= 1");
  if (max_retries < 0) throw Error(ErrorCode::ConfigError, "max_retries must be >= 0");
  if (kind == ProviderKind::HttpChat && endpoint.empty()) {
    throw Error(ErrorCode::ConfigError, "http provider needs an endpoint");
  }
}

nlohmann::ordered_json ProviderConfig::to_json() const {
  nlohmann::ordered_json out;
  out["kind"] = provider_kind_name(kind);
  out["endpoint"] = kind == ProviderKind::HttpChat ? endpoint : "";
  out["model"] = model_name;
  if (temperature) {
    out["temperature"] = *temperature;
  } else {
    out["temperature"] = "provider-default";
  }
  out["max_retries"] = max_retries;
  out["parallelism"] = parallelism;
  return out;
}

ProviderConfig provider_defaults() {
  ProviderConfig cfg;
  if (const char* env = std::getenv(kEndpointEnv); env && *env) cfg.endpoint = env;
  return cfg;
}

ProviderConfig provider_config_from_json(const json& obj, const std::string& where,
                                         ProviderConfig base) {
  if (!obj.is_object()) json_util::fail(where, "expected an object");
  if (obj.contains("api_key")) {
    json_util::fail(where, "api_key is not accepted in files; use the environment");
  }
  if (obj.contains("kind")) {
    const auto name = json_util::string_field(obj, "kind", where);
    const auto kind = parse_provider_kind(name);
    if (!kind) json_util::fail(where + ".kind", fmt::format("unknown provider '{}'", name));
    base.kind = *kind;
  }
  if (obj.contains("endpoint")) base.endpoint = json_util::string_field(obj, "endpoint", where);
  if (obj.contains("model")) base.model_name = json_util::string_field(obj, "model", where);
  if (obj.contains("temperature")) {
    const auto& t = obj.at("temperature");
    if (t.is_null()) {
      base.temperature.reset();
    } else {
      base.temperature = json_util::number_field(obj, "temperature", where);
    }
  }
  if (obj.contains("max_retries")) {
    base.max_retries = static_cast<int>(json_util::integer_field(obj, "max_retries", where));
  }
  if (obj.contains("parallelism")) {
    base.parallelism = static_cast<int>(json_util::integer_field(obj, "parallelism", where));
  }
  if (obj.contains("backoff_ms")) {
    base.backoff_base = std::chrono::milliseconds(json_util::integer_field(obj, "backoff_ms", where));
  }
  if (obj.contains("timeout_seconds")) {
    base.timeout = std::chrono::seconds(json_util::integer_field(obj, "timeout_seconds", where));
  }
  return base;
}

// ---------------------------------------------------------------------------
// HTTP provider

namespace {

std::string redact(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  std::size_t pos = 0;
  while ((pos = text.find(secret, pos)) != std::string::npos) {
    text.replace(pos, secret.size(), "***");
    pos += 3;
  }
  return text;
}

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

HttpChatProvider::HttpChatProvider(ProviderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::string& url = cfg_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, fmt::format("endpoint '{}' has no scheme", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = path_start == std::string::npos ? url : url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string HttpChatProvider::complete(const ChatRequest& request) {
  json body = {{"model", cfg_.model_name},
               {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})}};
  if (cfg_.temperature) body["temperature"] = *cfg_.temperature;
  if (request.max_tokens) body["max_tokens"] = *request.max_tokens;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  ErrorCode last_code = ErrorCode::TransportError;
  std::string last_detail;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(cfg_.backoff_base * (1LL << std::min(attempt - 1, 16)));
    }
    httplib::Client client(base_);
    client.set_connection_timeout(cfg_.timeout);
    client.set_read_timeout(cfg_.timeout);
    client.set_write_timeout(cfg_.timeout);
    auto res = client.Post(path_, headers, payload, "application/json");

    if (!res) {
      last_code = ErrorCode::TransportError;
      last_detail = fmt::format("{}: {}", base_, httplib::to_string(res.error()));
      continue;
    }
    const int status = res->status;
    if (status == 401 || status == 403) {
      throw Error(ErrorCode::AuthError, fmt::format("provider rejected credentials ({})", status));
    }
    if (status == 429) {
      last_code = ErrorCode::RateLimited;
      last_detail = "provider kept returning 429";
      continue;
    }
    if (status >= 500) {
      last_code = ErrorCode::ProviderError;
      last_detail = fmt::format("status {}: {}", status, redact(excerpt(res->body), cfg_.api_key));
      continue;
    }
    if (status != 200) {
      throw Error(ErrorCode::ProviderError,
                  fmt::format("status {}: {}", status, redact(excerpt(res->body), cfg_.api_key)));
    }
    try {
      const json reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::ProviderError,
                  fmt::format("status 200 with unexpected body: {}",
                              redact(excerpt(res->body), cfg_.api_key)));
    }
  }
  throw Error(last_code, last_detail);
}

// ---------------------------------------------------------------------------
// Mock provider

void EffectProfile::validate(const EmotionSet& emotions) const {
  if (baseline.size() != emotions.size() || red_tape_delta.size() != emotions.size()) {
    throw Error(ErrorCode::ConfigError, "effect profile does not cover the emotion set");
  }
  if (!(noise >= 0.0)) throw Error(ErrorCode::ConfigError, "noise must be >= 0");
}

MockSetup load_mock_setup(const std::filesystem::path& path) {
  const json doc = json_util::read_file(path);
  const std::string where = path.string();
  std::vector<std::string> labels;
  for (const auto& l : json_util::array_field(doc, "emotions", where)) {
    if (!l.is_string()) json_util::fail(where + ".emotions", "expected strings");
    labels.push_back(l.get<std::string>());
  }
  EmotionSet set(std::move(labels));
  EffectProfile effect;
  const json& base = json_util::field(doc, "baseline", where);
  const json& delta = doc.contains("red_tape_delta") ? doc.at("red_tape_delta") : json::object();
  for (const auto& label : set.labels()) {
    effect.baseline.push_back(json_util::number_field(base, label, where + ".baseline"));
    effect.red_tape_delta.push_back(
        delta.contains(label) ? json_util::number_field(delta, label, where + ".red_tape_delta")
                              : 0.0);
  }
  effect.noise = doc.contains("noise") ? json_util::number_field(doc, "noise", where) : 0.0;
  effect.validate(set);
  return {std::move(set), std::move(effect)};
}

EmotionVector mock_react(std::string_view agent_id, Condition condition,
                         const EffectProfile& effect, std::uint64_t seed) {
  Rng rng(derive_seed(hash_string(agent_id, seed), condition == Condition::RedTape ? 1 : 0));
  EmotionVector v;
  v.scores.resize(effect.baseline.size());
  for (std::size_t i = 0; i < v.scores.size(); ++i) {
    double x = effect.baseline[i];
    if (condition == Condition::RedTape) x += effect.red_tape_delta.at(i);
    const double z = rng.normal(0.0, 1.0);
    if (effect.noise > 0.0) x += effect.noise * z;
    v.scores[i] = std::clamp(x, 0.0, 1.0);
  }
  return v;
}

EmotionVector mock_react(const Persona& persona, Condition condition,
                         const EffectProfile& effect, std::uint64_t seed) {
  return mock_react(persona.id, condition, effect, seed);
}

MockChatProvider::MockChatProvider(EmotionSet emotions, EffectProfile effect, std::uint64_t seed)
    : emotions_(std::move(emotions)), effect_(std::move(effect)), seed_(seed) {
  effect_.validate(emotions_);
}

std::string MockChatProvider::complete(const ChatRequest& request) {
  if (request.max_tokens && *request.max_tokens <= 1) return "ok";
  const auto v = mock_react(request.agent_id, request.condition, effect_,
                            derive_seed(seed_, request.seed));
  return "Simulated reaction.\n\n" + format_emotion_block(emotions_, v);
}

std::unique_ptr<ChatProvider> make_provider(const ProviderConfig& cfg, const MockSetup& mock) {
  cfg.validate();
  if (cfg.kind == ProviderKind::Mock) {
    return std::make_unique<MockChatProvider>(mock.emotions, mock.effect);
  }
  return std::make_unique<HttpChatProvider>(cfg);
}

void probe_key(const ProviderConfig& cfg) {
  if (cfg.api_key.empty()) throw Error(ErrorCode::InvalidKey, "API key is empty");
  if (cfg.kind == ProviderKind::Mock) {
    if (cfg.api_key.rfind("invalid", 0) == 0) {
      throw Error(ErrorCode::InvalidKey, "API key was rejected by the provider");
    }
    return;
  }
  HttpChatProvider provider(cfg);
  ChatRequest req;
  req.prompt = "ping";
  req.max_tokens = 1;
  try {
    provider.complete(req);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::AuthError) {
      throw Error(ErrorCode::InvalidKey, "API key was rejected by the provider");
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// Bounded client

Gateway::Gateway(std::shared_ptr<ChatProvider> provider, EmotionSet emotions, int parallelism)
    : provider_(std::move(provider)),
      emotions_(std::move(emotions)),
      parallelism_(std::clamp(parallelism, 1, 1024)),
      slots_(parallelism_) {
  if (!provider_) throw Error(ErrorCode::ConfigError, "gateway needs a provider");
}

std::string Gateway::call(const ChatRequest& request) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return provider_->complete(request);
}

Reaction Gateway::react(const ChatRequest& request) {
  Reaction out;
  std::string raw = call(request);
  try {
    auto parsed = parse_emotion_vector(raw, emotions_);
    out.vector = std::move(parsed.vector);
    out.warnings = std::move(parsed.warnings);
    return out;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::MalformedOutput) throw;
  }
  ChatRequest repair = request;
  repair.prompt = request.prompt + "\n\n" + repair_instructions(emotions_);
  raw = call(repair);
  auto parsed = parse_emotion_vector(raw, emotions_);
  out.vector = std::move(parsed.vector);
  out.warnings = std::move(parsed.warnings);
  out.attempts = 2;
  return out;
}

}  // namespace ramo
