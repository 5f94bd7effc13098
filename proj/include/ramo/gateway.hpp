#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ramo/persona.hpp"
#include "ramo/region.hpp"

namespace ramo {

// Ordered, unique emotion labels. The order defines vector axes and the
// top-k tie-break.
class EmotionSet {
 public:
  // Throws ConfigError when empty or when a label repeats.
  explicit EmotionSet(std::vector<std::string> labels);

  // anger, contempt, disgust, fear, joy, sadness, surprise, frustration, confusion
  static EmotionSet default_set();

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& operator[](std::size_t i) const { return labels_[i]; }
  std::optional<std::size_t> index_of(std::string_view label) const;

  bool operator==(const EmotionSet&) const = default;

 private:
  std::vector<std::string> labels_;
};

// Scores aligned with an EmotionSet; each in [0, 1], no sum constraint.
struct EmotionVector {
  std::vector<double> scores;

  bool operator==(const EmotionVector&) const = default;
};

nlohmann::ordered_json emotion_vector_to_json(const EmotionSet& set, const EmotionVector& v);
// Keys must match the set exactly. Throws ParseError otherwise.
EmotionVector emotion_vector_from_json(const EmotionSet& set, const nlohmann::json& obj,
                                       std::string_view where);

struct ParsedReply {
  EmotionVector vector;
  std::vector<std::string> warnings;  // e.g. clamped scores
};

// Reads the EMOTIONS ... END block from a model reply. Either returns a
// complete vector or throws MalformedOutput / MissingEmotion / NonNumericScore.
ParsedReply parse_emotion_vector(std::string_view raw, const EmotionSet& emotions);

// Canonical reply block; the mock provider answers in this format.
std::string format_emotion_block(const EmotionSet& emotions, const EmotionVector& v);

// Output-format instruction appended to every simulation prompt.
std::string reply_instructions(const EmotionSet& emotions, Language lang);
std::string repair_instructions(const EmotionSet& emotions);

enum class ProviderKind { HttpChat, Mock };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::Mock;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model_name = "gpt-4o";
  std::string api_key;  // never serialized
  std::optional<double> temperature;  // unset: provider default
  int max_retries = 3;
  int parallelism = 4;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::seconds timeout{60};

  void validate() const;
  // Persistable echo; omits api_key.
  nlohmann::ordered_json to_json() const;
};

std::string_view provider_kind_name(ProviderKind kind);
std::optional<ProviderKind> parse_provider_kind(std::string_view name);

// Environment variable naming the default chat-completions endpoint.
inline constexpr const char* kEndpointEnv = "RAMO_PROVIDER_ENDPOINT";

// Built-in defaults with the endpoint taken from kEndpointEnv when set.
ProviderConfig provider_defaults();

// Overlays the fields present in `obj` (kind, endpoint, model, temperature,
// max_retries, parallelism, backoff_ms, timeout_seconds) onto `base`. A key
// is never read from configuration files. Throws ParseError.
ProviderConfig provider_config_from_json(const nlohmann::json& obj, const std::string& where,
                                         ProviderConfig base);

// Routing metadata travels with the prompt. HTTP providers send only the
// prompt; the mock uses agent/condition/seed to stay deterministic.
struct ChatRequest {
  std::string prompt;
  std::string agent_id;
  Condition condition = Condition::Control;
  std::uint64_t seed = 0;
  std::optional<int> max_tokens;
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

// De-facto chat-completions wire protocol over HTTP(S).
class HttpChatProvider : public ChatProvider {
 public:
  explicit HttpChatProvider(ProviderConfig cfg);
  std::string complete(const ChatRequest& request) override;

 private:
  ProviderConfig cfg_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

// Per-emotion baseline plus red-tape delta, with Gaussian noise of
// standard deviation `noise`.
struct EffectProfile {
  std::vector<double> baseline;
  std::vector<double> red_tape_delta;
  double noise = 0.0;

  void validate(const EmotionSet& emotions) const;
};

struct MockSetup {
  EmotionSet emotions;
  EffectProfile effect;
};

// {"emotions": [...], "baseline": {label: x}, "red_tape_delta": {label: x}, "noise": s}
MockSetup load_mock_setup(const std::filesystem::path& path);

EmotionVector mock_react(const Persona& persona, Condition condition,
                         const EffectProfile& effect, std::uint64_t seed);
EmotionVector mock_react(std::string_view agent_id, Condition condition,
                         const EffectProfile& effect, std::uint64_t seed);

class MockChatProvider : public ChatProvider {
 public:
  MockChatProvider(EmotionSet emotions, EffectProfile effect, std::uint64_t seed = 0);
  std::string complete(const ChatRequest& request) override;

 private:
  EmotionSet emotions_;
  EffectProfile effect_;
  std::uint64_t seed_;
};

std::unique_ptr<ChatProvider> make_provider(const ProviderConfig& cfg, const MockSetup& mock);

// One-token request to check the key. Throws InvalidKey on rejection. The
// mock rejects empty keys and keys starting with "invalid".
void probe_key(const ProviderConfig& cfg);

struct Reaction {
  EmotionVector vector;
  std::vector<std::string> warnings;
  int attempts = 1;
};

// Shareable client: caps in-flight provider calls at `parallelism` and
// re-prompts once when a reply has no parsable block.
class Gateway {
 public:
  Gateway(std::shared_ptr<ChatProvider> provider, EmotionSet emotions, int parallelism);

  Reaction react(const ChatRequest& request);

  const EmotionSet& emotions() const { return emotions_; }
  int parallelism() const { return parallelism_; }

 private:
  std::string call(const ChatRequest& request);

  std::shared_ptr<ChatProvider> provider_;
  EmotionSet emotions_;
  int parallelism_;
  std::counting_semaphore<1024> slots_;
};

}  // namespace ramo
