#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ramo/gateway.hpp"
#include "ramo/region.hpp"
#include "ramo/scenario.hpp"

struct sqlite3;

namespace ramo {

// Milliseconds since the Unix epoch.
using Millis = std::int64_t;
using Clock = std::function<Millis()>;
Millis system_clock_millis();

std::string_view procedure_source_name(ProcedureSource s);
std::optional<ProcedureSource> parse_procedure_source(std::string_view name);

// 2026-10-16T08:30:00.125Z
std::string format_timestamp(Millis t);
std::optional<Millis> parse_timestamp(std::string_view text);

struct SessionInfo {
  std::string id;  // internal; never the service token
  Region region = Region::HongKongSAR;
  Language ui_language = Language::English;
  Millis created_at = 0;
  Millis last_seen = 0;
  std::size_t entries = 0;
};

struct SessionEntry {
  std::string session_id;
  std::string ordinal;  // T1, T2, ...; assigned by append_entry
  Millis timestamp = 0;
  std::string policy_id;
  ProcedureSource policy_source = ProcedureSource::Predefined;
  std::optional<int> red_tape_count;  // present iff Predefined
  std::vector<std::size_t> selected_red_tape;
  std::vector<std::string> emotion_labels;
  EmotionVector emotions;
  std::optional<int> slider;  // 0..100

  bool operator==(const SessionEntry&) const = default;
};

struct FeedbackRecord {
  std::string session_id;
  std::string ordinal;
  Millis timestamp = 0;
  std::string policy_id;
  ProcedureSource policy_source = ProcedureSource::Predefined;
  std::optional<int> red_tape_count;
  std::vector<std::size_t> selected_red_tape;
  int slider = 0;

  bool operator==(const FeedbackRecord&) const = default;
};

// Inclusive bounds; absent means open.
struct TimeRange {
  std::optional<Millis> from;
  std::optional<Millis> to;

  bool contains(Millis t) const;
};

struct StoreOptions {
  std::chrono::milliseconds idle_timeout = std::chrono::minutes(60);
  Clock clock;  // defaults to the system clock
};

// Single-file embedded store. All calls are serialized on one connection.
class Store {
 public:
  explicit Store(const std::filesystem::path& path, StoreOptions options = {});
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  std::string create_session(Region region, Language ui_language);
  // Absent when unknown or idle past the timeout. Does not refresh the session.
  std::optional<SessionInfo> session(const std::string& id);
  // Refreshes the idle timer. Throws UnknownSession.
  void touch(const std::string& id);

  // Assigns the next ordinal and stores the entry; a slider value also
  // produces a feedback record. Throws UnknownSession or ValidationError.
  std::string append_entry(const std::string& session_id, SessionEntry entry);

  // Entries in ordinal order, optionally only those of one base policy.
  std::vector<SessionEntry> history(const std::string& session_id,
                                    const std::optional<std::string>& policy_id = std::nullopt);

  std::vector<FeedbackRecord> feedback(const TimeRange& range = {});

  // Marks idle sessions expired; returns how many.
  std::size_t expire_idle();

 private:
  Millis now() const;
  void require_live(const std::string& id, std::int64_t* row_id);

  sqlite3* db_ = nullptr;
  StoreOptions options_;
  std::mutex mu_;
};

// RFC 4180 CSV, UTF-8, header row always present. Columns:
// session,ordinal,timestamp,policy_id,policy_source,red_tape_count,selected_red_tape,slider
// selected_red_tape is a ';'-separated list of 1-based item numbers.
std::string feedback_to_csv(const std::vector<FeedbackRecord>& records);
std::vector<FeedbackRecord> feedback_from_csv(std::string_view text, std::string_view origin);

// Throws IoError.
std::size_t export_feedback(Store& store, const std::filesystem::path& path,
                            const TimeRange& range = {});
std::vector<FeedbackRecord> import_feedback(const std::filesystem::path& path);

}  // namespace ramo
