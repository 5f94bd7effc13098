#include "ramo/store.hpp"

#include <charconv>
#include <cstdio>
#include <ctime>

#include <fmt/format.h>
#include <sqlite3.h>

#include "ramo/error.hpp"
#include "ramo/json_util.hpp"

namespace ramo {

using json_util::json;

Millis system_clock_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string_view procedure_source_name(ProcedureSource s) {
  return s == ProcedureSource::Predefined ? "predefined" : "custom";
}

std::optional<ProcedureSource> parse_procedure_source(std::string_view name) {
  if (name == "predefined") return ProcedureSource::Predefined;
  if (name == "custom") return ProcedureSource::Custom;
  return std::nullopt;
}

std::string format_timestamp(Millis t) {
  Millis secs = t / 1000;
  Millis ms = t % 1000;
  if (ms < 0) {
    ms += 1000;
    secs -= 1;
  }
  const std::time_t tt = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

std::optional<Millis> parse_timestamp(std::string_view text) {
  if (text.size() != 24) return std::nullopt;
  std::tm tm{};
  int ms = 0;
  char tail = 0;
  const std::string s(text);
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3d%c", &tm.tm_year, &tm.tm_mon, &tm.tm_mday,
                  &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &ms, &tail) != 8 ||
      tail != 'Z') {
    return std::nullopt;
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t secs = timegm(&tm);
  return static_cast<Millis>(secs) * 1000 + ms;
}

bool TimeRange::contains(Millis t) const {
  return (!from || t >= *from) && (!to || t <= *to);
}

// ---------------------------------------------------------------------------
// SQLite plumbing

namespace {

[[noreturn]] void db_fail(sqlite3* db, std::string_view what) {
  throw Error(ErrorCode::IoError, fmt::format("{}: {}", what, db ? sqlite3_errmsg(db) : "no handle"));
}

class Stmt {
 public:
  Stmt(sqlite3* db, std::string_view sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql.data(), static_cast<int>(sql.size()), &stmt_, nullptr) !=
        SQLITE_OK) {
      db_fail(db, "prepare");
    }
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Stmt& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, std::string_view v) { return bind(i, std::string(v)); }
  Stmt& bind(int i, const std::optional<int>& v) {
    check(v ? sqlite3_bind_int64(stmt_, i, *v) : sqlite3_bind_null(stmt_, i));
    return *this;
  }

  // True while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    db_fail(db_, "step");
  }
  void run() {
    while (step()) {
    }
  }

  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
  std::string text(int col) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col))) : "";
  }
  std::optional<int> optional_int(int col) const {
    if (sqlite3_column_type(stmt_, col) == SQLITE_NULL) return std::nullopt;
    return static_cast<int>(sqlite3_column_int64(stmt_, col));
  }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) db_fail(db_, "bind");
  }
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    const std::string msg = err ? err : "unknown";
    sqlite3_free(err);
    throw Error(ErrorCode::IoError, fmt::format("store: {}", msg));
  }
}

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS sessions (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  region TEXT NOT NULL,
  ui_language TEXT NOT NULL,
  created_at INTEGER NOT NULL,
  last_seen INTEGER NOT NULL,
  entry_count INTEGER NOT NULL DEFAULT 0,
  expired INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS entries (
  session_id INTEGER NOT NULL REFERENCES sessions(id),
  seq INTEGER NOT NULL,
  created_at INTEGER NOT NULL,
  policy_id TEXT NOT NULL,
  policy_source TEXT NOT NULL,
  red_tape_count INTEGER,
  selected TEXT NOT NULL,
  emotions TEXT NOT NULL,
  slider INTEGER,
  PRIMARY KEY (session_id, seq)
);
CREATE TABLE IF NOT EXISTS feedback (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  session_id INTEGER NOT NULL,
  seq INTEGER NOT NULL,
  created_at INTEGER NOT NULL,
  policy_id TEXT NOT NULL,
  policy_source TEXT NOT NULL,
  red_tape_count INTEGER,
  selected TEXT NOT NULL,
  slider INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS feedback_time ON feedback(created_at);
)sql";

std::string session_key(std::int64_t row) { return fmt::format("S{}", row); }

std::optional<std::int64_t> parse_session_key(const std::string& id) {
  if (id.size() < 2 || id[0] != 'S') return std::nullopt;
  std::int64_t v = 0;
  const auto* end = id.data() + id.size();
  auto [p, ec] = std::from_chars(id.data() + 1, end, v);
  if (ec != std::errc{} || p != end || v <= 0) return std::nullopt;
  return v;
}

std::string selected_json(const std::vector<std::size_t>& items) { return json(items).dump(); }

std::vector<std::size_t> selected_from(const std::string& text) {
  return json::parse(text).get<std::vector<std::size_t>>();
}

}  // namespace

// ---------------------------------------------------------------------------

Store::Store(const std::filesystem::path& path, StoreOptions options)
    : options_(std::move(options)) {
  if (!options_.clock) options_.clock = system_clock_millis;
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE, nullptr) !=
      SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "cannot open";
    sqlite3_close(db_);
    db_ = nullptr;
    throw Error(ErrorCode::IoError, fmt::format("{}: {}", path.string(), msg));
  }
  exec(db_, "PRAGMA journal_mode=WAL; PRAGMA synchronous=FULL; PRAGMA foreign_keys=ON;");
  exec(db_, kSchema);
}

Store::~Store() { sqlite3_close(db_); }

Millis Store::now() const { return options_.clock(); }

void Store::require_live(const std::string& id, std::int64_t* row_id) {
  const auto row = parse_session_key(id);
  if (row) {
    Stmt q(db_, "SELECT last_seen, expired FROM sessions WHERE id = ?");
    q.bind(1, *row);
    if (q.step() && q.integer(1) == 0 && now() - q.integer(0) <= options_.idle_timeout.count()) {
      if (row_id) *row_id = *row;
      return;
    }
  }
  throw Error(ErrorCode::UnknownSession, "unknown or expired session");
}

std::string Store::create_session(Region region, Language ui_language) {
  std::lock_guard lock(mu_);
  const Millis t = now();
  Stmt q(db_, "INSERT INTO sessions (region, ui_language, created_at, last_seen) VALUES (?, ?, ?, ?)");
  q.bind(1, region_code(region)).bind(2, language_tag(ui_language)).bind(3, t).bind(4, t);
  q.run();
  return session_key(sqlite3_last_insert_rowid(db_));
}

std::optional<SessionInfo> Store::session(const std::string& id) {
  std::lock_guard lock(mu_);
  std::int64_t row = 0;
  try {
    require_live(id, &row);
  } catch (const Error&) {
    return std::nullopt;
  }
  Stmt q(db_,
         "SELECT region, ui_language, created_at, last_seen, entry_count FROM sessions WHERE id = ?");
  q.bind(1, row);
  if (!q.step()) return std::nullopt;
  SessionInfo info;
  info.id = id;
  info.region = parse_region(q.text(0)).value_or(Region::HongKongSAR);
  info.ui_language = parse_language(q.text(1)).value_or(Language::English);
  info.created_at = q.integer(2);
  info.last_seen = q.integer(3);
  info.entries = static_cast<std::size_t>(q.integer(4));
  return info;
}

void Store::touch(const std::string& id) {
  std::lock_guard lock(mu_);
  std::int64_t row = 0;
  require_live(id, &row);
  Stmt q(db_, "UPDATE sessions SET last_seen = ? WHERE id = ?");
  q.bind(1, now()).bind(2, row);
  q.run();
}

std::string Store::append_entry(const std::string& session_id, SessionEntry entry) {
  if ((entry.policy_source == ProcedureSource::Predefined) != entry.red_tape_count.has_value()) {
    throw Error(ErrorCode::ValidationError,
                "red_tape_count must be present exactly for predefined policies");
  }
  if (entry.red_tape_count && *entry.red_tape_count < 0) {
    throw Error(ErrorCode::ValidationError, "red_tape_count must be non-negative");
  }
  if (entry.slider && (*entry.slider < 0 || *entry.slider > 100)) {
    throw Error(ErrorCode::ValidationError, "slider must be in [0, 100]");
  }
  if (entry.emotion_labels.size() != entry.emotions.scores.size()) {
    throw Error(ErrorCode::ValidationError, "emotion labels and scores differ in length");
  }

  std::lock_guard lock(mu_);
  std::int64_t row = 0;
  require_live(session_id, &row);
  const Millis t = now();

  exec(db_, "BEGIN IMMEDIATE");
  try {
    Stmt count(db_, "SELECT entry_count FROM sessions WHERE id = ?");
    count.bind(1, row);
    count.step();
    const std::int64_t seq = count.integer(0) + 1;

    json emotions;
    emotions["labels"] = entry.emotion_labels;
    emotions["scores"] = entry.emotions.scores;
    const std::string selected = selected_json(entry.selected_red_tape);
    const std::string source(procedure_source_name(entry.policy_source));

    Stmt ins(db_,
             "INSERT INTO entries (session_id, seq, created_at, policy_id, policy_source, "
             "red_tape_count, selected, emotions, slider) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)");
    ins.bind(1, row).bind(2, seq).bind(3, t).bind(4, entry.policy_id).bind(5, source);
    ins.bind(6, entry.red_tape_count).bind(7, selected).bind(8, emotions.dump()).bind(9, entry.slider);
    ins.run();

    if (entry.slider) {
      Stmt fb(db_,
              "INSERT INTO feedback (session_id, seq, created_at, policy_id, policy_source, "
              "red_tape_count, selected, slider) VALUES (?, ?, ?, ?, ?, ?, ?, ?)");
      fb.bind(1, row).bind(2, seq).bind(3, t).bind(4, entry.policy_id).bind(5, source);
      fb.bind(6, entry.red_tape_count).bind(7, selected).bind(8, static_cast<std::int64_t>(*entry.slider));
      fb.run();
    }

    Stmt upd(db_, "UPDATE sessions SET entry_count = ?, last_seen = ? WHERE id = ?");
    upd.bind(1, seq).bind(2, t).bind(3, row);
    upd.run();
    exec(db_, "COMMIT");
    return fmt::format("T{}", seq);
  } catch (...) {
    sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    throw;
  }
}

std::vector<SessionEntry> Store::history(const std::string& session_id,
                                         const std::optional<std::string>& policy_id) {
  std::lock_guard lock(mu_);
  std::int64_t row = 0;
  require_live(session_id, &row);
  Stmt q(db_,
         "SELECT seq, created_at, policy_id, policy_source, red_tape_count, selected, emotions, "
         "slider FROM entries WHERE session_id = ? ORDER BY seq");
  q.bind(1, row);
  std::vector<SessionEntry> out;
  while (q.step()) {
    SessionEntry e;
    e.policy_id = q.text(2);
    if (policy_id && e.policy_id != *policy_id) continue;
    e.session_id = session_id;
    e.ordinal = fmt::format("T{}", q.integer(0));
    e.timestamp = q.integer(1);
    e.policy_source = parse_procedure_source(q.text(3)).value_or(ProcedureSource::Custom);
    e.red_tape_count = q.optional_int(4);
    e.selected_red_tape = selected_from(q.text(5));
    const json emotions = json::parse(q.text(6));
    e.emotion_labels = emotions.at("labels").get<std::vector<std::string>>();
    e.emotions.scores = emotions.at("scores").get<std::vector<double>>();
    e.slider = q.optional_int(7);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<FeedbackRecord> Store::feedback(const TimeRange& range) {
  std::lock_guard lock(mu_);
  Stmt q(db_,
         "SELECT session_id, seq, created_at, policy_id, policy_source, red_tape_count, selected, "
         "slider FROM feedback ORDER BY created_at, id");
  std::vector<FeedbackRecord> out;
  while (q.step()) {
    FeedbackRecord r;
    r.timestamp = q.integer(2);
    if (!range.contains(r.timestamp)) continue;
    r.session_id = session_key(q.integer(0));
    r.ordinal = fmt::format("T{}", q.integer(1));
    r.policy_id = q.text(3);
    r.policy_source = parse_procedure_source(q.text(4)).value_or(ProcedureSource::Custom);
    r.red_tape_count = q.optional_int(5);
    r.selected_red_tape = selected_from(q.text(6));
    r.slider = static_cast<int>(q.integer(7));
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t Store::expire_idle() {
  std::lock_guard lock(mu_);
  Stmt q(db_, "UPDATE sessions SET expired = 1 WHERE expired = 0 AND last_seen < ?");
  q.bind(1, now() - options_.idle_timeout.count());
  q.run();
  return static_cast<std::size_t>(sqlite3_changes(db_));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr std::string_view kCsvHeader =
    "session,ordinal,timestamp,policy_id,policy_source,red_tape_count,selected_red_tape,slider";

std::string csv_field(std::string_view v) {
  if (v.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(v);
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text, std::string_view origin) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, in_quotes = false, any = false;
  std::size_t line = 1;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    quoted = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    any = true;
    if (c == '"') {
      if (!field.empty() || quoted) {
        throw Error(ErrorCode::ParseError, fmt::format("{}:{}: stray quote", origin, line));
      }
      in_quotes = quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      // CRLF handled at '\n'
    } else if (c == '\n') {
      end_row();
      ++line;
    } else {
      field += c;
    }
  }
  if (in_quotes) throw Error(ErrorCode::ParseError, fmt::format("{}: unterminated quote", origin));
  if (any) end_row();
  return rows;
}

std::optional<int> optional_int_field(const std::string& s, std::string_view where) {
  if (s.empty()) return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: expected an integer, got '{}'", where, s));
  }
  return v;
}

}  // namespace

std::string feedback_to_csv(const std::vector<FeedbackRecord>& records) {
  std::string out(kCsvHeader);
  out += "\r\n";
  for (const auto& r : records) {
    std::string selected;
    for (std::size_t k = 0; k < r.selected_red_tape.size(); ++k) {
      if (k) selected += ';';
      selected += std::to_string(r.selected_red_tape[k]);
    }
    out += fmt::format("{},{},{},{},{},{},{},{}\r\n", csv_field(r.session_id), csv_field(r.ordinal),
                       format_timestamp(r.timestamp), csv_field(r.policy_id),
                       procedure_source_name(r.policy_source),
                       r.red_tape_count ? std::to_string(*r.red_tape_count) : std::string(),
                       selected, r.slider);
  }
  return out;
}

std::vector<FeedbackRecord> feedback_from_csv(std::string_view text, std::string_view origin) {
  const auto rows = parse_csv(text, origin);
  if (rows.empty()) throw Error(ErrorCode::ParseError, fmt::format("{}: missing header", origin));
  std::string header;
  for (std::size_t k = 0; k < rows[0].size(); ++k) header += (k ? "," : "") + rows[0][k];
  if (header != kCsvHeader) {
    throw Error(ErrorCode::ParseError, fmt::format("{}: unexpected header '{}'", origin, header));
  }
  std::vector<FeedbackRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    const std::string where = fmt::format("{}: row {}", origin, i + 1);
    if (f.size() != 8) {
      throw Error(ErrorCode::ParseError, fmt::format("{}: expected 8 columns, got {}", where, f.size()));
    }
    FeedbackRecord r;
    r.session_id = f[0];
    r.ordinal = f[1];
    const auto t = parse_timestamp(f[2]);
    if (!t) throw Error(ErrorCode::ParseError, fmt::format("{}: bad timestamp '{}'", where, f[2]));
    r.timestamp = *t;
    r.policy_id = f[3];
    const auto src = parse_procedure_source(f[4]);
    if (!src) throw Error(ErrorCode::ParseError, fmt::format("{}: bad policy_source '{}'", where, f[4]));
    r.policy_source = *src;
    r.red_tape_count = optional_int_field(f[5], where);
    std::string_view sel = f[6];
    while (!sel.empty()) {
      const auto cut = sel.find(';');
      const std::string item(sel.substr(0, cut));
      r.selected_red_tape.push_back(static_cast<std::size_t>(*optional_int_field(item, where)));
      if (cut == std::string_view::npos) break;
      sel.remove_prefix(cut + 1);
    }
    const auto slider = optional_int_field(f[7], where);
    if (!slider || *slider < 0 || *slider > 100) {
      throw Error(ErrorCode::ParseError, fmt::format("{}: slider must be 0..100", where));
    }
    r.slider = *slider;
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t export_feedback(Store& store, const std::filesystem::path& path, const TimeRange& range) {
  const auto records = store.feedback(range);
  try {
    json_util::write_text(path, feedback_to_csv(records));
  } catch (const Error& e) {
    throw Error(ErrorCode::IoError, e.detail());
  }
  return records.size();
}

std::vector<FeedbackRecord> import_feedback(const std::filesystem::path& path) {
  std::string text;
  try {
    text = json_util::read_text(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::IoError, e.detail());
  }
  return feedback_from_csv(text, path.string());
}

}  // namespace ramo
