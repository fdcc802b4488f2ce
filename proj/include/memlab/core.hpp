#pragma once

// Domain types shared by every module, the manifest format and the
// append-only session log.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "memlab/error.hpp"

namespace memlab {

using json = nlohmann::json;

enum class TaskType { Filler, Vigilance, TargetShort, TargetMedium, TargetLong };

inline constexpr std::array<TaskType, 5> kAllTaskTypes = {
    TaskType::Filler, TaskType::Vigilance, TaskType::TargetShort, TaskType::TargetMedium,
    TaskType::TargetLong};

constexpr std::string_view task_type_name(TaskType t) noexcept {
  switch (t) {
    case TaskType::Filler: return "Filler";
    case TaskType::Vigilance: return "Vigilance";
    case TaskType::TargetShort: return "TargetShort";
    case TaskType::TargetMedium: return "TargetMedium";
    case TaskType::TargetLong: return "TargetLong";
  }
  return "";
}

inline TaskType parse_task_type(std::string_view s) {
  for (TaskType t : kAllTaskTypes) {
    if (task_type_name(t) == s) return t;
  }
  fail(Errc::Validation, "unknown task type '" + std::string(s) + "'");
}

/// Fillers are presented once; everything else twice.
constexpr bool is_repeated(TaskType t) noexcept { return t != TaskType::Filler; }

constexpr bool is_target(TaskType t) noexcept {
  return t == TaskType::TargetShort || t == TaskType::TargetMedium || t == TaskType::TargetLong;
}

inline constexpr double kClipSeconds = 5.0;
inline constexpr double kClipSecondsTolerance = 0.05;

struct AudioClip {
  std::string id;
  std::string audio_path;
  double duration_s = kClipSeconds;
  TaskType task_type = TaskType::Filler;
  std::optional<std::string> source_location;
  std::optional<std::int64_t> source_views;

  bool operator==(const AudioClip&) const = default;
};

using TaskCounts = std::map<TaskType, std::size_t>;

struct Manifest {
  std::vector<AudioClip> clips;
  TaskCounts counts_by_task;
  /// Directory that relative audio paths resolve against. Not serialized.
  std::filesystem::path base_dir;

  const AudioClip* find(std::string_view id) const {
    for (const auto& c : clips) {
      if (c.id == id) return &c;
    }
    return nullptr;
  }

  std::filesystem::path resolve(const AudioClip& clip) const {
    std::filesystem::path p(clip.audio_path);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
};

inline TaskCounts count_by_task(const std::vector<AudioClip>& clips) {
  TaskCounts counts;
  for (TaskType t : kAllTaskTypes) counts[t] = 0;
  for (const auto& c : clips) ++counts[c.task_type];
  return counts;
}

inline void validate_clip(const AudioClip& c) {
  require(!c.id.empty(), Errc::Validation, "clip id must be non-empty");
  require(std::isfinite(c.duration_s) &&
              std::abs(c.duration_s - kClipSeconds) <= kClipSecondsTolerance + 1e-12,
          Errc::Validation,
          "clip '" + c.id + "' duration " + std::to_string(c.duration_s) + " s is not 5.0 +- 0.05 s");
  require(!c.source_views || *c.source_views >= 0, Errc::Validation,
          "clip '" + c.id + "' has negative source_views");
}

/// Validates clips and derives counts.
inline Manifest make_manifest(std::vector<AudioClip> clips, std::filesystem::path base_dir = {}) {
  std::set<std::string> seen;
  for (const auto& c : clips) {
    validate_clip(c);
    require(seen.insert(c.id).second, Errc::Validation, "duplicate clip id '" + c.id + "'");
  }
  Manifest m;
  m.counts_by_task = count_by_task(clips);
  m.clips = std::move(clips);
  m.base_dir = std::move(base_dir);
  return m;
}

inline json to_json(const AudioClip& c) {
  json j = {{"id", c.id},
            {"audio_path", c.audio_path},
            {"duration_s", c.duration_s},
            {"task_type", std::string(task_type_name(c.task_type))}};
  j["source_location"] = c.source_location ? json(*c.source_location) : json(nullptr);
  j["source_views"] = c.source_views ? json(*c.source_views) : json(nullptr);
  return j;
}

inline AudioClip clip_from_json(const json& j) {
  try {
    AudioClip c;
    c.id = j.at("id").get<std::string>();
    c.audio_path = j.at("audio_path").get<std::string>();
    c.duration_s = j.at("duration_s").get<double>();
    c.task_type = parse_task_type(j.at("task_type").get<std::string>());
    if (auto it = j.find("source_location"); it != j.end() && !it->is_null()) {
      c.source_location = it->get<std::string>();
    }
    if (auto it = j.find("source_views"); it != j.end() && !it->is_null()) {
      require(it->is_number_integer(), Errc::Validation, "source_views must be an integer");
      c.source_views = it->get<std::int64_t>();
    }
    return c;
  } catch (const json::exception& e) {
    fail(Errc::Parse, std::string("malformed clip entry: ") + e.what());
  }
}

inline std::string serialize_manifest(const Manifest& m) {
  json clips = json::array();
  for (const auto& c : m.clips) clips.push_back(to_json(c));
  return json{{"clips", clips}}.dump(2) + "\n";
}

inline Manifest parse_manifest(std::string_view text, std::filesystem::path base_dir = {}) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(Errc::Parse, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("clips") || !doc["clips"].is_array()) {
    fail(Errc::Parse, "manifest must be an object with a \"clips\" array");
  }
  std::vector<AudioClip> clips;
  clips.reserve(doc["clips"].size());
  for (const auto& j : doc["clips"]) clips.push_back(clip_from_json(j));
  return make_manifest(std::move(clips), std::move(base_dir));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::Io, "cannot write " + path.string());
  out << contents;
  require(static_cast<bool>(out), Errc::Io, "write failed for " + path.string());
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Session logs

struct ResponseRecord {
  std::size_t position = 0;
  std::string clip_id;
  bool answered_repeat = false;
  std::optional<std::int64_t> reaction_ms;
  std::size_t fatigue = 0;

  bool operator==(const ResponseRecord&) const = default;
};

struct SessionLog {
  std::string session_id;
  std::string annotator_id;
  std::uint64_t schedule_seed = 0;
  /// Length of the session's schedule when known; completion is derived from it.
  std::optional<std::size_t> n_trials;
  std::vector<ResponseRecord> responses;
  bool completed = false;

  bool operator==(const SessionLog&) const = default;

  const ResponseRecord* at_position(std::size_t position) const {
    // responses are sorted by position
    auto it = std::lower_bound(responses.begin(), responses.end(), position,
                               [](const ResponseRecord& r, std::size_t p) { return r.position < p; });
    return it != responses.end() && it->position == position ? &*it : nullptr;
  }
};

inline bool derive_completed(const SessionLog& log) {
  return log.n_trials && log.responses.size() == *log.n_trials;
}

inline void check_append(const SessionLog& log, const ResponseRecord& rec) {
  if (!log.responses.empty() && rec.position <= log.responses.back().position) {
    fail(Errc::Order, "response position " + std::to_string(rec.position) +
                          " is not greater than last position " +
                          std::to_string(log.responses.back().position));
  }
  require(!rec.reaction_ms || *rec.reaction_ms >= 0, Errc::Validation,
          "reaction_ms must be non-negative");
  if (log.n_trials) {
    require(rec.position < *log.n_trials, Errc::Order,
            "response position " + std::to_string(rec.position) + " beyond session length");
  }
}

/// In-memory append; see SessionLogFile for the durable variant.
inline SessionLog append_response(SessionLog log, ResponseRecord rec) {
  check_append(log, rec);
  log.responses.push_back(std::move(rec));
  log.completed = derive_completed(log);
  return log;
}

inline json to_json(const ResponseRecord& r) {
  json j = {{"position", r.position},
            {"clip_id", r.clip_id},
            {"answered_repeat", r.answered_repeat}};
  j["reaction_ms"] = r.reaction_ms ? json(*r.reaction_ms) : json(nullptr);
  j["fatigue"] = r.fatigue;
  return j;
}

inline ResponseRecord record_from_json(const json& j) {
  ResponseRecord r;
  r.position = j.at("position").get<std::size_t>();
  r.clip_id = j.at("clip_id").get<std::string>();
  r.answered_repeat = j.at("answered_repeat").get<bool>();
  if (auto it = j.find("reaction_ms"); it != j.end() && !it->is_null()) {
    r.reaction_ms = it->get<std::int64_t>();
  }
  r.fatigue = j.at("fatigue").get<std::size_t>();
  return r;
}

inline std::string log_header_line(const SessionLog& log) {
  json h = {{"session_id", log.session_id},
            {"annotator_id", log.annotator_id},
            {"schedule_seed", log.schedule_seed}};
  if (log.n_trials) h["n_trials"] = *log.n_trials;
  return h.dump() + "\n";
}

inline std::string log_record_line(const ResponseRecord& r) { return to_json(r).dump() + "\n"; }

inline std::string serialize_log(const SessionLog& log) {
  std::string out = log_header_line(log);
  for (const auto& r : log.responses) out += log_record_line(r);
  return out;
}

/// Parses a JSON-Lines session log. A final line without a trailing newline
/// that fails to parse is a torn write from a crash and is dropped.
inline SessionLog parse_log(std::string_view text, std::size_t* valid_bytes = nullptr) {
  SessionLog log;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::size_t good = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool terminated = nl != std::string_view::npos;
    const std::string_view line = text.substr(pos, (terminated ? nl : text.size()) - pos);
    const std::size_t next = terminated ? nl + 1 : text.size();
    if (line.empty()) {
      pos = next;
      good = pos;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      if (!terminated && line_no > 0) break;
      fail(Errc::Parse, "session log line " + std::to_string(line_no + 1) + ": " + e.what());
    }
    try {
      if (line_no == 0) {
        log.session_id = j.at("session_id").get<std::string>();
        log.annotator_id = j.at("annotator_id").get<std::string>();
        log.schedule_seed = j.at("schedule_seed").get<std::uint64_t>();
        if (j.contains("n_trials")) log.n_trials = j["n_trials"].get<std::size_t>();
      } else {
        ResponseRecord r = record_from_json(j);
        check_append(log, r);
        log.responses.push_back(std::move(r));
      }
    } catch (const json::exception& e) {
      fail(Errc::Parse, "session log line " + std::to_string(line_no + 1) + ": " + e.what());
    }
    ++line_no;
    pos = next;
    good = pos;
  }
  require(line_no > 0, Errc::Parse, "session log has no header line");
  log.completed = derive_completed(log);
  if (valid_bytes) *valid_bytes = good;
  return log;
}

inline SessionLog load_session_log(const std::filesystem::path& path) {
  return parse_log(read_file(path));
}

/// Single-writer durable session log: every append is flushed and fsync'd
/// before returning.
class SessionLogFile {
 public:
  static SessionLogFile create(const std::filesystem::path& path, SessionLog header) {
    require(!std::filesystem::exists(path), Errc::Io, path.string() + " already exists");
    header.responses.clear();
    header.completed = derive_completed(header);
    SessionLogFile f(path, std::move(header));
    f.write_all(log_header_line(f.log_));
    return f;
  }

  /// Reopens an existing log for appending; a torn final line is truncated.
  static SessionLogFile open(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    std::size_t valid = 0;
    SessionLog log = parse_log(text, &valid);
    if (valid < text.size()) std::filesystem::resize_file(path, valid);
    return SessionLogFile(path, std::move(log));
  }

  SessionLogFile(SessionLogFile&& o) noexcept
      : path_(std::move(o.path_)), log_(std::move(o.log_)), fd_(std::exchange(o.fd_, -1)) {}
  SessionLogFile& operator=(SessionLogFile&& o) noexcept {
    if (this != &o) {
      close();
      path_ = std::move(o.path_);
      log_ = std::move(o.log_);
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  SessionLogFile(const SessionLogFile&) = delete;
  SessionLogFile& operator=(const SessionLogFile&) = delete;
  ~SessionLogFile() { close(); }

  void append(const ResponseRecord& rec) {
    check_append(log_, rec);
    write_all(log_record_line(rec));
    log_.responses.push_back(rec);
    log_.completed = derive_completed(log_);
  }

  const SessionLog& log() const noexcept { return log_; }
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  SessionLogFile(std::filesystem::path path, SessionLog log)
      : path_(std::move(path)), log_(std::move(log)) {
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    require(fd_ >= 0, Errc::Io, "cannot open session log " + path_.string());
  }

  void write_all(std::string_view data) {
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail(Errc::Io, "write to " + path_.string() + " failed");
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    require(::fsync(fd_) == 0, Errc::Io, "fsync of " + path_.string() + " failed");
  }

  void close() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  std::filesystem::path path_;
  SessionLog log_;
  int fd_ = -1;
};

}  // namespace memlab
