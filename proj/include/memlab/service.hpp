#pragma once

// HTTP experiment service: hands out seeded schedules, gates breaks, and
// durably logs answers before acknowledging them.
//
// Layout under data_dir:
//   annotators.jsonl            one {"annotator_id","session_id","seed"} per session
//   sessions/<id>.schedule.json
//   sessions/<id>.jsonl         the session log
//   sessions/<id>.result.json   vigilance accuracy, written when the session ends

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

// Eigen must precede httplib, whose resolver headers define a `_res` macro.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "memlab/core.hpp"
#include "memlab/error.hpp"
#include "memlab/scheduler.hpp"
#include "memlab/scoring.hpp"

namespace memlab {

/// Seconds on a monotonic clock. Tests substitute a manual one.
using Clock = std::function<double()>;

inline Clock steady_clock_seconds() {
  return [] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
}

struct ServiceConfig {
  std::filesystem::path data_dir;
  std::uint64_t seed_base = 0;
  ScheduleConfig schedule;  // seed is replaced per session
};

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void append_durable(const std::filesystem::path& path, std::string_view line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  require(fd >= 0, Errc::Io, "cannot open " + path.string());
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0 && errno == EINTR) continue;
    if (n < 0) {
      ::close(fd);
      fail(Errc::Io, "write to " + path.string() + " failed");
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  const int rc = ::fsync(fd);
  ::close(fd);
  require(rc == 0, Errc::Io, "fsync of " + path.string() + " failed");
}

/// Write to a temp file, fsync, then rename over the target.
inline void write_atomic(const std::filesystem::path& path, std::string_view contents) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  std::filesystem::remove(tmp);
  append_durable(tmp, contents);
  std::filesystem::rename(tmp, path);
}

inline Reply json_reply(int status, const nlohmann::json& j) { return {status, j.dump(), "application/json", {}}; }

inline Reply error_reply(int status, std::string_view code, const std::string& message) {
  return json_reply(status, {{"code", code}, {"message", message}});
}

}  // namespace detail

class ExperimentService {
 public:
  ExperimentService(Manifest manifest, ServiceConfig cfg, Clock clock = steady_clock_seconds())
      : manifest_(std::move(manifest)), cfg_(std::move(cfg)), clock_(std::move(clock)) {
    cfg_.schedule.validate();
    for (const auto& c : manifest_.clips) {
      const auto path = manifest_.resolve(c);
      require(std::filesystem::is_regular_file(path), Errc::Io,
              "audio for clip '" + c.id + "' not found at " + path.string());
      clip_paths_.emplace(c.id, path);
    }
    std::filesystem::create_directories(sessions_dir());
    recover();
  }

  ExperimentService(const ExperimentService&) = delete;
  ExperimentService& operator=(const ExperimentService&) = delete;

  // ---- participant endpoints

  Reply create_session(std::string_view body) {
    nlohmann::json req;
    std::string annotator;
    try {
      req = nlohmann::json::parse(body);
      annotator = req.at("annotator_id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      return detail::error_reply(400, "ParseError", std::string("expected {\"annotator_id\": string}: ") + e.what());
    }
    if (annotator.empty()) return detail::error_reply(400, "ValidationError", "annotator_id must be non-empty");

    std::unique_lock lock(map_mu_);
    if (by_annotator_.count(annotator)) {
      return detail::error_reply(409, "Conflict", "annotator '" + annotator + "' already has a session");
    }
    const std::size_t index = order_.size();
    char id[32];
    std::snprintf(id, sizeof id, "s%06zu", index);
    ScheduleConfig sc = cfg_.schedule;
    sc.seed = cfg_.seed_base + index;
    Schedule schedule = generate_schedule(manifest_, sc);

    // files left by a create that crashed before reaching the index were never acknowledged
    for (const char* ext : {".schedule.json", ".jsonl", ".result.json"}) {
      std::filesystem::remove(sessions_dir() / (std::string(id) + ext));
    }
    detail::write_atomic(sessions_dir() / (std::string(id) + ".schedule.json"), serialize_schedule(schedule));
    SessionLog header;
    header.session_id = id;
    header.annotator_id = annotator;
    header.schedule_seed = sc.seed;
    header.n_trials = schedule.size();
    auto log = SessionLogFile::create(log_path(id), header);
    const nlohmann::json entry = {{"annotator_id", annotator}, {"session_id", id}, {"seed", sc.seed}};
    detail::append_durable(index_path(), entry.dump() + "\n");

    auto s = std::make_unique<Session>(std::move(schedule), std::move(log));
    register_tokens(*s);
    const nlohmann::json out = {{"session_id", id}, {"n_trials", s->schedule.size()}, {"n_stages", s->schedule.n_stages()}};
    by_annotator_.emplace(annotator, id);
    order_.push_back(id);
    sessions_.emplace(id, std::move(s));
    return detail::json_reply(201, out);
  }

  Reply next_trial(const std::string& id) {
    Session* s = find(id);
    if (!s) return detail::error_reply(404, "NotFound", "unknown session '" + id + "'");
    std::lock_guard lock(s->mu);
    const std::size_t cursor = s->cursor();
    if (cursor >= s->schedule.size()) return detail::json_reply(200, {{"finished", true}});
    if (const double left = break_remaining(*s); left > 0.0) {
      return detail::json_reply(200, {{"break_remaining_s", left}});
    }
    return detail::json_reply(200, {{"position", cursor}, {"clip_url", "/clips/" + token(id, cursor)}});
  }

  Reply post_answer(const std::string& id, std::string_view body) {
    Session* s = find(id);
    if (!s) return detail::error_reply(404, "NotFound", "unknown session '" + id + "'");
    std::size_t position = 0;
    bool answered = false;
    std::optional<std::int64_t> reaction;
    try {
      const auto req = nlohmann::json::parse(body);
      position = req.at("position").get<std::size_t>();
      answered = req.at("answered_repeat").get<bool>();
      if (auto it = req.find("reaction_ms"); it != req.end() && !it->is_null()) reaction = it->get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
      return detail::error_reply(400, "ParseError", std::string("malformed answer: ") + e.what());
    }
    if (reaction && *reaction < 0) return detail::error_reply(400, "ValidationError", "reaction_ms must be non-negative");

    std::lock_guard lock(s->mu);
    const std::size_t cursor = s->cursor();
    const std::size_t n = s->schedule.size();
    if (cursor >= n) return detail::error_reply(410, "Finished", "session '" + id + "' is finished");
    if (const double left = break_remaining(*s); left > 0.0) {
      auto r = detail::error_reply(423, "OnBreak", "session is on break");
      r.body = nlohmann::json({{"code", "OnBreak"}, {"message", "session is on break"}, {"break_remaining_s", left}}).dump();
      return r;
    }
    if (position != cursor) {
      return detail::error_reply(409, "Conflict",
                                 "expected an answer for position " + std::to_string(cursor) + ", got " +
                                     std::to_string(position));
    }
    const Presentation& p = s->schedule.presentations[position];
    s->log.append({position, p.clip_id, answered, reaction, fatigue_at(s->schedule, position)});
    if (position + 1 == n) {
      write_result(id, *s);
    } else if (is_stage_start(s->schedule, position + 1)) {
      s->break_until = clock_() + cfg_.schedule.break_s;
    }
    return {204, "", "application/json", {}};
  }

  Reply clip(const std::string& tok, const std::string& if_none_match = "") {
    std::string clip_id;
    {
      std::shared_lock lock(map_mu_);
      auto it = tokens_.find(tok);
      if (it == tokens_.end()) return detail::error_reply(404, "NotFound", "unknown clip");
      clip_id = it->second;
    }
    const std::string bytes = clip_bytes(clip_id);
    // per-URL tag so two presentations of one clip cannot be matched by header
    const std::string etag = "\"" + detail::hex64(detail::fnv1a(bytes, detail::fnv1a(tok))) + "\"";
    Reply r{200, bytes, "audio/wav", {{"ETag", etag}, {"Cache-Control", "private, max-age=86400, immutable"}}};
    if (!if_none_match.empty() && if_none_match == etag) {
      r.status = 304;
      r.body.clear();
    }
    return r;
  }

  // ---- admin endpoints

  Reply admin_sessions() {
    nlohmann::json out = nlohmann::json::array();
    std::shared_lock lock(map_mu_);
    for (const auto& id : order_) {
      Session& s = *sessions_.at(id);
      std::lock_guard sl(s.mu);
      const SessionLog& log = s.log.log();
      nlohmann::json row = {{"session_id", id},
                            {"annotator_id", log.annotator_id},
                            {"n_trials", s.schedule.size()},
                            {"answered", log.responses.size()},
                            {"finished", log.completed}};
      try {
        const double acc = vigilance_accuracy(log, s.schedule);
        row["vigilance_accuracy"] = acc;
        row["passed"] = acc >= kVigilanceGate;
      } catch (const Error&) {
        row["vigilance_accuracy"] = nullptr;
        row["passed"] = nullptr;
      }
      out.push_back(row);
    }
    return detail::json_reply(200, out);
  }

  /// Finished sessions passing the vigilance gate, scored together.
  Reply admin_memorability() {
    std::vector<SessionLog> logs;
    std::vector<Schedule> schedules;
    {
      std::shared_lock lock(map_mu_);
      for (const auto& id : order_) {
        Session& s = *sessions_.at(id);
        std::lock_guard sl(s.mu);
        if (!s.log.log().completed) continue;
        logs.push_back(s.log.log());
        schedules.push_back(s.schedule);
      }
    }
    const auto kept = filter_sessions(logs, schedules);
    std::vector<Schedule> kept_schedules;
    for (auto i : kept.kept_indices) kept_schedules.push_back(schedules[i]);
    return {200, table_to_csv(memorability_scores(kept.kept, kept_schedules)), "text/csv", {}};
  }

  /// Routes the endpoints onto an httplib server.
  void mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      for (const auto& [k, v] : r.headers) res.set_header(k, v);
      if (r.status != 204 && r.status != 304) res.set_content(r.body, r.content_type);
    };
    auto guarded = [send](auto fn) {
      return [fn, send](const httplib::Request& req, httplib::Response& res) {
        try {
          send(res, fn(req));
        } catch (const Error& e) {
          send(res, detail::error_reply(e.code() == Errc::Validation || e.code() == Errc::Parse ? 400 : 500,
                                        errc_name(e.code()), e.what()));
        } catch (const std::exception& e) {
          send(res, detail::error_reply(500, "InternalError", e.what()));
        }
      };
    };
    server.Post("/api/sessions", guarded([this](const httplib::Request& req) { return create_session(req.body); }));
    server.Get(R"(/api/sessions/([^/]+)/next)",
               guarded([this](const httplib::Request& req) { return next_trial(req.matches[1]); }));
    server.Post(R"(/api/sessions/([^/]+)/answers)",
                guarded([this](const httplib::Request& req) { return post_answer(req.matches[1], req.body); }));
    server.Get("/api/admin/sessions", guarded([this](const httplib::Request&) { return admin_sessions(); }));
    server.Get("/api/admin/memorability", guarded([this](const httplib::Request&) { return admin_memorability(); }));
    server.Get(R"(/clips/([0-9a-f]+))", guarded([this](const httplib::Request& req) {
                 return clip(req.matches[1], req.get_header_value("If-None-Match"));
               }));
  }

  std::filesystem::path sessions_dir() const { return cfg_.data_dir / "sessions"; }
  std::filesystem::path index_path() const { return cfg_.data_dir / "annotators.jsonl"; }
  std::filesystem::path log_path(const std::string& id) const { return sessions_dir() / (id + ".jsonl"); }
  std::filesystem::path schedule_path(const std::string& id) const { return sessions_dir() / (id + ".schedule.json"); }
  std::filesystem::path result_path(const std::string& id) const { return sessions_dir() / (id + ".result.json"); }

 private:
  struct Session {
    Session(Schedule s, SessionLogFile l) : schedule(std::move(s)), log(std::move(l)) {}
    Schedule schedule;
    SessionLogFile log;
    std::optional<double> break_until;
    std::mutex mu;

    std::size_t cursor() const { return log.log().responses.size(); }
  };

  static bool is_stage_start(const Schedule& s, std::size_t position) {
    return std::find(s.stage_boundaries.begin(), s.stage_boundaries.end(), position) != s.stage_boundaries.end();
  }

  static std::string token(const std::string& id, std::size_t position) {
    return detail::hex64(detail::fnv1a(id + "/" + std::to_string(position)));
  }

  /// Seconds left in the current break; the break restarts in full when the
  /// service comes back up at a stage boundary.
  double break_remaining(Session& s) {
    const std::size_t cursor = s.cursor();
    if (cursor == 0 || !is_stage_start(s.schedule, cursor) || cfg_.schedule.break_s <= 0.0) return 0.0;
    const double now = clock_();
    if (!s.break_until) s.break_until = now + cfg_.schedule.break_s;
    return std::max(0.0, *s.break_until - now);
  }

  Session* find(const std::string& id) {
    std::shared_lock lock(map_mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second.get();
  }

  void register_tokens(const Session& s) {
    for (const auto& p : s.schedule.presentations) tokens_[token(s.log.log().session_id, p.position)] = p.clip_id;
  }

  std::string clip_bytes(const std::string& clip_id) {
    std::lock_guard lock(cache_mu_);
    auto it = clip_cache_.find(clip_id);
    if (it == clip_cache_.end()) it = clip_cache_.emplace(clip_id, read_file(clip_paths_.at(clip_id))).first;
    return it->second;
  }

  void write_result(const std::string& id, const Session& s) {
    nlohmann::json r = {{"session_id", id}};
    try {
      const double acc = vigilance_accuracy(s.log.log(), s.schedule);
      r["vigilance_accuracy"] = acc;
      r["passed"] = acc >= kVigilanceGate;
    } catch (const Error& e) {
      r["vigilance_accuracy"] = nullptr;
      r["passed"] = false;
      r["error"] = errc_name(e.code());
    }
    detail::write_atomic(result_path(id), r.dump() + "\n");
  }

  void recover() {
    if (!std::filesystem::exists(index_path())) return;
    const std::string text = read_file(index_path());
    std::size_t pos = 0;
    while (pos < text.size()) {
      const std::size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) break;  // torn index line: that create was never acknowledged
      const std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        fail(Errc::Parse, "annotator index: " + std::string(e.what()));
      }
      const std::string id = j.at("session_id").get<std::string>();
      const std::string annotator = j.at("annotator_id").get<std::string>();
      Schedule schedule = load_schedule(schedule_path(id));
      auto log = SessionLogFile::open(log_path(id));
      require(log.log().annotator_id == annotator, Errc::Validation, "session '" + id + "' annotator mismatch");
      auto s = std::make_unique<Session>(std::move(schedule), std::move(log));
      register_tokens(*s);
      if (s->cursor() == s->schedule.size() && !std::filesystem::exists(result_path(id))) write_result(id, *s);
      by_annotator_.emplace(annotator, id);
      order_.push_back(id);
      sessions_.emplace(id, std::move(s));
    }
    if (pos < text.size()) std::filesystem::resize_file(index_path(), pos);
  }

  Manifest manifest_;
  ServiceConfig cfg_;
  Clock clock_;
  std::unordered_map<std::string, std::filesystem::path> clip_paths_;

  std::shared_mutex map_mu_;
  std::unordered_map<std::string, std::unique_ptr<Session>> sessions_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::string> by_annotator_;
  std::unordered_map<std::string, std::string> tokens_;

  std::mutex cache_mu_;
  std::unordered_map<std::string, std::string> clip_cache_;
};

}  // namespace memlab
