#pragma once

// Shared builders for unit and acceptance tests.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "memlab/core.hpp"
#include "memlab/dsp/wav.hpp"
#include "memlab/random.hpp"
#include "memlab/scheduler.hpp"

namespace memlab::testing {

struct Counts {
  std::size_t filler = 65;
  std::size_t vigilance = 21;
  std::size_t target_short = 88;
  std::size_t target_medium = 41;
  std::size_t target_long = 20;
};

inline Manifest counts_manifest(const Counts& c = {}) {
  std::vector<AudioClip> clips;
  auto add = [&](std::size_t n, TaskType t, const char* prefix) {
    for (std::size_t i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s%03zu", prefix, i);
      clips.push_back({id, std::string("clips/") + id + ".wav", 5.0, t, std::nullopt, std::nullopt});
    }
  };
  add(c.filler, TaskType::Filler, "fil");
  add(c.vigilance, TaskType::Vigilance, "vig");
  add(c.target_short, TaskType::TargetShort, "ts");
  add(c.target_medium, TaskType::TargetMedium, "tm");
  add(c.target_long, TaskType::TargetLong, "tl");
  return make_manifest(std::move(clips));
}

/// Decides an annotator's answer at one presentation.
using AnswerFn = std::function<bool(std::size_t annotator, const Presentation&, Rng&)>;

struct Population {
  std::vector<SessionLog> logs;
  std::vector<Schedule> schedules;
};

/// One complete session per annotator, each with its own schedule seed.
inline Population simulate_population(const Manifest& m, std::size_t n_annotators, std::uint64_t seed,
                                      const AnswerFn& answer, ScheduleConfig cfg = {}) {
  Population pop;
  Rng rng(seed);
  for (std::size_t a = 0; a < n_annotators; ++a) {
    cfg.seed = seed * 1000003ULL + a;
    Schedule s = generate_schedule(m, cfg);
    SessionLog log;
    log.session_id = "sess" + std::to_string(a);
    log.annotator_id = "ann" + std::to_string(a);
    log.schedule_seed = cfg.seed;
    log.n_trials = s.size();
    for (const auto& p : s.presentations) {
      log = append_response(std::move(log), {p.position, p.clip_id, answer(a, p, rng),
                                             static_cast<std::int64_t>(uniform_index(rng, 2000)),
                                             fatigue_at(s, p.position)});
    }
    pop.logs.push_back(std::move(log));
    pop.schedules.push_back(std::move(s));
  }
  return pop;
}

/// Writes a short distinct tone for every clip so services can serve them.
inline Manifest with_audio_files(Manifest m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "clips");
  for (std::size_t i = 0; i < m.clips.size(); ++i) {
    dsp::Waveform w;
    w.sample_rate = 8000;
    for (int t = 0; t < 400; ++t) w.samples.push_back(0.3 * std::sin(0.01 * static_cast<double>((i + 1) * t)));
    dsp::save_wav(dir / m.clips[i].audio_path, w);
  }
  m.base_dir = dir;
  return m;
}

/// 18 presentations in three stages of 6, with intervals short enough to fit.
inline Counts tiny_counts() { return {6, 3, 3, 0, 0}; }

inline ScheduleConfig tiny_schedule_config() {
  ScheduleConfig cfg;
  cfg.interval_range[TaskType::Vigilance] = {1, 4};
  cfg.interval_range[TaskType::TargetShort] = {2, 8};
  return cfg;
}

/// Creates a unique temporary directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "memlab-XXXXXX").string();
    require(::mkdtemp(tmpl.data()) != nullptr, Errc::Io, "mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace memlab::testing
