#include <gtest/gtest.h>

#include <map>
#include <string>

#include "memlab/core.hpp"
#include "memlab/random.hpp"
#include "support/fixtures.hpp"

namespace memlab {
namespace {

using testing::TempDir;

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected memlab::Error";
  return Errc::Io;
}

TEST(Manifest, DefaultCountsMatchTaskTable) {
  TempDir dir;
  const Manifest m = testing::counts_manifest();
  write_file(dir / "m.json", serialize_manifest(m));
  const Manifest back = load_manifest(dir / "m.json");
  EXPECT_EQ(back.clips.size(), 235u);
  EXPECT_EQ(back.counts_by_task.at(TaskType::Filler), 65u);
  EXPECT_EQ(back.counts_by_task.at(TaskType::Vigilance), 21u);
  EXPECT_EQ(back.counts_by_task.at(TaskType::TargetShort), 88u);
  EXPECT_EQ(back.counts_by_task.at(TaskType::TargetMedium), 41u);
  EXPECT_EQ(back.counts_by_task.at(TaskType::TargetLong), 20u);
  EXPECT_EQ(back.base_dir, dir.path());
}

TEST(Manifest, EmptyClipListIsValid) {
  const Manifest m = parse_manifest(R"({"clips": []})");
  EXPECT_TRUE(m.clips.empty());
  for (TaskType t : kAllTaskTypes) EXPECT_EQ(m.counts_by_task.at(t), 0u);
}

TEST(Manifest, RejectsDuplicateIds) {
  const char* doc = R"({"clips": [
    {"id":"a","audio_path":"a.wav","duration_s":5.0,"task_type":"Filler"},
    {"id":"a","audio_path":"b.wav","duration_s":5.0,"task_type":"Vigilance"}]})";
  EXPECT_EQ(code_of([&] { parse_manifest(doc); }), Errc::Validation);
}

TEST(Manifest, RejectsBadDurationAndTaskType) {
  EXPECT_EQ(code_of([] {
              parse_manifest(R"({"clips":[{"id":"a","audio_path":"a","duration_s":5.06,"task_type":"Filler"}]})");
            }),
            Errc::Validation);
  EXPECT_NO_THROW(
      parse_manifest(R"({"clips":[{"id":"a","audio_path":"a","duration_s":4.95,"task_type":"Filler"}]})"));
  EXPECT_EQ(code_of([] {
              parse_manifest(R"({"clips":[{"id":"a","audio_path":"a","duration_s":5,"task_type":"Target"}]})");
            }),
            Errc::Validation);
}

TEST(Manifest, MalformedIsParseError) {
  EXPECT_EQ(code_of([] { parse_manifest("{not json"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { parse_manifest(R"({"clip": []})"); }), Errc::Parse);
  EXPECT_EQ(code_of([] { parse_manifest(R"({"clips": [{"id": "a"}]})"); }), Errc::Parse);
}

TEST(Manifest, CountsEqualBruteForceRecount) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<AudioClip> clips;
    const std::size_t n = uniform_index(rng, 60);
    for (std::size_t i = 0; i < n; ++i) {
      clips.push_back({"c" + std::to_string(i), "x.wav", 5.0, kAllTaskTypes[uniform_index(rng, 5)], {}, {}});
    }
    const Manifest m = make_manifest(clips);
    for (TaskType t : kAllTaskTypes) {
      std::size_t brute = 0;
      for (const auto& c : clips) brute += c.task_type == t ? 1 : 0;
      EXPECT_EQ(m.counts_by_task.at(t), brute);
    }
  }
}

AudioClip random_clip(Rng& rng, std::size_t i) {
  AudioClip c;
  c.id = "clip-" + std::to_string(i) + (uniform_index(rng, 2) ? "\"q\"" : "");
  c.audio_path = "dir/" + std::to_string(uniform_index(rng, 1000)) + ".wav";
  c.duration_s = uniform_real(rng, 4.95, 5.05);
  c.task_type = kAllTaskTypes[uniform_index(rng, 5)];
  if (uniform_index(rng, 2)) c.source_location = uniform_index(rng, 2) ? "Taiwan" : "Côte d'Ivoire";
  if (uniform_index(rng, 2)) c.source_views = static_cast<std::int64_t>(rng() >> 20);
  return c;
}

TEST(Serialization, ManifestRoundTripProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<AudioClip> clips;
    const std::size_t n = uniform_index(rng, 20);
    for (std::size_t i = 0; i < n; ++i) clips.push_back(random_clip(rng, i));
    const Manifest m = make_manifest(clips);
    const Manifest back = parse_manifest(serialize_manifest(m));
    EXPECT_EQ(back.clips, m.clips);
    EXPECT_EQ(back.counts_by_task, m.counts_by_task);
  }
}

SessionLog random_log(Rng& rng) {
  SessionLog log;
  log.session_id = "s" + std::to_string(rng() % 1000);
  log.annotator_id = "annotator \"" + std::to_string(rng() % 1000) + "\"";
  log.schedule_seed = rng();
  if (uniform_index(rng, 2)) log.n_trials = 1000;
  std::size_t pos = uniform_index(rng, 3);
  const std::size_t n = uniform_index(rng, 40);
  for (std::size_t i = 0; i < n; ++i) {
    ResponseRecord r;
    r.position = pos;
    r.clip_id = "c" + std::to_string(uniform_index(rng, 300));
    r.answered_repeat = uniform_index(rng, 2) == 1;
    if (uniform_index(rng, 4)) r.reaction_ms = static_cast<std::int64_t>(uniform_index(rng, 5000));
    r.fatigue = uniform_index(rng, 200);
    log = append_response(std::move(log), r);
    pos += 1 + uniform_index(rng, 3);
  }
  return log;
}

TEST(Serialization, SessionLogRoundTripProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const SessionLog log = random_log(rng);
    EXPECT_EQ(parse_log(serialize_log(log)), log);
  }
}

TEST(SessionLog, AppendToEmpty) {
  const SessionLog log = append_response({}, {0, "a", true, 300, 1});
  EXPECT_EQ(log.responses.size(), 1u);
}

TEST(SessionLog, DuplicatePositionIsOrderError) {
  SessionLog log;
  log = append_response(log, {0, "a", false, {}, 1});
  log = append_response(log, {1, "b", false, {}, 2});
  EXPECT_EQ(code_of([&] { append_response(log, {1, "c", true, {}, 3}); }), Errc::Order);
}

TEST(SessionLog, CompletedDerivedFromTrialCount) {
  SessionLog log;
  log.n_trials = 2;
  log = append_response(log, {0, "a", false, {}, 1});
  EXPECT_FALSE(log.completed);
  log = append_response(log, {1, "b", false, {}, 2});
  EXPECT_TRUE(log.completed);
  EXPECT_EQ(code_of([&] { append_response(log, {2, "c", false, {}, 3}); }), Errc::Order);
}

TEST(SessionLogFile, DurableRoundTripOf405Records) {
  TempDir dir;
  const auto path = dir / "s1.jsonl";
  SessionLog header{"s1", "ann", 42, 405, {}, false};
  {
    auto f = SessionLogFile::create(path, header);
    Rng rng(9);
    for (std::size_t p = 0; p < 405; ++p) {
      f.append({p, "clip" + std::to_string(uniform_index(rng, 235)), uniform_index(rng, 2) == 1,
                static_cast<std::int64_t>(uniform_index(rng, 3000)), p % 135 + 1});
    }
    EXPECT_TRUE(f.log().completed);
  }
  const std::string bytes = read_file(path);
  const SessionLog back = load_session_log(path);
  EXPECT_EQ(back.responses.size(), 405u);
  EXPECT_TRUE(back.completed);
  EXPECT_EQ(serialize_log(back), bytes);
}

TEST(SessionLogFile, TornTailIsDroppedOnReopen) {
  TempDir dir;
  const auto path = dir / "s2.jsonl";
  {
    auto f = SessionLogFile::create(path, {"s2", "ann", 1, std::nullopt, {}, false});
    f.append({0, "a", true, 10, 1});
    f.append({1, "b", false, 10, 2});
  }
  {
    std::ofstream out(path, std::ios::app);
    out << R"({"position":2,"clip_id":"c","answ)";
  }
  auto f = SessionLogFile::open(path);
  EXPECT_EQ(f.log().responses.size(), 2u);
  f.append({2, "c", true, 5, 3});
  EXPECT_EQ(load_session_log(path).responses.size(), 3u);
}

TEST(SessionLogFile, RefusesOutOfOrderAppend) {
  TempDir dir;
  auto f = SessionLogFile::create(dir / "s.jsonl", {"s", "a", 0, std::nullopt, {}, false});
  f.append({3, "a", true, {}, 1});
  EXPECT_EQ(code_of([&] { f.append({3, "a", true, {}, 1}); }), Errc::Order);
  EXPECT_EQ(load_session_log(dir / "s.jsonl").responses.size(), 1u);
}

TEST(SessionLog, CorruptMiddleLineIsParseError) {
  const std::string text = "{\"session_id\":\"s\",\"annotator_id\":\"a\",\"schedule_seed\":1}\n{oops}\n";
  EXPECT_EQ(code_of([&] { parse_log(text); }), Errc::Parse);
}

}  // namespace
}  // namespace memlab
