#include <gtest/gtest.h>

#include "memlab/app.hpp"
#include "memlab/explain.hpp"
#include "memlab/service.hpp"
#include "support/fixtures.hpp"
#include "support/process.hpp"
#include "support/synth.hpp"

using namespace memlab;
using json = nlohmann::json;
using memlab::testing::ProcResult;
using memlab::testing::TempDir;
namespace fs = std::filesystem;

namespace {

ProcResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), MEMLAB_CLI);
  return memlab::testing::run_process(args);
}

std::string p(const fs::path& path) { return path.string(); }

json error_line(const ProcResult& r) {
  const auto at = r.err.find("error: ");
  if (at == std::string::npos) return json();
  return json::parse(r.err.substr(at + 7, r.err.find('\n', at) - at - 7));
}

/// Random 40-wide feature table whose label is driven by two columns.
std::pair<FeatureTable, std::string> planted_features(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  FeatureTable t;
  t.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kFeatureCount));
  std::string labels = "clip_id,score,n,false_alarm_rate\n";
  for (std::size_t i = 0; i < n; ++i) {
    t.clip_ids.push_back("c" + std::to_string(i));
    for (std::size_t j = 0; j < kFeatureCount; ++j)
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = standard_normal(rng);
    const double y = 0.5 + 0.1 * t.values(static_cast<Eigen::Index>(i), kBpm) +
                     0.08 * t.values(static_cast<Eigen::Index>(i), kArousal);
    labels += t.clip_ids.back() + "," + csv::format_double(y) + ",10,0\n";
  }
  return {t, labels};
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).status, 2);
  EXPECT_EQ(cli({"frobnicate"}).status, 2);
  EXPECT_EQ(cli({"schedule"}).status, 2);
  EXPECT_EQ(cli({"schedule", "--manifest", "m.json", "--seed", "abc"}).status, 2);
  EXPECT_EQ(cli({"evaluate", "--features", "f.csv"}).status, 2);
  EXPECT_EQ(cli({"train"}).status, 2);
  EXPECT_EQ(cli({"--help"}).status, 0);
}

TEST(Cli, DomainErrorsExitOneWithMachineReadableLine) {
  TempDir dir;
  auto r = cli({"schedule", "--manifest", p(dir / "missing.json")});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_line(r)["code"], "IoError");

  write_file(dir / "dup.json", R"({"clips":[{"id":"a","audio_path":"a.wav","duration_s":5,"task_type":"filler"},)"
                               R"({"id":"a","audio_path":"b.wav","duration_s":5,"task_type":"filler"}]})");
  r = cli({"schedule", "--manifest", p(dir / "dup.json")});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_line(r)["code"], "ValidationError");
  EXPECT_FALSE(error_line(r)["message"].get<std::string>().empty());

  write_file(dir / "bad.csv", "clip_id,tempo\nx,1\n");
  write_file(dir / "labels.csv", "clip_id,score\nx,0.5\n");
  r = cli({"evaluate", "--features", p(dir / "bad.csv"), "--labels", p(dir / "labels.csv")});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_line(r)["code"], "InconsistentFeaturesError");
}

TEST(Cli, ScheduleIsDeterministicAndMatchesLibrary) {
  TempDir dir;
  const Manifest m = memlab::testing::counts_manifest();
  write_file(dir / "m.json", serialize_manifest(m));
  const auto a = cli({"schedule", "--manifest", p(dir / "m.json"), "--seed", "7"});
  const auto b = cli({"schedule", "--manifest", p(dir / "m.json"), "--seed", "7"});
  ASSERT_EQ(a.status, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  ScheduleConfig cfg;
  cfg.seed = 7;
  EXPECT_EQ(a.out, serialize_schedule(generate_schedule(m, cfg)));
  EXPECT_EQ(parse_schedule(a.out).size(), 405u);
  ASSERT_EQ(cli({"schedule", "--manifest", p(dir / "m.json"), "--seed", "7", "--out", p(dir / "s.json")}).status, 0);
  EXPECT_EQ(read_file(dir / "s.json"), a.out);
}

TEST(Cli, ScoreMatchesLibraryCall) {
  TempDir dir;
  const Manifest m = memlab::testing::counts_manifest();
  // annotator 0 ignores everything and fails the vigilance gate
  const auto pop = memlab::testing::simulate_population(m, 8, 3, [](std::size_t a, const Presentation& pr, Rng& rng) {
    return a != 0 && pr.is_repeat && uniform01(rng) < 0.8;
  });
  fs::create_directories(dir / "logs");
  fs::create_directories(dir / "schedules");
  for (std::size_t i = 0; i < pop.logs.size(); ++i) {
    write_file(dir / "logs" / (pop.logs[i].session_id + ".jsonl"), serialize_log(pop.logs[i]));
    write_file(dir / "schedules" / (pop.logs[i].session_id + ".schedule.json"), serialize_schedule(pop.schedules[i]));
  }
  const auto r = cli({"score", "--logs", p(dir / "logs"), "--schedules", p(dir / "schedules"), "--summary",
                      p(dir / "summary.json")});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto filtered = filter_sessions(pop.logs, pop.schedules);
  std::vector<Schedule> kept;
  for (auto i : filtered.kept_indices) kept.push_back(pop.schedules[i]);
  EXPECT_EQ(r.out, table_to_csv(memorability_scores(filtered.kept, kept)));
  const auto s = json::parse(read_file(dir / "summary.json"));
  EXPECT_EQ(s["sessions"], 8);
  EXPECT_EQ(s["kept"], 7);
  EXPECT_EQ(s["below_threshold"], 1);
  EXPECT_DOUBLE_EQ(s["split_half_rho"].get<double>(), split_half_consistency(filtered.kept, kept, 25, 0).mean_rho);
}

TEST(Cli, ExtractWritesStableFeatureTable) {
  TempDir dir;
  std::vector<AudioClip> clips;
  for (int bpm : {90, 120}) {
    const std::string id = "clip" + std::to_string(bpm);
    dsp::save_wav(dir / (id + ".wav"), memlab::testing::click_track(bpm, 5.0));
    fs::create_directories(dir / "stems" / id);
    dsp::save_wav(dir / "stems" / id / "drums.wav", memlab::testing::click_track(bpm, 5.0));
    clips.push_back({id, id + ".wav", 5.0, TaskType::Filler, std::nullopt, std::nullopt});
  }
  fs::create_directories(dir / "tags");
  write_file(dir / "tags" / "clip90.tags.json", R"({"Music": 0.75, "Musical Instrument": 0.5})");
  write_file(dir / "m.json", serialize_manifest(make_manifest(clips)));
  const std::vector<std::string> args = {"extract", "--manifest", p(dir / "m.json"), "--stems-dir", p(dir / "stems"),
                                         "--tags-dir", p(dir / "tags")};
  auto strict = cli(args);
  EXPECT_EQ(strict.status, 1);
  EXPECT_EQ(error_line(strict)["code"], "MissingSidecarError");

  auto with_defaults = args;
  with_defaults.push_back("--allow-default-tags");
  const auto a = cli(with_defaults);
  const auto b = cli(with_defaults);
  ASSERT_EQ(a.status, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.err.find("warning: "), std::string::npos);
  const auto t = parse_feature_csv(a.out);
  ASSERT_EQ(t.clip_ids, (std::vector<std::string>{"clip90", "clip120"}));
  EXPECT_EQ(t.values.cols(), 40);
  EXPECT_NEAR(t.values(0, kBpm), 90.0, 2.0);
  EXPECT_NEAR(t.values(1, kBpm), 120.0, 2.0);
  EXPECT_EQ(t.values(0, kTagMusic), 0.75);
  EXPECT_EQ(t.values(1, kTagMusic), 1.0);
  EXPECT_EQ(t.values(0, kValence), 0.5);
}

TEST(Cli, MoodModelTrainedAndUsedByExtract) {
  TempDir dir;
  Rng rng(4);
  std::vector<std::string> header = mood_input_names();
  header.push_back("valence");
  header.push_back("arousal");
  std::string text = csv::join_row(header);
  for (int i = 0; i < 40; ++i) {
    std::vector<std::string> row;
    double first = 0.0;
    for (std::size_t j = 0; j < kMoodInputCount; ++j) {
      const double v = standard_normal(rng);
      if (j == 0) first = v;
      row.push_back(csv::format_double(v));
    }
    row.push_back(csv::format_double(0.5 + 0.1 * std::tanh(first)));
    row.push_back(csv::format_double(0.5 - 0.1 * std::tanh(first)));
    text += csv::join_row(row);
  }
  write_file(dir / "mood.csv", text);
  const auto r = cli({"train", "--mood-data", p(dir / "mood.csv"), "--out", p(dir / "mood.json")});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto mood = mood_from_json(json::parse(read_file(dir / "mood.json")));
  const auto d = parse_mood_training_csv(text);
  const Vector x = d.X.row(3).transpose();
  EXPECT_NEAR(mood.predict(x).first, d.valence(3), 0.03);

  dsp::save_wav(dir / "a.wav", memlab::testing::sine(440, 5.0));
  fs::create_directories(dir / "stems" / "a");
  dsp::save_wav(dir / "stems" / "a" / "other.wav", memlab::testing::sine(440, 5.0));
  write_file(dir / "m.json", serialize_manifest(make_manifest({{"a", "a.wav", 5.0, TaskType::Filler, {}, {}}})));
  const auto e = cli({"extract", "--manifest", p(dir / "m.json"), "--stems-dir", p(dir / "stems"), "--tags-dir",
                      p(dir.path()), "--allow-default-tags", "--mood", p(dir / "mood.json")});
  ASSERT_EQ(e.status, 0) << e.err;
  const auto t = parse_feature_csv(e.out);
  std::array<double, kFeatureCount> v{};
  for (std::size_t j = 0; j < kFeatureCount; ++j) v[j] = t.values(0, static_cast<Eigen::Index>(j));
  EXPECT_EQ(v[kValence], mood.predict(mood_inputs(v)).first);
}

TEST(Cli, TrainEvaluateExplain) {
  TempDir dir;
  const auto [table, labels] = planted_features(120, 9);
  write_file(dir / "f.csv", features_to_csv(table));
  write_file(dir / "y.csv", labels);

  const auto ev = cli({"evaluate", "--features", p(dir / "f.csv"), "--labels", p(dir / "y.csv"), "--model",
                       "svr-linear", "--k", "5", "--folds", "10", "--epsilon", "0.01"});
  ASSERT_EQ(ev.status, 0) << ev.err;
  const auto rep = csv::parse_table(ev.out);
  ASSERT_EQ(rep.rows.size(), 12u);
  EXPECT_EQ(rep.rows[10][0], "mean");
  EXPECT_GT(csv::parse_double(rep.rows[10][rep.column("spearman")]), 0.9);

  const auto tr = cli({"train", "--features", p(dir / "f.csv"), "--labels", p(dir / "y.csv"), "--model", "svr",
                       "--k", "5", "--out", p(dir / "model.json")});
  ASSERT_EQ(tr.status, 0) << tr.err;
  const auto model = pipeline_from_json(json::parse(read_file(dir / "model.json")));
  EXPECT_EQ(model.kind, ModelKind::SvrRbf);
  EXPECT_EQ(model.selected.size(), 5u);

  const auto ex = cli({"explain", "--model", p(dir / "model.json"), "--features", p(dir / "f.csv"), "--ranking",
                       p(dir / "rank.csv"), "--background-rows", "20"});
  ASSERT_EQ(ex.status, 0) << ex.err;
  const auto scatter = csv::parse_table(ex.out);
  EXPECT_EQ(scatter.header, (csv::Row{"feature", "sample_index", "feature_value", "phi"}));
  EXPECT_EQ(scatter.rows.size(), 5u * 120u);
  const auto rank = csv::parse_table(read_file(dir / "rank.csv"));
  EXPECT_EQ(rank.rows[0][0], "bpm");
  EXPECT_EQ(rank.rows[0][2], "1");
  EXPECT_EQ(rank.rows[1][0], "arousal");
}

TEST(Cli, AugmentWritesFourCopiesPerClip) {
  TempDir dir;
  dsp::save_wav(dir / "a.wav", memlab::testing::click_track(100, 5.0));
  dsp::save_wav(dir / "b.wav", memlab::testing::sine(330, 5.0));
  write_file(dir / "m.json", serialize_manifest(make_manifest({{"a", "a.wav", 5.0, TaskType::Filler, {}, {}},
                                                               {"b", "b.wav", 5.0, TaskType::TargetLong, {}, {}}})));
  const auto r = cli({"augment", "--manifest", p(dir / "m.json"), "--out-dir", p(dir / "aug"), "--seed", "3"});
  ASSERT_EQ(r.status, 0) << r.err;
  const Manifest out = load_manifest(dir / "aug" / "manifest.json");
  ASSERT_EQ(out.clips.size(), 8u);
  for (const auto& c : out.clips) {
    EXPECT_NE(augmented_source(c.id), c.id);
    EXPECT_NEAR(c.duration_s, 5.0, 0.05);
    EXPECT_TRUE(fs::exists(out.resolve(c)));
  }
  EXPECT_EQ(out.clips[4].task_type, TaskType::TargetLong);
  const auto params = json::parse(read_file(dir / "aug" / "augmentations.json"));
  const int semis = params[0]["params"]["semitones"].get<int>();
  EXPECT_TRUE(semis != 0 && std::abs(semis) <= 5);
  const auto again = cli({"augment", "--manifest", p(dir / "m.json"), "--out-dir", p(dir / "aug2"), "--seed", "3"});
  ASSERT_EQ(again.status, 0);
  EXPECT_EQ(read_file(dir / "aug2" / "augmentations.json"), read_file(dir / "aug" / "augmentations.json"));
}

TEST(Cli, AugmentedFeaturesFeedEvaluation) {
  TempDir dir;
  auto [table, labels] = planted_features(60, 2);
  FeatureTable aug;
  aug.values.resize(120, kFeatureCount);
  for (std::size_t i = 0; i < 60; ++i) {
    for (int k = 0; k < 2; ++k) {
      aug.clip_ids.push_back(augmented_id(table.clip_ids[i], k == 0 ? "pitch" : "reverb"));
      aug.values.row(static_cast<Eigen::Index>(2 * i + k)) = table.values.row(static_cast<Eigen::Index>(i));
    }
  }
  write_file(dir / "f.csv", features_to_csv(table));
  write_file(dir / "a.csv", features_to_csv(aug));
  write_file(dir / "y.csv", labels);
  const auto r = cli({"evaluate", "--features", p(dir / "f.csv"), "--labels", p(dir / "y.csv"), "--augmented",
                      p(dir / "a.csv"), "--folds", "5", "--k", "3"});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(csv::parse_table(r.out).rows.size(), 7u);
}

TEST(Cli, ServeAnswersOverHttp) {
  TempDir dir;
  const Manifest m = memlab::testing::with_audio_files(
      memlab::testing::counts_manifest(memlab::testing::tiny_counts()), dir / "audio");
  write_file(dir / "audio" / "m.json", serialize_manifest(m));
  memlab::testing::ServerProcess server({MEMLAB_CLI, "serve", "--manifest", p(dir / "audio" / "m.json"), "--data-dir",
                                         p(dir / "data"), "--port", "0", "--seed-base", "5"});
  httplib::Client c("127.0.0.1", server.port());
  const auto res = c.Post("/api/sessions", R"({"annotator_id":"x"})", "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 201);
  const auto id = json::parse(res->body)["session_id"].get<std::string>();
  EXPECT_EQ(json::parse(res->body)["n_trials"], 18);
  const auto next = json::parse(c.Get("/api/sessions/" + id + "/next")->body);
  EXPECT_EQ(next["position"], 0);
  const auto wav = c.Get(next["clip_url"].get<std::string>());
  ASSERT_TRUE(wav);
  EXPECT_EQ(wav->status, 200);
  EXPECT_EQ(wav->get_header_value("Content-Type"), "audio/wav");
  EXPECT_EQ(c.Post("/api/sessions/" + id + "/answers", R"({"position":0,"answered_repeat":false,"reaction_ms":0})",
                   "application/json")->status, 204);
  EXPECT_EQ(json::parse(c.Get("/api/admin/sessions")->body)[0]["answered"], 1);
  EXPECT_EQ(c.Get("/api/sessions/nope/next")->status, 404);
  EXPECT_EQ(server.kill(SIGTERM), 0);
}
